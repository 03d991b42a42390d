// SPDX-License-Identifier: Apache-2.0

#include "pact/tcp_transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <thread>

namespace pact {

namespace {

[[noreturn]] void link_error(const std::string& what) {
  raise(Errc::LinkError, what + " (" + std::strerror(errno) + ")");
}

void write_all(int fd, const void* data, size_t len) {
  const char* p = static_cast<const char*>(data);
  while (len > 0) {
    const ssize_t n = ::write(fd, p, len);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      link_error("tcp write failed");
    }
    p += n;
    len -= static_cast<size_t>(n);
  }
}

void read_all(int fd, void* data, size_t len) {
  char* p = static_cast<char*>(data);
  while (len > 0) {
    const ssize_t n = ::read(fd, p, len);
    if (n == 0) raise(Errc::LinkError, "peer closed connection mid-frame");
    if (n < 0) {
      if (errno == EINTR) continue;
      link_error("tcp read failed");
    }
    p += n;
    len -= static_cast<size_t>(n);
  }
}

}  // namespace

void tcp_send_frame(int fd, const std::vector<std::byte>& payload) {
  uint8_t hdr[8];
  const uint64_t len = payload.size();
  for (int i = 0; i < 8; ++i) hdr[i] = static_cast<uint8_t>((len >> (8 * i)) & 0xff);
  write_all(fd, hdr, 8);
  if (len > 0) write_all(fd, payload.data(), payload.size());
}

std::vector<std::byte> tcp_recv_frame(int fd) {
  uint8_t hdr[8];
  read_all(fd, hdr, 8);
  uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<uint64_t>(hdr[i]) << (8 * i);
  if (len > (uint64_t{1} << 32)) raise(Errc::CorruptPayload, "implausible frame length");
  std::vector<std::byte> out(len);
  if (len > 0) read_all(fd, out.data(), len);
  return out;
}

TcpListener::TcpListener(uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) link_error("socket() failed");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
    link_error("bind() failed");
  if (::listen(fd_, 8) != 0) link_error("listen() failed");

  socklen_t len = sizeof(addr);
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0)
    link_error("getsockname() failed");
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

TcpListener::TcpListener(TcpListener&& o) noexcept : fd_(o.fd_), port_(o.port_) { o.fd_ = -1; }

TcpListener& TcpListener::operator=(TcpListener&& o) noexcept {
  if (this != &o) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = o.fd_;
    port_ = o.port_;
    o.fd_ = -1;
  }
  return *this;
}

int TcpListener::accept_one(double timeout_s) const {
  pollfd pfd{fd_, POLLIN, 0};
  const int rc = ::poll(&pfd, 1, static_cast<int>(timeout_s * 1000));
  if (rc == 0) raise(Errc::LinkError, "accept timed out waiting for ring predecessor");
  if (rc < 0) link_error("poll() failed");
  const int conn = ::accept(fd_, nullptr, nullptr);
  if (conn < 0) link_error("accept() failed");
  int one = 1;
  ::setsockopt(conn, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return conn;
}

namespace {

int connect_with_deadline(const std::string& host, uint16_t port, double timeout_s) {
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(timeout_s));
  for (;;) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) link_error("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd);
      raise(Errc::LinkError, "bad peer address " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return fd;
    }
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline)
      raise(Errc::LinkError, "connect to peer " + host + ":" + std::to_string(port) +
                                 " timed out after " + std::to_string(timeout_s) + "s");
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
}

}  // namespace

TcpTransport::TcpTransport(const TcpListener& listener, const std::string& next_host,
                           uint16_t next_port, double timeout_s) {
  out_fd_ = connect_with_deadline(next_host, next_port, timeout_s);
  try {
    in_fd_ = listener.accept_one(timeout_s);
  } catch (...) {
    ::close(out_fd_);
    throw;
  }
}

TcpTransport::~TcpTransport() {
  if (out_fd_ >= 0) ::close(out_fd_);
  if (in_fd_ >= 0) ::close(in_fd_);
}

void TcpTransport::send_next(const std::vector<std::byte>& payload) {
  tcp_send_frame(out_fd_, payload);
}

std::vector<std::byte> TcpTransport::recv_prev() { return tcp_recv_frame(in_fd_); }

}  // namespace pact
