// SPDX-License-Identifier: Apache-2.0
//
// Framed TCP ring transport: u64 little-endian length prefix, then bytes.
// Connect timeout is short and there are no retries after establishment —
// experiments fail fast instead of limping.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pact/collective.hpp"

namespace pact {

/// RAII listening socket on 127.0.0.1 (port 0 picks an ephemeral port).
/// Created before fork in multi-process runs so children inherit the fd and
/// no bind race exists.
class TcpListener {
 public:
  explicit TcpListener(uint16_t port = 0);
  ~TcpListener();

  TcpListener(TcpListener&& o) noexcept;
  TcpListener& operator=(TcpListener&& o) noexcept;
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  uint16_t port() const { return port_; }
  int accept_one(double timeout_s) const;  // returns a connected fd

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

class TcpTransport : public Transport {
 public:
  /// Establishes this worker's ring edges: connects to the successor at
  /// `next_host:next_port` (retrying until `timeout_s`), then accepts the
  /// predecessor's connection on `listener`.
  TcpTransport(const TcpListener& listener, const std::string& next_host, uint16_t next_port,
               double timeout_s = 5.0);
  ~TcpTransport() override;

  void send_next(const std::vector<std::byte>& payload) override;
  std::vector<std::byte> recv_prev() override;

 private:
  int out_fd_ = -1;  // to ring successor
  int in_fd_ = -1;   // from ring predecessor
};

/// Blocking framed echo against an already-connected fd pair; exposed for
/// transport-level tests.
void tcp_send_frame(int fd, const std::vector<std::byte>& payload);
std::vector<std::byte> tcp_recv_frame(int fd);

}  // namespace pact
