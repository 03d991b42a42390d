// SPDX-License-Identifier: Apache-2.0

#include "pact/collective.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <numeric>

namespace pact {

WorkerTopology WorkerTopology::uniform(int n, LinkModel link) {
  WorkerTopology t;
  t.n = n;
  t.ring.resize(n);
  std::iota(t.ring.begin(), t.ring.end(), 0);
  t.links.assign(n, link);
  t.validate();
  return t;
}

void WorkerTopology::validate() const {
  if (n < 2) raise(Errc::BadTopology, "need at least 2 workers, got " + std::to_string(n));
  if (static_cast<int>(ring.size()) != n || static_cast<int>(links.size()) != n)
    raise(Errc::BadTopology, "ring/link arrays must have n entries");
  std::vector<bool> seen(n, false);
  for (int r : ring) {
    if (r < 0 || r >= n || seen[r]) raise(Errc::BadTopology, "ring is not a permutation of ranks");
    seen[r] = true;
  }
  for (const auto& l : links) {
    if (!(l.bandwidth_bps > 0)) raise(Errc::BadTopology, "link bandwidth must be positive");
    if (l.latency_s < 0) raise(Errc::BadTopology, "link latency must be non-negative");
  }
}

int WorkerTopology::position_of(int rank) const {
  for (int i = 0; i < n; ++i)
    if (ring[i] == rank) return i;
  raise(Errc::BadTopology, "rank " + std::to_string(rank) + " not in ring");
}

double simulate_transfer(uint64_t bytes, const LinkModel& link, VirtualClock& clock) {
  const double elapsed = link.latency_s + static_cast<double>(bytes) * 8.0 / link.bandwidth_bps;
  clock.advance(elapsed);
  return elapsed;
}

const char* sync_mode_name(SyncMode m) {
  switch (m) {
    case SyncMode::FullAllReduce: return "Full";
    case SyncMode::PackedAllReduce: return "Packed";
    case SyncMode::TernaryAllGather: return "Ternary";
    case SyncMode::TopKAllGather: return "TopK";
    case SyncMode::Fp16AllReduce: return "FP16";
  }
  return "?";
}

SyncMode decide_sync_mode(SyncMode requested, TrackerStatus tracker) {
  if ((requested == SyncMode::PackedAllReduce || requested == SyncMode::TernaryAllGather) &&
      tracker != TrackerStatus::Stable)
    return SyncMode::FullAllReduce;
  return requested;
}

Comm::Comm(WorkerTopology topo, int rank, std::shared_ptr<Transport> transport)
    : topo_(std::move(topo)), rank_(rank), transport_(std::move(transport)) {
  topo_.validate();
  position_ = topo_.position_of(rank_);
}

void Comm::account_round(std::span<const uint64_t> bytes_per_link) {
  double dt = 0.0;
  for (int i = 0; i < topo_.n; ++i) {
    const LinkModel& l = topo_.links[i];
    dt = std::max(dt, l.latency_s + static_cast<double>(bytes_per_link[i]) * 8.0 / l.bandwidth_bps);
  }
  clock_.advance(dt);
  bytes_sent_ += bytes_per_link[position_];
}

// ---------------------------------------------------------------------------
// Ring allreduce
// ---------------------------------------------------------------------------

namespace {

inline int mod(int a, int n) { return ((a % n) + n) % n; }

struct ChunkMap {
  size_t len, chunk;
  explicit ChunkMap(size_t len_, int n) : len(len_), chunk((len_ + n - 1) / n) {}
  size_t begin(int c) const { return std::min(len, static_cast<size_t>(c) * chunk); }
  size_t end(int c) const { return std::min(len, (static_cast<size_t>(c) + 1) * chunk); }
  size_t elems(int c) const { return end(c) - begin(c); }
};

// f32 wire chunks, explicit little-endian
struct F32Wire {
  static constexpr size_t elem_bytes = 4;

  static std::vector<std::byte> encode(std::span<const float> chunk) {
    std::vector<std::byte> out(chunk.size() * 4);
    for (size_t i = 0; i < chunk.size(); ++i) {
      uint32_t bits;
      std::memcpy(&bits, &chunk[i], 4);
      for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<std::byte>((bits >> (8 * b)) & 0xff);
    }
    return out;
  }

  static float decode_one(const std::vector<std::byte>& in, size_t i) {
    uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<uint32_t>(std::to_integer<uint8_t>(in[4 * i + b])) << (8 * b);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  static void accumulate(const std::vector<std::byte>& in, std::span<float> chunk) {
    for (size_t i = 0; i < chunk.size(); ++i) chunk[i] += decode_one(in, i);
  }
  static void assign(const std::vector<std::byte>& in, std::span<float> chunk) {
    for (size_t i = 0; i < chunk.size(); ++i) chunk[i] = decode_one(in, i);
  }
  static void prepare_owned(std::span<float>) {}
};

// binary16 wire chunks; partial sums are re-rounded at every hop, and the
// owner rounds its chunk before broadcasting so replicas stay bit-identical
struct F16Wire {
  static constexpr size_t elem_bytes = 2;

  static std::vector<std::byte> encode(std::span<const float> chunk) {
    std::vector<std::byte> out(chunk.size() * 2);
    for (size_t i = 0; i < chunk.size(); ++i) {
      const uint16_t h = float_to_half(chunk[i]);
      out[2 * i] = static_cast<std::byte>(h & 0xff);
      out[2 * i + 1] = static_cast<std::byte>((h >> 8) & 0xff);
    }
    return out;
  }

  static float decode_one(const std::vector<std::byte>& in, size_t i) {
    const uint16_t lo = std::to_integer<uint8_t>(in[2 * i]);
    const uint16_t hi = std::to_integer<uint8_t>(in[2 * i + 1]);
    return half_to_float(static_cast<uint16_t>(lo | (hi << 8)));
  }

  static void accumulate(const std::vector<std::byte>& in, std::span<float> chunk) {
    for (size_t i = 0; i < chunk.size(); ++i) chunk[i] += decode_one(in, i);
  }
  static void assign(const std::vector<std::byte>& in, std::span<float> chunk) {
    for (size_t i = 0; i < chunk.size(); ++i) chunk[i] = decode_one(in, i);
  }
  static void prepare_owned(std::span<float> chunk) {
    for (float& v : chunk) v = half_to_float(float_to_half(v));
  }
};

template <typename Wire>
FlatTensor ring_allreduce_impl(const FlatTensor& local, Comm& comm) {
  const auto& topo = comm.topology();
  const int n = topo.n;
  const int pos = comm.position();
  const ChunkMap cm(local.size(), n);

  std::vector<float> buf(local.data(), local.data() + local.size());
  std::vector<uint64_t> loads(static_cast<size_t>(n), 0);

  auto chunk_span = [&](int c) {
    return std::span<float>(buf.data() + cm.begin(c), cm.elems(c));
  };
  auto round_loads = [&](auto chunk_of_link) {
    for (int p = 0; p < n; ++p) loads[p] = cm.elems(chunk_of_link(p)) * Wire::elem_bytes;
    comm.account_round(loads);
  };

  // reduce-scatter: after n-1 steps, position p owns chunk (p+1) mod n
  for (int s = 0; s < n - 1; ++s) {
    const int send_c = mod(pos - s, n);
    const int recv_c = mod(pos - s - 1, n);
    comm.send_next(Wire::encode(chunk_span(send_c)));
    const auto in = comm.recv_prev();
    if (in.size() != cm.elems(recv_c) * Wire::elem_bytes)
      raise(Errc::ShapeMismatch, "ring chunk size mismatch (workers disagree on length?)");
    Wire::accumulate(in, chunk_span(recv_c));
    round_loads([&](int p) { return mod(p - s, n); });
  }

  Wire::prepare_owned(chunk_span(mod(pos + 1, n)));

  // all-gather the reduced chunks
  for (int s = 0; s < n - 1; ++s) {
    const int send_c = mod(pos + 1 - s, n);
    const int recv_c = mod(pos - s, n);
    comm.send_next(Wire::encode(chunk_span(send_c)));
    const auto in = comm.recv_prev();
    if (in.size() != cm.elems(recv_c) * Wire::elem_bytes)
      raise(Errc::ShapeMismatch, "ring chunk size mismatch (workers disagree on length?)");
    Wire::assign(in, chunk_span(recv_c));
    round_loads([&](int p) { return mod(p + 1 - s, n); });
  }

  return FlatTensor(std::move(buf));
}

}  // namespace

FlatTensor ring_allreduce(const FlatTensor& local, Comm& comm) {
  return ring_allreduce_impl<F32Wire>(local, comm);
}

FlatTensor ring_allreduce_fp16(const FlatTensor& local, Comm& comm) {
  return ring_allreduce_impl<F16Wire>(local, comm);
}

std::vector<std::vector<std::byte>> allgather(const std::vector<std::byte>& payload, Comm& comm) {
  const auto& topo = comm.topology();
  const int n = topo.n;
  const int pos = comm.position();

  std::vector<std::vector<std::byte>> by_pos(static_cast<size_t>(n));
  by_pos[pos] = payload;
  std::vector<std::byte> cur = payload;
  for (int s = 0; s < n - 1; ++s) {
    comm.send_next(cur);
    cur = comm.recv_prev();
    by_pos[mod(pos - s - 1, n)] = cur;
  }

  // timing: round s moves the payload originated at position (p - s) over
  // link p; sizes are only all known now, so the clock advances afterwards
  std::vector<uint64_t> loads(static_cast<size_t>(n), 0);
  for (int s = 0; s < n - 1; ++s) {
    for (int p = 0; p < n; ++p) loads[p] = by_pos[mod(p - s, n)].size();
    comm.account_round(loads);
  }

  std::vector<std::vector<std::byte>> by_rank(static_cast<size_t>(n));
  for (int q = 0; q < n; ++q) by_rank[topo.ring[q]] = std::move(by_pos[q]);
  return by_rank;
}

// ---------------------------------------------------------------------------
// Aggregation strategies
// ---------------------------------------------------------------------------

AggregateResult full_allreduce(const FlatTensor& grad, Comm& comm) {
  const uint64_t b0 = comm.bytes_sent();
  const double t0 = comm.clock().now_s();
  FlatTensor sum = ring_allreduce(grad, comm);
  return {std::move(sum),
          {comm.bytes_sent() - b0, comm.clock().now_s() - t0, SyncMode::FullAllReduce}};
}

AggregateResult fp16_allreduce(const FlatTensor& grad, Comm& comm) {
  const uint64_t b0 = comm.bytes_sent();
  const double t0 = comm.clock().now_s();
  FlatTensor sum = ring_allreduce_fp16(grad, comm);
  return {std::move(sum),
          {comm.bytes_sent() - b0, comm.clock().now_s() - t0, SyncMode::Fp16AllReduce}};
}

AggregateResult masked_allreduce(const FlatTensor& grad, const SparsityMask& mask,
                                 TrackerStatus tracker, uint32_t epoch, Comm& comm,
                                 std::optional<uint64_t> advertised_digest) {
  if (grad.size() != mask.size()) raise(Errc::ShapeMismatch, "gradient/mask length mismatch");
  const uint64_t b0 = comm.bytes_sent();
  const double t0 = comm.clock().now_s();

  // Every worker votes via a header frame: kind Packed when its own tracker
  // is stable, kind Full otherwise. The packed path runs only on a unanimous
  // vote with matching digests, so the decision is identical everywhere even
  // when trackers or masks disagree, and every worker stays in lockstep.
  const bool stable = decide_sync_mode(SyncMode::PackedAllReduce, tracker) ==
                      SyncMode::PackedAllReduce;
  wire::FrameHeader mine{stable ? wire::PayloadKind::Packed : wire::PayloadKind::Full, epoch,
                         advertised_digest.value_or(mask.digest()), mask.nnz()};
  const auto frames = allgather(wire::encode_header(mine), comm);
  bool agree = stable;
  for (const auto& f : frames) {
    const wire::FrameHeader h = wire::decode_header(f);
    if (h.kind != wire::PayloadKind::Packed || h.mask_digest != mine.mask_digest ||
        h.value_count != mine.value_count) {
      agree = false;
      break;
    }
  }

  FlatTensor result;
  if (agree) {
    PackedGradient packed = pack(grad, mask, epoch);
    FlatTensor summed = ring_allreduce(FlatTensor(std::move(packed.values)), comm);
    PackedGradient summed_packed{mask.digest(), epoch,
                                 std::vector<float>(summed.data(), summed.data() + summed.size())};
    result = unpack(summed_packed, mask);
  } else {
    result = ring_allreduce(grad, comm);
  }

  return {std::move(result),
          {comm.bytes_sent() - b0, comm.clock().now_s() - t0,
           agree ? SyncMode::PackedAllReduce : SyncMode::FullAllReduce}};
}

AggregateResult ternary_allgather_aggregate(const FlatTensor& grad, const SparsityMask& mask,
                                            TrackerStatus tracker, uint64_t seed, uint32_t epoch,
                                            Comm& comm) {
  if (grad.size() != mask.size()) raise(Errc::ShapeMismatch, "gradient/mask length mismatch");
  const uint64_t b0 = comm.bytes_sent();
  const double t0 = comm.clock().now_s();
  const int n = comm.world_size();

  // Same voting scheme as masked_allreduce: an unstable worker contributes a
  // bare Full header instead of a ternary frame, and any non-ternary frame
  // or digest mismatch sends everyone down the full path together.
  const bool stable = decide_sync_mode(SyncMode::TernaryAllGather, tracker) ==
                      SyncMode::TernaryAllGather;
  std::vector<std::byte> my_frame;
  if (stable) {
    PackedGradient packed = pack(grad, mask, epoch);
    my_frame = wire::encode_ternary(ternarize(FlatTensor(std::move(packed.values)), seed), epoch,
                                    mask.digest());
  } else {
    my_frame = wire::encode_header({wire::PayloadKind::Full, epoch, mask.digest(), mask.nnz()});
  }
  const auto frames = allgather(my_frame, comm);

  std::vector<TernaryGradient> decoded(frames.size());
  bool agree = stable;
  for (size_t r = 0; r < frames.size() && agree; ++r) {
    uint64_t digest = 0;
    if (wire::decode_header(frames[r]).kind != wire::PayloadKind::Ternary) {
      agree = false;
      break;
    }
    decoded[r] = wire::decode_ternary(frames[r], &digest);
    if (digest != mask.digest() || decoded[r].len != mask.nnz()) {
      agree = false;
      break;
    }
  }

  if (!agree) {
    FlatTensor sum = ring_allreduce(grad, comm);
    std::vector<float> mean(sum.size());
    for (size_t i = 0; i < sum.size(); ++i) mean[i] = sum[i] / static_cast<float>(n);
    return {FlatTensor(std::move(mean)),
            {comm.bytes_sent() - b0, comm.clock().now_s() - t0, SyncMode::FullAllReduce}};
  }

  std::vector<double> acc(mask.nnz(), 0.0);
  for (const auto& t : decoded)
    for (size_t j = 0; j < t.len; ++j) acc[j] += static_cast<double>(t.scale) * t.sign_at(j);

  std::vector<float> mean_vals(acc.size());
  for (size_t j = 0; j < acc.size(); ++j) mean_vals[j] = static_cast<float>(acc[j] / n);
  PackedGradient mean_packed{mask.digest(), epoch, std::move(mean_vals)};
  FlatTensor mean = unpack(mean_packed, mask);

  return {std::move(mean),
          {comm.bytes_sent() - b0, comm.clock().now_s() - t0, SyncMode::TernaryAllGather}};
}

AggregateResult topk_allgather_aggregate(const FlatTensor& grad, float rate, uint32_t epoch,
                                         Comm& comm) {
  const uint64_t b0 = comm.bytes_sent();
  const double t0 = comm.clock().now_s();
  const int n = comm.world_size();
  const size_t len = grad.size();

  const TopKPayload mine = topk_select(grad, rate);
  const auto frames = allgather(wire::encode_topk(mine, epoch), comm);

  std::vector<double> acc(len, 0.0);
  for (const auto& f : frames) {
    const TopKPayload p = wire::decode_topk(f, len);
    for (size_t j = 0; j < p.indices.size(); ++j) acc[p.indices[j]] += p.values[j];
  }
  std::vector<float> mean(len);
  for (size_t i = 0; i < len; ++i) mean[i] = static_cast<float>(acc[i] / n);

  return {FlatTensor(std::move(mean)),
          {comm.bytes_sent() - b0, comm.clock().now_s() - t0, SyncMode::TopKAllGather}};
}

// ---------------------------------------------------------------------------
// In-process simulated fabric
// ---------------------------------------------------------------------------

struct SimCluster::Edge {
  std::mutex m;
  std::condition_variable cv;
  std::deque<std::vector<std::byte>> q;
  bool poisoned = false;
};

class SimTransport : public Transport {
 public:
  SimTransport(SimCluster* cluster, int position, int n)
      : cluster_(cluster), pos_(position), n_(n) {}

  void send_next(const std::vector<std::byte>& payload) override;
  std::vector<std::byte> recv_prev() override;

 private:
  SimCluster* cluster_;
  int pos_;
  int n_;
};

SimCluster::SimCluster(int n) : n_(n) {
  if (n < 2) raise(Errc::BadTopology, "simulated cluster needs at least 2 workers");
  edges_.reserve(n);
  for (int i = 0; i < n; ++i) edges_.push_back(std::make_unique<Edge>());
}

SimCluster::~SimCluster() = default;

std::shared_ptr<Transport> SimCluster::transport_at(int position) {
  if (position < 0 || position >= n_) raise(Errc::BadTopology, "position out of range");
  return std::make_shared<SimTransport>(this, position, n_);
}

void SimCluster::poison() {
  for (auto& e : edges_) {
    {
      std::lock_guard<std::mutex> lk(e->m);
      e->poisoned = true;
    }
    e->cv.notify_all();
  }
}

bool SimCluster::poisoned() const {
  std::lock_guard<std::mutex> lk(edges_[0]->m);
  return edges_[0]->poisoned;
}

void SimTransport::send_next(const std::vector<std::byte>& payload) {
  auto& e = *cluster_->edges_[pos_];
  {
    std::lock_guard<std::mutex> lk(e.m);
    e.q.push_back(payload);
  }
  e.cv.notify_one();
}

std::vector<std::byte> SimTransport::recv_prev() {
  auto& e = *cluster_->edges_[mod(pos_ - 1, n_)];
  std::unique_lock<std::mutex> lk(e.m);
  e.cv.wait(lk, [&] { return !e.q.empty() || e.poisoned; });
  if (e.q.empty()) raise(Errc::LinkError, "peer worker died, fabric poisoned");
  std::vector<std::byte> out = std::move(e.q.front());
  e.q.pop_front();
  return out;
}

}  // namespace pact
