// SPDX-License-Identifier: Apache-2.0
//
// Ring collectives over pluggable transports, plus the masked / ternary /
// topk / fp16 aggregation strategies and the full-sync fallback.
//
// Timing model: synchronous rounds. Every ring step is gated by the slowest
// link active in that step, and each worker advances its own virtual clock
// by the same analytically-computed round time, so simulated time is
// deterministic and identical across ranks regardless of scheduling.

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "pact/codec.hpp"
#include "pact/sparsity.hpp"
#include "pact/tensor.hpp"

namespace pact {

struct LinkModel {
  double bandwidth_bps = 1e9;
  double latency_s = 0.0;
};

/// Logical ring over n >= 2 workers. ring[i] is the rank sitting at ring
/// position i; links[i] models the edge from position i to position i+1.
struct WorkerTopology {
  int n = 0;
  std::vector<int> ring;
  std::vector<LinkModel> links;

  static WorkerTopology uniform(int n, LinkModel link = {});

  void validate() const;  // BadTopology unless ring is a permutation of [0, n), n >= 2
  int position_of(int rank) const;
};

class VirtualClock {
 public:
  double now_s() const { return now_s_; }
  void advance(double dt_s) {
    if (dt_s < 0) raise(Errc::NumericalFailure, "clock cannot move backwards");
    now_s_ += dt_s;
  }

 private:
  double now_s_ = 0.0;
};

/// elapsed = latency + bytes * 8 / bandwidth; advances the clock.
double simulate_transfer(uint64_t bytes, const LinkModel& link, VirtualClock& clock);

enum class SyncMode : uint8_t {
  FullAllReduce,
  PackedAllReduce,
  TernaryAllGather,
  TopKAllGather,
  Fp16AllReduce,
};

const char* sync_mode_name(SyncMode m);

/// Packed and ternary paths ride on a stable mask; anything else passes
/// through. Digest agreement across workers is checked separately, on the
/// wire, inside masked_allreduce.
SyncMode decide_sync_mode(SyncMode requested, TrackerStatus tracker);

struct SyncStats {
  uint64_t bytes_on_wire = 0;  // payload bytes this worker put on its link
  double seconds = 0.0;        // virtual time consumed
  SyncMode mode_used = SyncMode::FullAllReduce;
};

/// Moves bytes between ring neighbours. Implementations: in-process queues
/// (SimCluster) and framed TCP. Blocking, one worker per endpoint.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send_next(const std::vector<std::byte>& payload) = 0;
  virtual std::vector<std::byte> recv_prev() = 0;
};

/// One worker's endpoint: transport + topology + clock/byte accounting.
class Comm {
 public:
  Comm(WorkerTopology topo, int rank, std::shared_ptr<Transport> transport);

  int rank() const { return rank_; }
  int world_size() const { return topo_.n; }
  int position() const { return position_; }
  const WorkerTopology& topology() const { return topo_; }

  void send_next(const std::vector<std::byte>& payload) { transport_->send_next(payload); }
  std::vector<std::byte> recv_prev() { return transport_->recv_prev(); }

  /// Closes a synchronous round: advances the clock by the slowest link's
  /// transfer time and charges this worker's own outgoing bytes.
  void account_round(std::span<const uint64_t> bytes_per_link);

  VirtualClock& clock() { return clock_; }
  const VirtualClock& clock() const { return clock_; }
  uint64_t bytes_sent() const { return bytes_sent_; }

 private:
  WorkerTopology topo_;
  int rank_;
  int position_;
  std::shared_ptr<Transport> transport_;
  VirtualClock clock_;
  uint64_t bytes_sent_ = 0;
};

/// Elementwise sum across workers via reduce-scatter + all-gather,
/// 2(n-1) steps of ceil(len/n)-sized chunks. Every worker returns the same
/// buffer bit-for-bit (each chunk is reduced once, by its owner).
FlatTensor ring_allreduce(const FlatTensor& local, Comm& comm);

/// Same ring, but chunks travel as binary16: halved bytes, lossy partial
/// sums re-rounded at every hop.
FlatTensor ring_allreduce_fp16(const FlatTensor& local, Comm& comm);

/// Every worker ends with all n payloads, indexed by rank.
std::vector<std::vector<std::byte>> allgather(const std::vector<std::byte>& payload, Comm& comm);

struct AggregateResult {
  FlatTensor tensor;  // sum for the allreduce paths, mean for the gather paths
  SyncStats stats;
};

/// Stable mask: exchange frame headers, ring-allreduce the nnz-length dense
/// payload, unpack. Any digest disagreement aborts the packed path and
/// re-runs a full ring allreduce on the raw tensor. Returns the SUM.
/// `advertised_digest` overrides the digest this worker announces; fault
/// injection for fallback experiments, leave unset otherwise.
AggregateResult masked_allreduce(const FlatTensor& grad, const SparsityMask& mask,
                                 TrackerStatus tracker, uint32_t epoch, Comm& comm,
                                 std::optional<uint64_t> advertised_digest = {});

/// Packs, ternarizes the packed values, all-gathers (scale, signs) frames,
/// decodes all n and averages. Returns the MEAN; unbiased estimate of the
/// true mean gradient. Falls back to a full allreduce when any worker is
/// unstable or any digest disagrees.
AggregateResult ternary_allgather_aggregate(const FlatTensor& grad, const SparsityMask& mask,
                                            TrackerStatus tracker, uint64_t seed, uint32_t epoch,
                                            Comm& comm);

/// All-gathers per-worker TopK payloads and averages the densified tensors.
/// Returns the MEAN.
AggregateResult topk_allgather_aggregate(const FlatTensor& grad, float rate, uint32_t epoch,
                                         Comm& comm);

/// Full ring allreduce with binary16 wire payloads. Returns the SUM.
AggregateResult fp16_allreduce(const FlatTensor& grad, Comm& comm);

/// Full-precision baseline. Returns the SUM.
AggregateResult full_allreduce(const FlatTensor& grad, Comm& comm);

// --- in-process simulated fabric ------------------------------------------

/// Shared mailbox fabric for one simulated cluster; hand transport_at(p) to
/// the worker sitting at ring position p.
class SimCluster {
 public:
  explicit SimCluster(int n);
  ~SimCluster();

  std::shared_ptr<Transport> transport_at(int position);
  int size() const { return n_; }

  /// Wakes every blocked receiver with a LinkError. Called when a worker
  /// dies so its peers fail fast instead of waiting forever.
  void poison();
  bool poisoned() const;

 private:
  struct Edge;
  friend class SimTransport;

  int n_;
  std::vector<std::unique_ptr<Edge>> edges_;
};

}  // namespace pact
