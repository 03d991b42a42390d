// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale data-parallel training: a hand-rolled MLP with manual backprop,
// dataset sharding, SGD with gradient sparsity enforcement, and pluggable
// sync strategies. Workers are threads over the simulated fabric or separate
// processes over TCP; either way they synchronize only inside collectives.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pact/collective.hpp"
#include "pact/sparsity.hpp"
#include "pact/tensor.hpp"

namespace pact {

struct Dataset {
  size_t dim = 0;
  size_t classes = 0;
  std::vector<float> features;  // row-major rows x dim
  std::vector<int> labels;

  size_t rows() const { return labels.size(); }
  const float* row(size_t i) const { return features.data() + i * dim; }
};

/// Deterministic Gaussian-blob classification set: class means drawn from a
/// seeded generator, unit covariance, 80/20 train/test split. The default
/// mean scale keeps the blobs separable enough for a linear model to clear
/// 90% test accuracy while leaving the MLP a few dozen epochs of work.
inline constexpr float kDefaultMeanScale = 0.32f;

std::pair<Dataset, Dataset> synthetic_dataset(uint64_t seed, size_t n_samples = 5000,
                                              size_t dim = 64, size_t classes = 10,
                                              float mean_scale = kDefaultMeanScale);

/// Two-layer ReLU MLP with softmax cross-entropy loss. Parameters live in
/// one FlatTensor bucket (w1, b1, w2, b2 in registration order).
struct Mlp {
  size_t in = 0, hidden = 0, out = 0;
  FlatTensor params;
  BucketView view;

  static Mlp create(size_t in, size_t hidden, size_t out, uint64_t seed);

  size_t param_count() const { return params.size(); }
  // offsets into the flat buffer
  size_t w1_off() const { return 0; }
  size_t b1_off() const { return in * hidden; }
  size_t w2_off() const { return in * hidden + hidden; }
  size_t b2_off() const { return in * hidden + hidden + hidden * out; }
};

struct Batch {
  const Dataset* data = nullptr;
  std::vector<int> rows;
};

struct LossGrad {
  double loss = 0.0;
  FlatTensor grad;
};

/// Mean softmax cross-entropy over the batch and its gradient over the flat
/// parameter buffer. Accumulates in double so finite-difference checks at
/// 1e-3 relative error are meaningful.
LossGrad forward_backward(const Mlp& model, const Batch& batch);

double evaluate_accuracy(const Mlp& model, const Dataset& data);

/// X <- X - lr * mean_grad; positions dropped by the mask stay exactly 0.
void sgd_step(Mlp& model, const FlatTensor& mean_grad, float lr,
              const SparsityMask* mask = nullptr);

/// Contiguous block of row indices owned by one worker; blocks partition the
/// training set disjointly and exhaustively.
struct DataShard {
  int shard_id = 0;
  int worker_rank = 0;
  std::vector<int> rows;
};

DataShard shard_dataset(size_t total_rows, int rank, int n);

struct TrainConfig {
  uint32_t epochs = 100;
  uint32_t batch_size = 32;
  float learning_rate = 0.05f;
  uint32_t workers = 8;
  PruneConfig prune;
  SyncMode sync_mode = SyncMode::FullAllReduce;
  float topk_rate = 0.1f;
  uint32_t warmup_epochs = 2;  // dense epochs before the one-shot prune
  uint32_t stability_threshold = 3;
  uint64_t seed = 1;
  double compute_seconds_per_iter = 0.0;

  // model / dataset shape
  size_t samples = 5000;
  size_t feature_dim = 64;
  size_t hidden = 128;
  size_t classes = 10;
  float mean_scale = kDefaultMeanScale;

  // fault-injection hooks for fallback-safety experiments
  std::optional<uint32_t> digest_fault_epoch;
  int digest_fault_rank = 0;
  std::optional<uint32_t> force_full_epoch;

  void validate() const;
  uint32_t steps_per_epoch() const;
};

struct EpochMetrics {
  uint32_t epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  uint64_t bytes_on_wire = 0;    // this epoch
  double sim_seconds_cum = 0.0;  // virtual clock at epoch end
  std::array<uint32_t, 5> mode_counts{};  // indexed by SyncMode
  uint64_t weights_digest = 0;   // fingerprint for replica-consistency checks
  uint32_t gse_violations = 0;   // masked weights found non-zero at epoch end
};

std::string mode_histogram(const std::array<uint32_t, 5>& counts);

struct WorkerResult {
  int rank = 0;
  std::vector<EpochMetrics> epochs;
  FlatTensor final_weights;
  std::optional<SparsityMask> mask;
};

/// The seed-derived model every worker starts from; exposed so external
/// oracles can replay a run step by step.
Mlp initial_model(const TrainConfig& cfg);

/// The exact batch order worker `rank` visits in `epoch`; same contract.
std::vector<int> epoch_batch_order(const TrainConfig& cfg, const DataShard& shard, uint32_t epoch,
                                   int rank);

/// One worker's full training loop: prune once after warmup, then per batch
/// forward/backward -> GSE -> tracker -> sync decision -> aggregate ->
/// averaged SGD step; evaluates after every epoch.
WorkerResult run_worker(int rank, const TrainConfig& cfg, Comm& comm, const Dataset& train,
                        const Dataset& test);

/// Runs all workers as threads over an in-process simulated fabric.
std::vector<WorkerResult> run_cluster_sim(const TrainConfig& cfg, const LinkModel& link);

}  // namespace pact
