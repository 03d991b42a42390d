// SPDX-License-Identifier: Apache-2.0

#include "pact/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <thread>

#include "pact/rng.hpp"

namespace pact {

namespace {

// independent seed streams per purpose
constexpr uint64_t kInitStream = 0x6d6c7024696e6974ULL;
constexpr uint64_t kShuffleStream = 0x73687566666c6521ULL;
constexpr uint64_t kTernaryStream = 0x7465726e61727921ULL;

uint64_t weights_fingerprint(const FlatTensor& params) {
  std::vector<unsigned char> bytes(params.size() * 4);
  for (size_t i = 0; i < params.size(); ++i) {
    uint32_t bits;
    std::memcpy(&bits, &params.values()[i], 4);
    for (int b = 0; b < 4; ++b)
      bytes[4 * i + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
  }
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace

std::pair<Dataset, Dataset> synthetic_dataset(uint64_t seed, size_t n_samples, size_t dim,
                                              size_t classes, float mean_scale) {
  if (classes < 2) raise(Errc::InvalidRatio, "need at least 2 classes");
  Rng rng(seed);

  std::vector<double> means(classes * dim);
  for (double& m : means) m = mean_scale * rng.gaussian();

  const size_t n_test = n_samples / 5;
  const size_t n_train = n_samples - n_test;

  Dataset all;
  all.dim = dim;
  all.classes = classes;
  all.features.resize(n_samples * dim);
  all.labels.resize(n_samples);
  for (size_t i = 0; i < n_samples; ++i) {
    const size_t c = i % classes;  // round-robin keeps both splits balanced
    all.labels[i] = static_cast<int>(c);
    for (size_t d = 0; d < dim; ++d)
      all.features[i * dim + d] = static_cast<float>(means[c * dim + d] + rng.gaussian());
  }

  Dataset train, test;
  train.dim = test.dim = dim;
  train.classes = test.classes = classes;
  train.features.assign(all.features.begin(), all.features.begin() + n_train * dim);
  train.labels.assign(all.labels.begin(), all.labels.begin() + n_train);
  test.features.assign(all.features.begin() + n_train * dim, all.features.end());
  test.labels.assign(all.labels.begin() + n_train, all.labels.end());
  return {std::move(train), std::move(test)};
}

Mlp Mlp::create(size_t in, size_t hidden, size_t out, uint64_t seed) {
  Rng rng(seed);
  const double w1_std = std::sqrt(2.0 / static_cast<double>(in));
  const double w2_std = std::sqrt(1.0 / static_cast<double>(hidden));

  std::vector<float> w1(in * hidden), b1(hidden, 0.0f), w2(hidden * out), b2(out, 0.0f);
  for (float& v : w1) v = static_cast<float>(w1_std * rng.gaussian());
  for (float& v : w2) v = static_cast<float>(w2_std * rng.gaussian());

  Mlp m;
  m.in = in;
  m.hidden = hidden;
  m.out = out;
  auto [flat, view] = flatten({{"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}});
  m.params = std::move(flat);
  m.view = std::move(view);
  return m;
}

LossGrad forward_backward(const Mlp& model, const Batch& batch) {
  if (!batch.data || batch.rows.empty()) raise(Errc::NumericalFailure, "empty batch");
  const Dataset& data = *batch.data;
  if (data.dim != model.in) raise(Errc::ShapeMismatch, "feature dim does not match model input");

  const size_t in = model.in, hid = model.hidden, out = model.out;
  const float* P = model.params.data();
  const float* W1 = P + model.w1_off();
  const float* B1 = P + model.b1_off();
  const float* W2 = P + model.w2_off();
  const float* B2 = P + model.b2_off();

  const double inv_b = 1.0 / static_cast<double>(batch.rows.size());
  std::vector<double> g(model.param_count(), 0.0);
  double* gW1 = g.data() + model.w1_off();
  double* gB1 = g.data() + model.b1_off();
  double* gW2 = g.data() + model.w2_off();
  double* gB2 = g.data() + model.b2_off();

  std::vector<double> h_pre(hid), h(hid), z(out), p(out), dz(out), dh(hid);
  double loss = 0.0;

  for (int row : batch.rows) {
    const float* x = data.row(static_cast<size_t>(row));
    const int y = data.labels[static_cast<size_t>(row)];

    for (size_t j = 0; j < hid; ++j) {
      double acc = B1[j];
      const float* w = W1 + j * in;
      for (size_t i = 0; i < in; ++i) acc += static_cast<double>(w[i]) * x[i];
      h_pre[j] = acc;
      h[j] = acc > 0.0 ? acc : 0.0;
    }
    for (size_t k = 0; k < out; ++k) {
      double acc = B2[k];
      const float* w = W2 + k * hid;
      for (size_t j = 0; j < hid; ++j) acc += static_cast<double>(w[j]) * h[j];
      z[k] = acc;
    }

    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (size_t k = 0; k < out; ++k) {
      p[k] = std::exp(z[k] - zmax);
      sum += p[k];
    }
    for (size_t k = 0; k < out; ++k) p[k] /= sum;
    loss -= std::log(std::max(p[static_cast<size_t>(y)], 1e-300));

    for (size_t k = 0; k < out; ++k) dz[k] = p[k] - (static_cast<int>(k) == y ? 1.0 : 0.0);
    for (size_t k = 0; k < out; ++k) {
      const double d = dz[k];
      double* gw = gW2 + k * hid;
      for (size_t j = 0; j < hid; ++j) gw[j] += d * h[j];
      gB2[k] += d;
    }
    std::fill(dh.begin(), dh.end(), 0.0);
    for (size_t k = 0; k < out; ++k) {
      const double d = dz[k];
      const float* w = W2 + k * hid;
      for (size_t j = 0; j < hid; ++j) dh[j] += d * w[j];
    }
    for (size_t j = 0; j < hid; ++j) {
      if (h_pre[j] <= 0.0) continue;
      const double d = dh[j];
      double* gw = gW1 + j * in;
      for (size_t i = 0; i < in; ++i) gw[i] += d * x[i];
      gB1[j] += d;
    }
  }

  loss *= inv_b;
  if (!std::isfinite(loss)) raise(Errc::NumericalFailure, "non-finite loss");

  std::vector<float> grad(model.param_count());
  for (size_t i = 0; i < grad.size(); ++i) grad[i] = static_cast<float>(g[i] * inv_b);
  FlatTensor gt(std::move(grad));
  if (!gt.all_finite()) raise(Errc::NumericalFailure, "non-finite gradient");
  return {loss, std::move(gt)};
}

double evaluate_accuracy(const Mlp& model, const Dataset& data) {
  const size_t in = model.in, hid = model.hidden, out = model.out;
  const float* P = model.params.data();
  const float* W1 = P + model.w1_off();
  const float* B1 = P + model.b1_off();
  const float* W2 = P + model.w2_off();
  const float* B2 = P + model.b2_off();

  std::vector<double> h(hid), z(out);
  size_t correct = 0;
  for (size_t r = 0; r < data.rows(); ++r) {
    const float* x = data.row(r);
    for (size_t j = 0; j < hid; ++j) {
      double acc = B1[j];
      const float* w = W1 + j * in;
      for (size_t i = 0; i < in; ++i) acc += static_cast<double>(w[i]) * x[i];
      h[j] = acc > 0.0 ? acc : 0.0;
    }
    size_t best = 0;
    double best_z = -1e300;
    for (size_t k = 0; k < out; ++k) {
      double acc = B2[k];
      const float* w = W2 + k * hid;
      for (size_t j = 0; j < hid; ++j) acc += static_cast<double>(w[j]) * h[j];
      if (acc > best_z) {
        best_z = acc;
        best = k;
      }
    }
    if (static_cast<int>(best) == data.labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.rows());
}

void sgd_step(Mlp& model, const FlatTensor& mean_grad, float lr, const SparsityMask* mask) {
  if (mean_grad.size() != model.param_count())
    raise(Errc::ShapeMismatch, "gradient length does not match parameter count");
  if (mask && mask->size() != model.param_count())
    raise(Errc::ShapeMismatch, "mask length does not match parameter count");
  float* P = model.params.data();
  for (size_t i = 0; i < mean_grad.size(); ++i) {
    if (mask && !mask->test(i))
      P[i] = 0.0f;  // dropped coordinates stay exactly zero
    else
      P[i] -= lr * mean_grad[i];
  }
}

DataShard shard_dataset(size_t total_rows, int rank, int n) {
  const size_t base = total_rows / static_cast<size_t>(n);
  const size_t rem = total_rows % static_cast<size_t>(n);
  const size_t begin = static_cast<size_t>(rank) * base + std::min<size_t>(rank, rem);
  const size_t size = base + (static_cast<size_t>(rank) < rem ? 1 : 0);
  DataShard s;
  s.shard_id = rank;
  s.worker_rank = rank;
  s.rows.resize(size);
  std::iota(s.rows.begin(), s.rows.end(), static_cast<int>(begin));
  return s;
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0) raise(Errc::RunFailure, "epochs and batch size must be positive");
  if (!(learning_rate > 0.0f)) raise(Errc::RunFailure, "learning rate must be positive");
  if (workers < 2) raise(Errc::BadTopology, "need at least 2 workers");
  if (classes < 2) raise(Errc::RunFailure, "need at least 2 classes");
  prune.validate();
  if (!(topk_rate > 0.0f && topk_rate <= 1.0f)) raise(Errc::InvalidRate, "topk rate outside (0,1]");
  if (steps_per_epoch() == 0)
    raise(Errc::RunFailure, "shards too small: no full batch per worker per epoch");
}

uint32_t TrainConfig::steps_per_epoch() const {
  const size_t n_train = samples - samples / 5;
  const size_t min_shard = n_train / workers;
  return static_cast<uint32_t>(min_shard / batch_size);
}

std::string mode_histogram(const std::array<uint32_t, 5>& counts) {
  std::string out;
  for (size_t m = 0; m < counts.size(); ++m) {
    if (counts[m] == 0) continue;
    if (!out.empty()) out += '|';
    out += sync_mode_name(static_cast<SyncMode>(m));
    out += ':';
    out += std::to_string(counts[m]);
  }
  return out.empty() ? "none" : out;
}

namespace {

struct StepOutcome {
  FlatTensor mean_grad;
  SyncStats stats;
};

StepOutcome aggregate_step(const TrainConfig& cfg, const FlatTensor& grad,
                           const std::optional<SparsityMask>& mask, TrackerStatus tracker,
                           uint32_t epoch, uint32_t step, int rank, Comm& comm) {
  const float inv_n = 1.0f / static_cast<float>(comm.world_size());
  auto to_mean = [&](AggregateResult r) {
    std::vector<float> mean(r.tensor.size());
    for (size_t i = 0; i < mean.size(); ++i) mean[i] = r.tensor[i] * inv_n;
    return StepOutcome{FlatTensor(std::move(mean)), r.stats};
  };

  SyncMode requested = cfg.sync_mode;
  if (!mask && (requested == SyncMode::PackedAllReduce || requested == SyncMode::TernaryAllGather))
    requested = SyncMode::FullAllReduce;  // dense phase before the prune
  if (cfg.force_full_epoch && *cfg.force_full_epoch == epoch)
    requested = SyncMode::FullAllReduce;

  // The compressed paths run their own stability vote on the wire, so they
  // are entered whenever a mask exists; the fallback decision inside them is
  // unanimous across workers.
  switch (requested) {
    case SyncMode::PackedAllReduce: {
      std::optional<uint64_t> advertised;
      if (cfg.digest_fault_epoch && *cfg.digest_fault_epoch == epoch &&
          rank == cfg.digest_fault_rank)
        advertised = mask->digest() ^ 0x5a5a5a5a5a5a5a5aULL;
      return to_mean(masked_allreduce(grad, *mask, tracker, epoch, comm, advertised));
    }
    case SyncMode::TernaryAllGather: {
      const uint64_t seed = derive_seed(cfg.seed ^ kTernaryStream, static_cast<uint64_t>(rank),
                                        epoch, step);
      AggregateResult r = ternary_allgather_aggregate(grad, *mask, tracker, seed, epoch, comm);
      if (r.stats.mode_used == SyncMode::FullAllReduce) return to_mean(std::move(r));
      return {std::move(r.tensor), r.stats};  // already the mean
    }
    case SyncMode::TopKAllGather: {
      AggregateResult r = topk_allgather_aggregate(grad, cfg.topk_rate, epoch, comm);
      return {std::move(r.tensor), r.stats};  // already the mean
    }
    case SyncMode::Fp16AllReduce:
      return to_mean(fp16_allreduce(grad, comm));
    case SyncMode::FullAllReduce:
    default:
      return to_mean(full_allreduce(grad, comm));
  }
}

}  // namespace

Mlp initial_model(const TrainConfig& cfg) {
  return Mlp::create(cfg.feature_dim, cfg.hidden, cfg.classes, derive_seed(cfg.seed, kInitStream));
}

std::vector<int> epoch_batch_order(const TrainConfig& cfg, const DataShard& shard, uint32_t epoch,
                                   int rank) {
  std::vector<int> order = shard.rows;
  Rng rng(derive_seed(cfg.seed ^ kShuffleStream, static_cast<uint64_t>(rank), epoch));
  for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

WorkerResult run_worker(int rank, const TrainConfig& cfg, Comm& comm, const Dataset& train,
                        const Dataset& test) {
  cfg.validate();
  Mlp model = initial_model(cfg);
  const DataShard shard = shard_dataset(train.rows(), rank, comm.world_size());
  const uint32_t steps = cfg.steps_per_epoch();

  MaskTracker tracker(cfg.stability_threshold);
  std::optional<SparsityMask> mask;

  WorkerResult result;
  result.rank = rank;
  result.epochs.reserve(cfg.epochs);

  for (uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (!mask && cfg.prune.ratio > 0.0f && epoch >= cfg.warmup_epochs) {
      // The probe batch is the same on every rank so the masks agree.
      Batch probe{&train, {}};
      probe.rows.resize(std::min<size_t>(cfg.batch_size, train.rows()));
      std::iota(probe.rows.begin(), probe.rows.end(), 0);
      GradientFn probe_grad = [&](const FlatTensor& theta) {
        Mlp m = model;
        m.params = theta;
        return forward_backward(m, probe).grad;
      };
      mask = build_prune_mask(model.params, cfg.prune, probe_grad);
      model.params = enforce_gradient_sparsity(model.params, *mask);
    }

    // per-epoch shard order; deterministic given (seed, epoch, rank)
    const std::vector<int> order = epoch_batch_order(cfg, shard, epoch, rank);

    EpochMetrics em;
    em.epoch = epoch;
    double loss_sum = 0.0;
    const uint64_t epoch_b0 = comm.bytes_sent();

    for (uint32_t step = 0; step < steps; ++step) {
      Batch batch{&train,
                  std::vector<int>(order.begin() + step * cfg.batch_size,
                                   order.begin() + (step + 1) * cfg.batch_size)};
      LossGrad lg = forward_backward(model, batch);
      loss_sum += lg.loss;

      FlatTensor grad = std::move(lg.grad);
      TrackerStatus status = TrackerStatus::Unstable;
      if (mask) {
        grad = enforce_gradient_sparsity(grad, *mask);
        status = tracker.observe(*mask);
      }

      StepOutcome out = aggregate_step(cfg, grad, mask, status, epoch, step, rank, comm);
      sgd_step(model, out.mean_grad, cfg.learning_rate, mask ? &*mask : nullptr);

      em.mode_counts[static_cast<size_t>(out.stats.mode_used)]++;
      comm.clock().advance(cfg.compute_seconds_per_iter);
    }

    em.train_loss = loss_sum / steps;
    em.test_accuracy = evaluate_accuracy(model, test);
    em.bytes_on_wire = comm.bytes_sent() - epoch_b0;
    em.sim_seconds_cum = comm.clock().now_s();
    em.weights_digest = weights_fingerprint(model.params);
    if (mask)
      for (size_t i = 0; i < mask->size(); ++i)
        if (!mask->test(i) && model.params[i] != 0.0f) ++em.gse_violations;
    result.epochs.push_back(em);
  }

  result.final_weights = model.params;
  result.mask = mask;
  return result;
}

std::vector<WorkerResult> run_cluster_sim(const TrainConfig& cfg, const LinkModel& link) {
  cfg.validate();
  const int n = static_cast<int>(cfg.workers);
  const auto [train, test] =
      synthetic_dataset(cfg.seed, cfg.samples, cfg.feature_dim, cfg.classes, cfg.mean_scale);
  const WorkerTopology topo = WorkerTopology::uniform(n, link);

  SimCluster cluster(n);
  std::vector<WorkerResult> results(static_cast<size_t>(n));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(n));
  for (int r = 0; r < n; ++r) {
    threads.emplace_back([&, r] {
      try {
        Comm comm(topo, r, cluster.transport_at(topo.position_of(r)));
        results[static_cast<size_t>(r)] = run_worker(r, cfg, comm, train, test);
      } catch (...) {
        errors[static_cast<size_t>(r)] = std::current_exception();
        cluster.poison();
      }
    });
  }
  for (auto& t : threads) t.join();

  // surface the primal failure, not the LinkErrors the poison induced
  std::exception_ptr any;
  for (const auto& e : errors) {
    if (!e) continue;
    if (!any) any = e;
    try {
      std::rethrow_exception(e);
    } catch (const Error& err) {
      if (err.code() != Errc::LinkError) throw;
    } catch (...) {
      throw;
    }
  }
  if (any) std::rethrow_exception(any);
  return results;
}

}  // namespace pact
