// SPDX-License-Identifier: Apache-2.0
//
// Experiment CLI. Subcommands:
//   run <config>      execute the (bandwidth x mode x ratio) grid
//   summarize <dir>   recompute TTA/speedup tables from an output directory
//   selftest          quick oracle checks of the core numerics
// Exit codes: 0 success, 1 config error, 2 run failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

#include <CLI11.hpp>

#include "pact/harness.hpp"
#include "pact/rng.hpp"

namespace {

using namespace pact;

bool check(bool ok, const char* name) {
  std::printf("%s  %s\n", ok ? "ok  " : "FAIL", name);
  return ok;
}

bool selftest() {
  bool all = true;
  Rng rng(7);

  {  // flatten/unflatten is a bijection
    NamedParams params;
    for (int p = 0; p < 5; ++p) {
      std::vector<float> v(16 + p * 7);
      for (float& x : v) x = static_cast<float>(rng.gaussian());
      params.emplace_back("p" + std::to_string(p), v);
    }
    auto [flat, view] = flatten(params);
    all &= check(unflatten(flat, view) == params, "flatten/unflatten roundtrip");
  }

  {  // mask digest: golden value and single-bit sensitivity
    SparsityMask zero = SparsityMask::all_zeros(64);
    bool ok = zero.digest() == 0xa8c7f832281a39c5ULL;
    SparsityMask flipped = zero.with_bit(17, true);
    ok = ok && flipped.digest() != zero.digest();
    all &= check(ok, "mask digest golden + bit flip");
  }

  {  // pack/unpack lossless on the masked subspace
    bool ok = true;
    for (int t = 0; t < 2000 && ok; ++t) {
      const size_t len = 1 + rng.index(300);
      std::vector<float> g(len);
      std::vector<bool> bits(len);
      for (size_t i = 0; i < len; ++i) {
        g[i] = static_cast<float>(rng.gaussian());
        bits[i] = rng.uniform() < 0.5;
      }
      FlatTensor grad(g);
      SparsityMask mask = SparsityMask::from_bits(bits);
      ok = unpack(pack(grad, mask, 3), mask) == enforce_gradient_sparsity(grad, mask);
    }
    all &= check(ok, "pack/unpack bit-exact (2000 random pairs)");
  }

  {  // ring allreduce vs sequential sum, n = 4
    const int n = 4;
    const size_t len = 1024;
    std::vector<FlatTensor> inputs;
    std::vector<double> expect(len, 0.0);
    for (int r = 0; r < n; ++r) {
      std::vector<float> v(len);
      for (float& x : v) x = static_cast<float>(rng.gaussian());
      for (size_t i = 0; i < len; ++i) expect[i] += v[i];
      inputs.emplace_back(std::move(v));
    }
    SimCluster cluster(n);
    WorkerTopology topo = WorkerTopology::uniform(n, {1e9, 0.0});
    std::vector<FlatTensor> outputs(n);
    std::vector<std::thread> threads;
    for (int r = 0; r < n; ++r)
      threads.emplace_back([&, r] {
        Comm comm(topo, r, cluster.transport_at(r));
        outputs[r] = ring_allreduce(inputs[r], comm);
      });
    for (auto& t : threads) t.join();
    bool ok = true;
    for (int r = 0; r < n; ++r)
      for (size_t i = 0; i < len; ++i)
        ok = ok && std::fabs(outputs[r][i] - expect[i]) <= 1e-5 * std::max(1.0, std::fabs(expect[i]));
    all &= check(ok, "ring allreduce matches sequential sum (n=4)");
  }

  {  // ternary quantization is unbiased
    const FlatTensor g(std::vector<float>{0.5f, -0.25f, 1.0f});
    const int draws = 20000;
    std::vector<double> acc(3, 0.0);
    for (int d = 0; d < draws; ++d) {
      FlatTensor dec = deternarize(ternarize(g, derive_seed(99, d)));
      for (size_t i = 0; i < 3; ++i) acc[i] += dec[i];
    }
    bool ok = true;
    for (size_t i = 0; i < 3; ++i) {
      const double mean = acc[i] / draws;
      const double var = std::fabs(g[i]) * 1.0 - static_cast<double>(g[i]) * g[i];
      const double se = std::sqrt(std::max(var, 1e-12) / draws);
      ok = ok && std::fabs(mean - g[i]) <= 4.0 * se + 1e-9;
    }
    all &= check(ok, "ternary unbiasedness (20k draws)");
  }

  {  // binary16 goldens
    bool ok = fp16_roundtrip(FlatTensor({1.0f}))[0] == 1.0f;
    ok = ok && fp16_roundtrip(FlatTensor({70000.0f}))[0] == 65504.0f;
    ok = ok && fp16_roundtrip(FlatTensor({0.1f}))[0] == 0.0999755859375f;
    all &= check(ok, "binary16 conversion goldens");
  }

  {  // backprop vs central finite differences
    auto [train, test] = synthetic_dataset(11, 200, 8, 3);
    Mlp model = Mlp::create(8, 16, 3, 13);
    Batch batch{&train, {0, 1, 2, 3, 4, 5, 6, 7}};
    LossGrad lg = forward_backward(model, batch);
    bool ok = true;
    for (int probe = 0; probe < 5; ++probe) {
      const size_t i = rng.index(model.param_count());
      const float h = 1e-3f;
      Mlp pm = model;
      pm.params.at(i) = model.params[i] + h;
      const double lp = forward_backward(pm, batch).loss;
      pm.params.at(i) = model.params[i] - h;
      const double lm = forward_backward(pm, batch).loss;
      const double fd = (lp - lm) / (2.0 * h);
      const double denom = std::max(std::fabs(fd), 1e-4);
      ok = ok && std::fabs(fd - lg.grad[i]) / denom <= 1e-3;
    }
    all &= check(ok, "backprop matches finite differences");
  }

  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pruning-aware compressed gradient synchronization experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string dir;
  std::string out_override;
  std::string transport_override;
  uint64_t seed_override = 0;
  bool have_seed = false;

  auto* run = app.add_subcommand("run", "run an experiment grid from a config file");
  run->add_option("config", config_path, "config file (key = value lines)")->required();
  run->add_option("--out", out_override, "output directory override");
  auto* seed_opt = run->add_option("--seed", seed_override, "seed override");
  run->add_option("--transport", transport_override, "transport override: sim or tcp")
      ->check(CLI::IsMember({"sim", "tcp"}));

  auto* summarize = app.add_subcommand("summarize", "recompute the summary for a results dir");
  summarize->add_option("dir", dir, "experiment output directory")->required();

  app.add_subcommand("selftest", "run the built-in oracle checks");

  CLI11_PARSE(app, argc, argv);
  have_seed = seed_opt->count() > 0;

  try {
    if (run->parsed()) {
      ExperimentConfig cfg;
      try {
        cfg = parse_config(config_path);
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (have_seed) cfg.train.seed = seed_override;
        if (transport_override == "sim") cfg.transport = TransportKind::Sim;
        if (transport_override == "tcp") cfg.transport = TransportKind::Tcp;
        cfg.validate();
      } catch (const std::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
      }
      const auto records = run_experiment(cfg);
      std::printf("%s", summary_table(records).c_str());
      for (const auto& r : records)
        if (!r.failure.empty()) {
          std::fprintf(stderr, "cell %s failed: %s\n", r.cell_name.c_str(), r.failure.c_str());
          return 2;
        }
      return 0;
    }
    if (summarize->parsed()) {
      std::vector<RunRecord> records;
      try {
        records = summarize_dir(dir);
      } catch (const Error& e) {
        if (e.code() == Errc::MissingFile || e.code() == Errc::ParseError) {
          std::fprintf(stderr, "config error: %s\n", e.what());
          return 1;
        }
        throw;
      }
      std::printf("%s", summary_table(records).c_str());
      return 0;
    }
    // selftest
    return selftest() ? 0 : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "run failure: %s\n", e.what());
    return 2;
  }
}
