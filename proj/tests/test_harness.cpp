// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pact/harness.hpp"

using namespace pact;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("pact_test_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tiny_experiment_body() {
  return "epochs = 3\n"
         "workers = 2\n"
         "batch_size = 16\n"
         "samples = 600\n"
         "feature_dim = 16\n"
         "hidden = 24\n"
         "classes = 4\n"
         "warmup_epochs = 1\n"
         "prune_ratios = 0.5\n"
         "seed = 5\n";
}

}  // namespace

TEST_CASE("bandwidth units parse to bits per second") {
  CHECK(parse_bandwidth("100Mbps") == 1e8);
  CHECK(parse_bandwidth("500mbps") == 5e8);
  CHECK(parse_bandwidth("1Gbps") == 1e9);
  CHECK(parse_bandwidth("250Kbps") == 2.5e5);
  CHECK(parse_bandwidth("9600bps") == 9600.0);
  CHECK(parse_bandwidth("1.5Gbps") == 1.5e9);
  CHECK_THROWS_AS(parse_bandwidth("fast"), Error);
  CHECK_THROWS_AS(parse_bandwidth("-3Mbps"), Error);
}

TEST_CASE("mode names parse to sync strategies") {
  CHECK(parse_mode("full").mode == SyncMode::FullAllReduce);
  CHECK(parse_mode("fp16").mode == SyncMode::Fp16AllReduce);
  CHECK(parse_mode("packed").uses_pruning);
  CHECK(parse_mode("packed_ternary").mode == SyncMode::TernaryAllGather);
  ModeSpec topk = parse_mode("topk0.01");
  CHECK(topk.mode == SyncMode::TopKAllGather);
  CHECK(topk.topk_rate == doctest::Approx(0.01f));
  CHECK_THROWS_AS(parse_mode("zstd"), Error);
}

TEST_CASE("minimal config applies the documented defaults") {
  const fs::path dir = temp_dir("cfg_min");
  write(dir / "min.cfg", "scenario = smoke\n");
  ExperimentConfig cfg = parse_config((dir / "min.cfg").string());
  CHECK(cfg.scenario == "smoke");
  CHECK(cfg.train.epochs == 100);
  CHECK(cfg.train.batch_size == 32);
  CHECK(cfg.train.workers == 8);
  CHECK(cfg.train.learning_rate == doctest::Approx(0.05f));
  CHECK(cfg.bandwidths.size() == 3);
  CHECK(cfg.bandwidths[0].second.bandwidth_bps == 1e8);
  CHECK(cfg.modes.size() == 6);
  CHECK(cfg.prune_ratios == std::vector<float>{0.5f});
  CHECK_FALSE(cfg.target_accuracy.has_value());
  fs::remove_all(dir);
}

TEST_CASE("config errors carry the line number and the right code") {
  const fs::path dir = temp_dir("cfg_err");

  write(dir / "bad.cfg", "epochs = 10\nthis line has no equals\n");
  try {
    parse_config((dir / "bad.cfg").string());
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ParseError);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  write(dir / "unknown.cfg", "epochz = 10\n");
  try {
    parse_config((dir / "unknown.cfg").string());
    FAIL("expected UnknownKey");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownKey);
  }

  try {
    parse_config((dir / "missing.cfg").string());
    FAIL("expected MissingFile");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MissingFile);
  }

  write(dir / "badnum.cfg", "epochs = eleven\n");
  CHECK_THROWS_AS(parse_config((dir / "badnum.cfg").string()), Error);
  fs::remove_all(dir);
}

TEST_CASE("comments, blank lines, and commas are accepted") {
  const fs::path dir = temp_dir("cfg_fmt");
  write(dir / "c.cfg",
        "# a comment\n"
        "\n"
        "modes = full, packed   # trailing comment\n"
        "bandwidths = 100Mbps, 1Gbps\n");
  ExperimentConfig cfg = parse_config((dir / "c.cfg").string());
  CHECK(cfg.modes.size() == 2);
  CHECK(cfg.bandwidths.size() == 2);
  fs::remove_all(dir);
}

TEST_CASE("epoch CSV round-trips through the parser") {
  std::vector<EpochMetrics> epochs(2);
  epochs[0].epoch = 0;
  epochs[0].train_loss = 2.25;
  epochs[0].test_accuracy = 0.5;
  epochs[0].bytes_on_wire = 12345;
  epochs[0].sim_seconds_cum = 1.5;
  epochs[0].mode_counts[0] = 15;
  epochs[1].epoch = 1;
  epochs[1].train_loss = 1.125;
  epochs[1].test_accuracy = 0.75;
  epochs[1].bytes_on_wire = 777;
  epochs[1].sim_seconds_cum = 3.0;
  epochs[1].mode_counts[1] = 15;

  const std::string csv = epochs_csv(epochs);
  CHECK(csv.rfind("epoch,loss,test_acc,bytes,sim_seconds_cum,mode\n", 0) == 0);
  const auto back = parse_epochs_csv(csv);
  REQUIRE(back.size() == 2);
  CHECK(back[0].train_loss == 2.25);
  CHECK(back[1].bytes_on_wire == 777);
  CHECK(back[1].sim_seconds_cum == 3.0);
}

TEST_CASE("run_experiment writes cell CSVs, summary, and manifest") {
  const fs::path dir = temp_dir("exp");
  write(dir / "exp.cfg", tiny_experiment_body() +
                             "modes = full packed\n"
                             "bandwidths = 100Mbps\n"
                             "out = " + (dir / "out").string() + "\n");
  ExperimentConfig cfg = parse_config((dir / "exp.cfg").string());
  const auto records = run_experiment(cfg);

  REQUIRE(records.size() == 2);
  CHECK(fs::exists(dir / "out" / "cells" / "bw100Mbps_full.csv"));
  CHECK(fs::exists(dir / "out" / "cells" / "bw100Mbps_packed_r0p5.csv"));
  CHECK(fs::exists(dir / "out" / "summary.csv"));
  CHECK(fs::exists(dir / "out" / "summary.txt"));
  CHECK(fs::exists(dir / "out" / "manifest.txt"));

  for (const auto& r : records) CHECK(r.failure.empty());

  // the Full row is its own baseline: speedup exactly 1 when it converges
  for (const auto& r : records)
    if (r.mode_name == "full" && r.tta_seconds) CHECK(*r.speedup_vs_full == 1.0);
  fs::remove_all(dir);
}

TEST_CASE("reruns with the same config are byte-identical") {
  const fs::path dir = temp_dir("rerun");
  for (const char* out : {"a", "b"}) {
    write(dir / "r.cfg", tiny_experiment_body() +
                             "modes = full packed\n"
                             "bandwidths = 100Mbps\n"
                             "out = " + (dir / out).string() + "\n");
    run_experiment(parse_config((dir / "r.cfg").string()));
  }
  CHECK(slurp(dir / "a" / "summary.csv") == slurp(dir / "b" / "summary.csv"));
  CHECK(slurp(dir / "a" / "cells" / "bw100Mbps_full.csv") ==
        slurp(dir / "b" / "cells" / "bw100Mbps_full.csv"));
  CHECK(slurp(dir / "a" / "cells" / "bw100Mbps_packed_r0p5.csv") ==
        slurp(dir / "b" / "cells" / "bw100Mbps_packed_r0p5.csv"));
  fs::remove_all(dir);
}

TEST_CASE("accuracy curves are identical across bandwidths within a mode") {
  const fs::path dir = temp_dir("bw_inv");
  write(dir / "e.cfg", tiny_experiment_body() +
                           "modes = packed\n"
                           "bandwidths = 100Mbps 1Gbps\n"
                           "out = " + (dir / "out").string() + "\n");
  const auto records = run_experiment(parse_config((dir / "e.cfg").string()));
  REQUIRE(records.size() == 2);
  REQUIRE(records[0].epochs.size() == records[1].epochs.size());
  for (size_t e = 0; e < records[0].epochs.size(); ++e) {
    CHECK(records[0].epochs[e].test_accuracy == records[1].epochs[e].test_accuracy);
    CHECK(records[0].epochs[e].train_loss == records[1].epochs[e].train_loss);
    // only simulated time may differ
    CHECK(records[0].epochs[e].sim_seconds_cum != records[1].epochs[e].sim_seconds_cum);
  }
  fs::remove_all(dir);
}

TEST_CASE("summarize_dir recomputes the same summary from the CSVs") {
  const fs::path dir = temp_dir("resum");
  write(dir / "e.cfg", tiny_experiment_body() +
                           "modes = full packed\n"
                           "bandwidths = 100Mbps\n"
                           "out = " + (dir / "out").string() + "\n");
  run_experiment(parse_config((dir / "e.cfg").string()));
  const std::string before = slurp(dir / "out" / "summary.csv");
  const auto records = summarize_dir((dir / "out").string());
  CHECK(slurp(dir / "out" / "summary.csv") == before);
  CHECK(records.size() == 2);
  fs::remove_all(dir);
}

TEST_CASE("an unreachable target is flagged not converged") {
  const fs::path dir = temp_dir("noconv");
  write(dir / "e.cfg", tiny_experiment_body() +
                           "modes = full\n"
                           "bandwidths = 100Mbps\n"
                           "target_accuracy = 0.999\n"
                           "out = " + (dir / "out").string() + "\n");
  const auto records = run_experiment(parse_config((dir / "e.cfg").string()));
  REQUIRE(records.size() == 1);
  CHECK_FALSE(records[0].tta_seconds.has_value());
  const std::string summary = slurp(dir / "out" / "summary.csv");
  CHECK(summary.find("not converged") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("tcp transport cells produce the same metrics as the simulated fabric") {
  const fs::path dir = temp_dir("tcp_cell");
  for (const char* transport : {"sim", "tcp"}) {
    write(dir / "t.cfg", tiny_experiment_body() +
                             "epochs = 2\n"
                             "modes = full\n"
                             "bandwidths = 1Gbps\n"
                             "transport = " + transport + "\n" +
                             "out = " + (dir / transport).string() + "\n");
    const auto records = run_experiment(parse_config((dir / "t.cfg").string()));
    REQUIRE(records.size() == 1);
    REQUIRE(records[0].failure.empty());
  }
  CHECK(slurp(dir / "sim" / "cells" / "bw1Gbps_full.csv") ==
        slurp(dir / "tcp" / "cells" / "bw1Gbps_full.csv"));
  fs::remove_all(dir);
}

TEST_CASE("summary rows are ordered by (bandwidth, mode, ratio)") {
  std::vector<RunRecord> records(3);
  records[0].bandwidth_name = "1Gbps";
  records[0].mode_name = "packed";
  records[1].bandwidth_name = "100Mbps";
  records[1].mode_name = "full";
  records[2].bandwidth_name = "100Mbps";
  records[2].mode_name = "fp16";
  finalize_records(records, 0.5);
  CHECK(records[0].bandwidth_name == "100Mbps");
  CHECK(records[0].mode_name == "fp16");
  CHECK(records[1].mode_name == "full");
  CHECK(records[2].bandwidth_name == "1Gbps");
}
