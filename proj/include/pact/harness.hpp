// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: plain-text configs, the (bandwidth x mode x
// ratio) grid, per-cell CSV metrics, and TTA/speedup summaries.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pact/trainer.hpp"

namespace pact {

enum class TransportKind { Sim, Tcp };

struct ModeSpec {
  std::string name;  // full | fp16 | topk<rate> | packed | packed_ternary
  SyncMode mode = SyncMode::FullAllReduce;
  float topk_rate = 0.1f;
  bool uses_pruning = false;
};

ModeSpec parse_mode(const std::string& name);

/// "100Mbps" -> 1e8 and friends. Accepted suffixes: bps, Kbps, Mbps, Gbps.
double parse_bandwidth(const std::string& text);

struct ExperimentConfig {
  std::string scenario = "default";
  TrainConfig train;
  std::vector<std::pair<std::string, LinkModel>> bandwidths;
  std::vector<ModeSpec> modes;
  std::vector<float> prune_ratios{0.5f};
  std::optional<double> target_accuracy;  // unset = 90% of the Full baseline's final accuracy
  std::string out_dir = "runs";
  TransportKind transport = TransportKind::Sim;
  bool parallel_cells = false;

  void validate() const;
};

/// Parses a `key = value` config file. Unknown keys are rejected; parse
/// failures name the offending line.
ExperimentConfig parse_config(const std::string& path);

/// Applies defaults for everything a minimal config leaves out.
ExperimentConfig default_config();

struct RunRecord {
  std::string bandwidth_name;
  std::string mode_name;
  float prune_ratio = 0.0f;  // 0 for modes that train dense
  std::string cell_name;     // file stem of the per-epoch CSV
  std::vector<EpochMetrics> epochs;
  double target_accuracy = 0.0;
  std::optional<double> tta_seconds;  // unset when the target was never reached
  std::optional<double> speedup_vs_full;
  double final_accuracy = 0.0;
  uint64_t total_bytes = 0;
  std::string failure;  // non-empty when the cell failed to run
};

/// Runs every cell of the grid with shared seeds, writes one CSV per cell
/// plus summary.csv / summary.txt / manifest under cfg.out_dir.
std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg);

/// Derives TTA and speedups; pure function of the per-epoch metrics.
void finalize_records(std::vector<RunRecord>& records, std::optional<double> explicit_target);

/// Aligned plain-text summary table.
std::string summary_table(const std::vector<RunRecord>& records);

std::string summary_csv(const std::vector<RunRecord>& records);

/// Recomputes the summary from a previous run's output directory.
std::vector<RunRecord> summarize_dir(const std::string& dir);

// CSV schema: epoch,loss,test_acc,bytes,sim_seconds_cum,mode (LF endings)
std::string epochs_csv(const std::vector<EpochMetrics>& epochs);
std::vector<EpochMetrics> parse_epochs_csv(const std::string& text);

}  // namespace pact
