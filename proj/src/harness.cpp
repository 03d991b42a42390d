// SPDX-License-Identifier: Apache-2.0

#include "pact/harness.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "pact/tcp_transport.hpp"

namespace pact {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) {
    // allow comma-separated lists too
    std::string cur;
    for (char c : tok) {
      if (c == ',') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

[[noreturn]] void parse_fail(int line, const std::string& what) {
  raise(Errc::ParseError, "line " + std::to_string(line) + ": " + what);
}

double to_double(const std::string& v, int line) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) parse_fail(line, "trailing junk in number '" + v + "'");
    return d;
  } catch (const Error&) {
    throw;
  } catch (...) {
    parse_fail(line, "expected a number, got '" + v + "'");
  }
}

uint64_t to_u64(const std::string& v, int line) {
  const double d = to_double(v, line);
  if (d < 0 || d != std::floor(d)) parse_fail(line, "expected a non-negative integer, got '" + v + "'");
  return static_cast<uint64_t>(d);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string ratio_tag(float r) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", static_cast<double>(r));
  std::string s = buf;
  for (char& c : s)
    if (c == '.') c = 'p';
  return s;
}

}  // namespace

ModeSpec parse_mode(const std::string& name) {
  const std::string n = lower(trim(name));
  ModeSpec m;
  m.name = n;
  if (n == "full") {
    m.mode = SyncMode::FullAllReduce;
  } else if (n == "fp16") {
    m.mode = SyncMode::Fp16AllReduce;
  } else if (n == "packed") {
    m.mode = SyncMode::PackedAllReduce;
    m.uses_pruning = true;
  } else if (n == "packed_ternary") {
    m.mode = SyncMode::TernaryAllGather;
    m.uses_pruning = true;
  } else if (n.rfind("topk", 0) == 0) {
    m.mode = SyncMode::TopKAllGather;
    const std::string rate = n.substr(4);
    try {
      m.topk_rate = std::stof(rate);
    } catch (...) {
      raise(Errc::ParseError, "bad topk rate in mode '" + name + "'");
    }
    if (!(m.topk_rate > 0.0f && m.topk_rate <= 1.0f))
      raise(Errc::InvalidRate, "topk rate outside (0,1] in mode '" + name + "'");
  } else {
    raise(Errc::ParseError, "unknown sync mode '" + name + "'");
  }
  return m;
}

double parse_bandwidth(const std::string& text) {
  const std::string t = lower(trim(text));
  double mult = 1.0;
  std::string num = t;
  auto ends_with = [&](const std::string& suf) {
    return t.size() > suf.size() && t.compare(t.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends_with("gbps")) {
    mult = 1e9;
    num = t.substr(0, t.size() - 4);
  } else if (ends_with("mbps")) {
    mult = 1e6;
    num = t.substr(0, t.size() - 4);
  } else if (ends_with("kbps")) {
    mult = 1e3;
    num = t.substr(0, t.size() - 4);
  } else if (ends_with("bps")) {
    num = t.substr(0, t.size() - 3);
  }
  try {
    size_t pos = 0;
    const double v = std::stod(num, &pos);
    if (pos != num.size() || !(v > 0)) throw std::runtime_error("bad");
    return v * mult;
  } catch (...) {
    raise(Errc::ParseError, "bad bandwidth '" + text + "' (want e.g. 100Mbps, 1Gbps)");
  }
}

void ExperimentConfig::validate() const {
  if (modes.empty()) raise(Errc::ParseError, "at least one sync mode is required");
  if (bandwidths.empty()) raise(Errc::ParseError, "at least one bandwidth is required");
  if (target_accuracy && !(*target_accuracy > 0.0 && *target_accuracy < 1.0))
    raise(Errc::ParseError, "target accuracy must lie in (0, 1)");
  for (float r : prune_ratios)
    if (!(r >= 0.0f && r < 1.0f)) raise(Errc::InvalidRatio, "prune ratio outside [0, 1)");
  train.validate();
}

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.bandwidths = {{"100Mbps", {1e8, 0.0}}, {"500Mbps", {5e8, 0.0}}, {"1Gbps", {1e9, 0.0}}};
  cfg.modes = {parse_mode("full"),   parse_mode("fp16"),   parse_mode("topk0.1"),
               parse_mode("topk0.01"), parse_mode("packed"), parse_mode("packed_ternary")};
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::MissingFile, "cannot open config '" + path + "'");

  ExperimentConfig cfg = default_config();
  double latency_s = 0.0;
  std::vector<std::string> bw_names;
  bool have_bw = false;

  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    const size_t eq = line.find('=');
    if (eq == std::string::npos) parse_fail(lineno, "expected 'key = value', got '" + trim(raw) + "'");
    const std::string key = lower(trim(line.substr(0, eq)));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) parse_fail(lineno, "empty key");
    if (value.empty()) parse_fail(lineno, "empty value for key '" + key + "'");

    if (key == "scenario") {
      cfg.scenario = value;
    } else if (key == "seed") {
      cfg.train.seed = to_u64(value, lineno);
    } else if (key == "epochs") {
      cfg.train.epochs = static_cast<uint32_t>(to_u64(value, lineno));
    } else if (key == "batch_size") {
      cfg.train.batch_size = static_cast<uint32_t>(to_u64(value, lineno));
    } else if (key == "learning_rate") {
      cfg.train.learning_rate = static_cast<float>(to_double(value, lineno));
    } else if (key == "workers") {
      cfg.train.workers = static_cast<uint32_t>(to_u64(value, lineno));
    } else if (key == "warmup_epochs") {
      cfg.train.warmup_epochs = static_cast<uint32_t>(to_u64(value, lineno));
    } else if (key == "stability_threshold") {
      cfg.train.stability_threshold = static_cast<uint32_t>(to_u64(value, lineno));
    } else if (key == "prune_method") {
      const std::string v = lower(value);
      if (v == "magnitude")
        cfg.train.prune.method = PruneMethod::Magnitude;
      else if (v == "grasp")
        cfg.train.prune.method = PruneMethod::Grasp;
      else
        parse_fail(lineno, "prune_method must be magnitude or grasp");
    } else if (key == "grasp_epsilon") {
      cfg.train.prune.grasp_epsilon = static_cast<float>(to_double(value, lineno));
    } else if (key == "grasp_keep") {
      const std::string v = lower(value);
      if (v == "most_negative")
        cfg.train.prune.grasp_keep = GraspKeep::MostNegative;
      else if (v == "most_positive")
        cfg.train.prune.grasp_keep = GraspKeep::MostPositive;
      else
        parse_fail(lineno, "grasp_keep must be most_negative or most_positive");
    } else if (key == "prune_ratios" || key == "prune_ratio") {
      cfg.prune_ratios.clear();
      for (const auto& tok : split_ws(value))
        cfg.prune_ratios.push_back(static_cast<float>(to_double(tok, lineno)));
      if (cfg.prune_ratios.empty()) parse_fail(lineno, "no ratios given");
    } else if (key == "samples") {
      cfg.train.samples = to_u64(value, lineno);
    } else if (key == "feature_dim") {
      cfg.train.feature_dim = to_u64(value, lineno);
    } else if (key == "hidden") {
      cfg.train.hidden = to_u64(value, lineno);
    } else if (key == "classes") {
      cfg.train.classes = to_u64(value, lineno);
    } else if (key == "mean_scale") {
      cfg.train.mean_scale = static_cast<float>(to_double(value, lineno));
    } else if (key == "compute_seconds_per_iter") {
      cfg.train.compute_seconds_per_iter = to_double(value, lineno);
    } else if (key == "bandwidths" || key == "bandwidth") {
      bw_names = split_ws(value);
      if (bw_names.empty()) parse_fail(lineno, "no bandwidths given");
      have_bw = true;
    } else if (key == "latency_s") {
      latency_s = to_double(value, lineno);
      if (latency_s < 0) parse_fail(lineno, "latency must be non-negative");
    } else if (key == "modes") {
      cfg.modes.clear();
      for (const auto& tok : split_ws(value)) cfg.modes.push_back(parse_mode(tok));
    } else if (key == "target_accuracy") {
      if (lower(value) == "auto")
        cfg.target_accuracy.reset();
      else
        cfg.target_accuracy = to_double(value, lineno);
    } else if (key == "out") {
      cfg.out_dir = value;
    } else if (key == "transport") {
      const std::string v = lower(value);
      if (v == "sim")
        cfg.transport = TransportKind::Sim;
      else if (v == "tcp")
        cfg.transport = TransportKind::Tcp;
      else
        parse_fail(lineno, "transport must be sim or tcp");
    } else if (key == "parallel_cells") {
      const std::string v = lower(value);
      if (v == "true" || v == "1")
        cfg.parallel_cells = true;
      else if (v == "false" || v == "0")
        cfg.parallel_cells = false;
      else
        parse_fail(lineno, "parallel_cells must be true or false");
    } else {
      raise(Errc::UnknownKey, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }

  if (have_bw || !bw_names.empty()) {
    cfg.bandwidths.clear();
    for (const auto& name : bw_names)
      cfg.bandwidths.emplace_back(name, LinkModel{parse_bandwidth(name), latency_s});
  } else if (latency_s != 0.0) {
    for (auto& [name, link] : cfg.bandwidths) link.latency_s = latency_s;
  }

  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string epochs_csv(const std::vector<EpochMetrics>& epochs) {
  std::string out = "epoch,loss,test_acc,bytes,sim_seconds_cum,mode\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch);
    out += ',';
    out += fmt_double(e.train_loss);
    out += ',';
    out += fmt_double(e.test_accuracy);
    out += ',';
    out += std::to_string(e.bytes_on_wire);
    out += ',';
    out += fmt_double(e.sim_seconds_cum);
    out += ',';
    out += mode_histogram(e.mode_counts);
    out += '\n';
  }
  return out;
}

std::vector<EpochMetrics> parse_epochs_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,loss,test_acc,bytes,sim_seconds_cum,mode")
    raise(Errc::ParseError, "bad metrics CSV header");
  std::vector<EpochMetrics> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        cols.push_back(cur);
        cur.clear();
      } else
        cur += c;
    }
    cols.push_back(cur);
    if (cols.size() != 6) parse_fail(lineno, "expected 6 columns");
    EpochMetrics e;
    e.epoch = static_cast<uint32_t>(to_u64(cols[0], lineno));
    e.train_loss = to_double(cols[1], lineno);
    e.test_accuracy = to_double(cols[2], lineno);
    e.bytes_on_wire = to_u64(cols[3], lineno);
    e.sim_seconds_cum = to_double(cols[4], lineno);
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment grid
// ---------------------------------------------------------------------------

namespace {

struct Cell {
  std::string bandwidth_name;
  LinkModel link;
  ModeSpec mode;
  float ratio = 0.0f;
  std::string name;
};

std::vector<Cell> build_grid(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  for (const auto& [bw_name, link] : cfg.bandwidths) {
    for (const auto& mode : cfg.modes) {
      if (mode.uses_pruning) {
        for (float r : cfg.prune_ratios) {
          Cell c{bw_name, link, mode, r, ""};
          c.name = "bw" + bw_name + "_" + mode.name + "_r" + ratio_tag(r);
          cells.push_back(std::move(c));
        }
      } else {
        Cell c{bw_name, link, mode, 0.0f, ""};
        c.name = "bw" + bw_name + "_" + mode.name;
        cells.push_back(std::move(c));
      }
    }
  }
  return cells;
}

TrainConfig cell_train_config(const ExperimentConfig& cfg, const Cell& cell) {
  TrainConfig tc = cfg.train;
  tc.sync_mode = cell.mode.mode;
  tc.topk_rate = cell.mode.topk_rate;
  tc.prune.ratio = cell.mode.uses_pruning ? cell.ratio : 0.0f;
  return tc;
}

/// TCP cells fork one process per worker; rank 0 reports its metrics back
/// over a pipe. Listeners are created pre-fork so the ring needs no
/// rendezvous service.
std::vector<EpochMetrics> run_cell_tcp(const TrainConfig& tc, const LinkModel& link) {
  const int n = static_cast<int>(tc.workers);
  std::vector<TcpListener> listeners;
  listeners.reserve(n);
  std::vector<uint16_t> ports;
  for (int i = 0; i < n; ++i) {
    listeners.emplace_back(0);
    ports.push_back(listeners.back().port());
  }

  int pipe_fd[2];
  if (::pipe(pipe_fd) != 0) raise(Errc::RunFailure, "pipe() failed");

  std::vector<pid_t> pids;
  for (int r = 0; r < n; ++r) {
    const pid_t pid = ::fork();
    if (pid < 0) raise(Errc::RunFailure, "fork() failed");
    if (pid == 0) {
      int status = 0;
      try {
        ::close(pipe_fd[0]);
        const auto [train, test] =
            synthetic_dataset(tc.seed, tc.samples, tc.feature_dim, tc.classes, tc.mean_scale);
        WorkerTopology topo = WorkerTopology::uniform(n, link);
        const int next = (r + 1) % n;
        TcpTransport transport(listeners[r], "127.0.0.1", ports[next]);
        Comm comm(topo, r, std::shared_ptr<Transport>(&transport, [](Transport*) {}));
        WorkerResult res = run_worker(r, tc, comm, train, test);
        if (r == 0) {
          const std::string csv = epochs_csv(res.epochs);
          size_t off = 0;
          while (off < csv.size()) {
            const ssize_t w = ::write(pipe_fd[1], csv.data() + off, csv.size() - off);
            if (w <= 0) break;
            off += static_cast<size_t>(w);
          }
        }
      } catch (...) {
        status = 1;
      }
      ::close(pipe_fd[1]);
      ::_exit(status);
    }
    pids.push_back(pid);
  }

  ::close(pipe_fd[1]);
  std::string csv;
  char buf[4096];
  for (;;) {
    const ssize_t got = ::read(pipe_fd[0], buf, sizeof(buf));
    if (got <= 0) break;
    csv.append(buf, static_cast<size_t>(got));
  }
  ::close(pipe_fd[0]);

  bool ok = true;
  for (pid_t pid : pids) {
    int st = 0;
    ::waitpid(pid, &st, 0);
    if (!WIFEXITED(st) || WEXITSTATUS(st) != 0) ok = false;
  }
  if (!ok || csv.empty()) raise(Errc::RunFailure, "tcp worker process failed");
  return parse_epochs_csv(csv);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::RunFailure, "cannot write " + path.string());
  out << content;
}

}  // namespace

void finalize_records(std::vector<RunRecord>& records, std::optional<double> explicit_target) {
  // resolve the target per bandwidth: explicit, else 90% of Full's final acc
  std::map<std::string, double> target_by_bw;
  for (const auto& r : records) {
    if (r.mode_name == "full" && !r.failure.empty()) continue;
    if (r.mode_name == "full" && !r.epochs.empty())
      target_by_bw[r.bandwidth_name] = 0.9 * r.epochs.back().test_accuracy;
  }

  for (auto& r : records) {
    if (!r.epochs.empty()) {
      r.final_accuracy = r.epochs.back().test_accuracy;
      r.total_bytes = 0;
      for (const auto& e : r.epochs) r.total_bytes += e.bytes_on_wire;
    }
    double target = 0.0;
    if (explicit_target)
      target = *explicit_target;
    else if (auto it = target_by_bw.find(r.bandwidth_name); it != target_by_bw.end())
      target = it->second;
    r.target_accuracy = target;

    r.tta_seconds.reset();
    if (target > 0.0) {
      for (const auto& e : r.epochs) {
        if (e.test_accuracy >= target) {
          r.tta_seconds = e.sim_seconds_cum;
          break;
        }
      }
    }
  }

  std::map<std::string, double> full_tta;
  for (const auto& r : records)
    if (r.mode_name == "full" && r.tta_seconds) full_tta[r.bandwidth_name] = *r.tta_seconds;
  for (auto& r : records) {
    r.speedup_vs_full.reset();
    if (r.tta_seconds && *r.tta_seconds > 0.0) {
      if (auto it = full_tta.find(r.bandwidth_name); it != full_tta.end())
        r.speedup_vs_full = it->second / *r.tta_seconds;
    }
  }

  std::stable_sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
    if (a.bandwidth_name != b.bandwidth_name) return a.bandwidth_name < b.bandwidth_name;
    if (a.mode_name != b.mode_name) return a.mode_name < b.mode_name;
    return a.prune_ratio < b.prune_ratio;
  });
}

std::string summary_csv(const std::vector<RunRecord>& records) {
  std::string out =
      "bandwidth,mode,prune_ratio,target_acc,tta_seconds,speedup_vs_full,final_acc,total_bytes,"
      "status\n";
  for (const auto& r : records) {
    out += r.bandwidth_name + "," + r.mode_name + "," + fmt_double(r.prune_ratio) + "," +
           fmt_double(r.target_accuracy) + ",";
    out += r.tta_seconds ? fmt_double(*r.tta_seconds) : "";
    out += ",";
    out += r.speedup_vs_full ? fmt_double(*r.speedup_vs_full) : "";
    out += ",";
    out += fmt_double(r.final_accuracy) + "," + std::to_string(r.total_bytes) + ",";
    if (!r.failure.empty())
      out += "failed: " + r.failure;
    else if (!r.tta_seconds)
      out += "not converged";
    else
      out += "ok";
    out += '\n';
  }
  return out;
}

std::string summary_table(const std::vector<RunRecord>& records) {
  std::vector<std::array<std::string, 7>> rows;
  rows.push_back({"bandwidth", "mode", "ratio", "tta_s", "speedup", "final_acc", "status"});
  for (const auto& r : records) {
    std::array<std::string, 7> row;
    row[0] = r.bandwidth_name;
    row[1] = r.mode_name;
    row[2] = fmt_double(r.prune_ratio);
    row[3] = r.tta_seconds ? fmt_double(*r.tta_seconds) : "-";
    row[4] = r.speedup_vs_full ? fmt_double(*r.speedup_vs_full) : "-";
    row[5] = fmt_double(r.final_accuracy);
    row[6] = !r.failure.empty() ? ("failed: " + r.failure)
                                : (!r.tta_seconds ? "not converged" : "ok");
    rows.push_back(std::move(row));
  }
  std::array<size_t, 7> width{};
  for (const auto& row : rows)
    for (size_t c = 0; c < 7; ++c) width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (const auto& row : rows) {
    for (size_t c = 0; c < 7; ++c) {
      out += row[c];
      if (c + 1 < 7) out.append(width[c] - row[c].size() + 2, ' ');
    }
    out += '\n';
  }
  return out;
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::filesystem::path out_dir(cfg.out_dir);
  std::filesystem::create_directories(out_dir / "cells");

  const std::vector<Cell> cells = build_grid(cfg);
  std::vector<RunRecord> records(cells.size());

  auto run_cell = [&](size_t i) {
    const Cell& cell = cells[i];
    RunRecord& rec = records[i];
    rec.bandwidth_name = cell.bandwidth_name;
    rec.mode_name = cell.mode.name;
    rec.prune_ratio = cell.mode.uses_pruning ? cell.ratio : 0.0f;
    rec.cell_name = cell.name;
    try {
      const TrainConfig tc = cell_train_config(cfg, cell);
      if (cfg.transport == TransportKind::Tcp) {
        rec.epochs = run_cell_tcp(tc, cell.link);
      } else {
        auto workers = run_cluster_sim(tc, cell.link);
        rec.epochs = workers.front().epochs;
      }
      write_file(out_dir / "cells" / (cell.name + ".csv"), epochs_csv(rec.epochs));
    } catch (const std::exception& e) {
      rec.failure = e.what();
    }
  };

  if (cfg.parallel_cells && cfg.transport == TransportKind::Sim) {
    std::vector<std::thread> threads;
    threads.reserve(cells.size());
    for (size_t i = 0; i < cells.size(); ++i) threads.emplace_back(run_cell, i);
    for (auto& t : threads) t.join();
  } else {
    for (size_t i = 0; i < cells.size(); ++i) run_cell(i);
  }

  finalize_records(records, cfg.target_accuracy);

  std::string manifest;
  manifest += "scenario = " + cfg.scenario + "\n";
  manifest += "seed = " + std::to_string(cfg.train.seed) + "\n";
  manifest += "target_accuracy = " +
              (cfg.target_accuracy ? fmt_double(*cfg.target_accuracy) : std::string("auto")) + "\n";
  for (const auto& r : records)
    manifest += "cell = " + r.cell_name + " " + r.bandwidth_name + " " + r.mode_name + " " +
                fmt_double(r.prune_ratio) + (r.failure.empty() ? "" : " failed") + "\n";
  write_file(out_dir / "manifest.txt", manifest);
  write_file(out_dir / "summary.csv", summary_csv(records));
  write_file(out_dir / "summary.txt", summary_table(records));
  return records;
}

std::vector<RunRecord> summarize_dir(const std::string& dir) {
  const std::filesystem::path root(dir);
  std::ifstream manifest(root / "manifest.txt");
  if (!manifest) raise(Errc::MissingFile, "no manifest.txt under '" + dir + "'");

  std::optional<double> explicit_target;
  std::vector<RunRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) parse_fail(lineno, "bad manifest line");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "target_accuracy" && value != "auto") {
      explicit_target = to_double(value, lineno);
    } else if (key == "cell") {
      const auto toks = split_ws(value);
      if (toks.size() < 4) parse_fail(lineno, "bad cell entry");
      RunRecord rec;
      rec.cell_name = toks[0];
      rec.bandwidth_name = toks[1];
      rec.mode_name = toks[2];
      rec.prune_ratio = static_cast<float>(to_double(toks[3], lineno));
      if (toks.size() > 4 && toks[4] == "failed") {
        rec.failure = "recorded failure";
      } else {
        std::ifstream cell(root / "cells" / (rec.cell_name + ".csv"));
        if (!cell) {
          rec.failure = "missing cell csv";
        } else {
          std::stringstream ss;
          ss << cell.rdbuf();
          rec.epochs = parse_epochs_csv(ss.str());
        }
      }
      records.push_back(std::move(rec));
    }
  }
  finalize_records(records, explicit_target);
  write_file(root / "summary.csv", summary_csv(records));
  write_file(root / "summary.txt", summary_table(records));
  return records;
}

}  // namespace pact
