#pragma once

// Command bodies for the `immunize` tool. Each command validates its inputs,
// writes manifest.json into the output directory, then computes.
//
// Exit codes: 0 ok, 1 verification failure, 2 config error, 3 data or I/O
// error, 4 numerical abort.

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "immunize/config.hpp"
#include "immunize/datasets.hpp"
#include "immunize/evaluation.hpp"
#include "immunize/immunizer.hpp"
#include "immunize/io.hpp"
#include "immunize/probe.hpp"
#include "immunize/verify.hpp"

namespace immunize::cli {

namespace fs = std::filesystem;

inline constexpr const char* version = "0.1.0";

enum exit_code : int { exit_ok = 0, exit_verify = 1, exit_config = 2, exit_data = 3, exit_numeric = 4 };

struct Task {
  std::string key;
  Dataset d_p;
  Dataset d_h;
};

// --- inputs ---------------------------------------------------------------------

inline std::vector<fs::path> input_files(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case DataKind::tabular: return {cfg.tabular.csv_path};
    case DataKind::idx: return {cfg.idx.images, cfg.idx.labels};
    case DataKind::synthetic: return {};
  }
  return {};
}

inline std::vector<Task> load_tasks(const ExperimentConfig& cfg) {
  std::vector<Task> tasks;
  switch (cfg.kind) {
    case DataKind::tabular: {
      auto [p, h] = load_tabular(cfg.tabular);
      tasks.push_back({cfg.name, std::move(p), std::move(h)});
      break;
    }
    case DataKind::idx: {
      const IdxData data = read_idx(cfg.idx.images, cfg.idx.labels);
      for (const auto& t : cfg.idx.tasks)
        tasks.push_back({t.key(), idx_pair(data, t.p[0], t.p[1]), idx_pair(data, t.h[0], t.h[1])});
      break;
    }
    case DataKind::synthetic: {
      auto [p, h] = synthesize(cfg.synthetic);
      tasks.push_back({cfg.name, std::move(p), std::move(h)});
      break;
    }
  }
  for (const auto& t : tasks) {
    t.d_p.validate();
    t.d_h.validate();
    if (t.d_p.dim() != t.d_h.dim())
      throw error(errc::dimension_mismatch, "task " + t.key + ": D_P and D_H have different feature counts");
    if (cfg.training.loss == LossKind::binary_cross_entropy) {
      require_binary_labels(t.d_p.Y);
      require_binary_labels(t.d_h.Y);
    }
  }
  return tasks;
}

// --- manifest -------------------------------------------------------------------

struct Manifest {
  std::string command;
  fs::path config_path;
  Json config;
  std::vector<std::pair<fs::path, std::string>> inputs;  // path, FNV-1a 64 hex
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> outputs;  // relative to the output directory
};

inline void write_manifest(const fs::path& out_dir, const Manifest& m) {
  Json doc;
  doc["tool"] = "immunize";
  doc["version"] = version;
  doc["command"] = m.command;
  if (!m.config_path.empty()) doc["config_path"] = m.config_path.string();
  doc["config"] = m.config;
  doc["inputs"] = Json::array();
  for (const auto& [path, hash] : m.inputs) doc["inputs"].push_back({{"path", path.string()}, {"fnv1a64", hash}});
  doc["seeds"] = m.seeds;
  doc["outputs"] = m.outputs;
  std::ofstream os(out_dir / "manifest.json", std::ios::binary);
  os << doc.dump(2) << "\n";
  if (!os) throw error(errc::io_failure, "cannot write " + (out_dir / "manifest.json").string());
}

inline std::vector<std::pair<fs::path, std::string>> fingerprints(const std::vector<fs::path>& files) {
  std::vector<std::pair<fs::path, std::string>> out;
  for (const auto& f : files) out.emplace_back(f, fingerprint_file(f));
  return out;
}

inline void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw error(errc::io_failure, "cannot create output directory " + dir.string());
}

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw error(errc::io_failure, "cannot write " + p.string());
  return os;
}

inline int fail(std::ostream& err, int code, const std::string& msg) {
  err << "error: " << msg << "\n";
  return code;
}

// --- single run -----------------------------------------------------------------

struct RunOutcome {
  RunRecord record;
  Matrix theta_I;
};

inline std::string run_stem(const std::string& task, Method m, std::uint64_t seed) {
  return task + "_" + std::string(to_string(m)) + "_s" + std::to_string(seed);
}

/// One training run. The RIR reference is theta0 when the config asks for it
/// and theta0 is not the identity.
inline RunOutcome run_one(const ExperimentConfig& cfg, const std::string& key, const Dataset& d_p, const Dataset& d_h,
                          Method method, std::uint64_t seed, bool with_verdict) {
  ImmunizationConfig tc = cfg.training;
  tc.method = method;
  tc.seed = seed;
  const Matrix theta0 = initial_theta(tc, d_p.dim());
  auto res = run_method(tc, d_p, d_h, theta0);
  std::optional<Matrix> ref;
  if (cfg.reference == ReferenceKind::theta0 && tc.theta_init != ThetaInit::identity) ref = theta0;
  RunOutcome out;
  out.record.method = method;
  out.record.seed = seed;
  out.record.task = key;
  if (with_verdict) {
    out.record.verdict = verdict(res.theta_I, d_p, d_h, tc.loss, cfg.thresholds, ref);
    out.record.rir = out.record.verdict->rir;
  } else {
    out.record.rir = rir(res.theta_I, covariance(d_p.X), covariance(d_h.X), ref);
  }
  out.theta_I = std::move(res.theta_I);
  out.record.report = std::move(res.report);
  return out;
}

// --- immunize -------------------------------------------------------------------

struct ImmunizeArgs {
  fs::path config;
  fs::path out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
};

inline int cmd_immunize(const ImmunizeArgs& a, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(a.config);
    if (a.method) cfg.methods = {detail::parse_method(*a.method, "--method")};
    if (a.seed) cfg.seeds = {*a.seed};
  } catch (const error& e) {
    return fail(err, exit_config, e.what());
  }

  std::vector<Task> tasks;
  Manifest man{"immunize", a.config, cfg.snapshot, {}, cfg.seeds, {}};
  try {
    man.inputs = fingerprints(input_files(cfg));
    tasks = load_tasks(cfg);
    for (const auto& t : tasks)
      for (Method m : cfg.methods)
        for (auto s : cfg.seeds) {
          const auto stem = run_stem(t.key, m, s);
          man.outputs.push_back(stem + ".theta");
          man.outputs.push_back(stem + "_telemetry.csv");
        }
    man.outputs.push_back("runs.csv");
    man.outputs.push_back("summary.csv");
    prepare_out_dir(a.out_dir);
    write_manifest(a.out_dir, man);
  } catch (const error& e) {
    return fail(err, exit_data, e.what());
  }

  std::vector<RunRecord> records;
  try {
    for (const auto& t : tasks)
      for (Method m : cfg.methods)
        for (auto s : cfg.seeds) {
          const auto stem = run_stem(t.key, m, s);
          RunOutcome r;
          try {
            r = run_one(cfg, t.key, t.d_p, t.d_h, m, s, true);
          } catch (const training_aborted& e) {
            auto os = open_out(a.out_dir / (stem + "_telemetry.csv"));
            write_telemetry_csv(os, e.report());
            throw;
          }
          write_matrix(a.out_dir / (stem + ".theta"), r.theta_I);
          auto os = open_out(a.out_dir / (stem + "_telemetry.csv"));
          write_telemetry_csv(os, r.record.report);
          for (const auto& w : r.record.report.warnings) err << "warning: " << stem << ": " << w << "\n";
          records.push_back(std::move(r.record));
        }
  } catch (const error& e) {
    if (e.code() == errc::io_failure) return fail(err, exit_data, e.what());
    return fail(err, exit_numeric, e.what());
  }

  try {
    const auto rep = experiment_report(records);
    auto runs = open_out(a.out_dir / "runs.csv");
    write_runs_csv(runs, rep);
    auto summary = open_out(a.out_dir / "summary.csv");
    write_summary_csv(summary, rep);
    write_summary_table(out, rep);
  } catch (const error& e) {
    return fail(err, exit_data, e.what());
  }
  return exit_ok;
}

// --- probe ----------------------------------------------------------------------

struct ProbeArgs {
  fs::path config;
  std::optional<fs::path> theta;  // absent together with identity == true
  bool identity = false;
  int iters = 200;
  fs::path out_dir;
};

inline int cmd_probe(const ProbeArgs& a, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    if (a.identity == a.theta.has_value()) throw error(errc::invalid_config, "give exactly one of --theta or --identity");
    if (a.iters < 1) throw error(errc::invalid_config, "--iters must be >= 1");
    cfg = load_config(a.config);
  } catch (const error& e) {
    return fail(err, exit_config, e.what());
  }

  Task task;
  Matrix theta;
  Manifest man{"probe", a.config, cfg.snapshot, {}, {}, {"probe.csv"}};
  try {
    auto files = input_files(cfg);
    if (a.theta) files.push_back(*a.theta);
    man.inputs = fingerprints(files);
    task = load_tasks(cfg).front();
    theta = a.theta ? read_matrix(*a.theta) : Matrix::Identity(task.d_p.dim(), task.d_p.dim());
    if (theta.rows() != task.d_p.dim() || theta.cols() != task.d_p.dim())
      throw error(errc::dimension_mismatch, "theta is " + std::to_string(theta.rows()) + "x" +
                                                std::to_string(theta.cols()) + " but the data has " +
                                                std::to_string(task.d_p.dim()) + " features");
    prepare_out_dir(a.out_dir);
    write_manifest(a.out_dir, man);
  } catch (const error& e) {
    return fail(err, exit_data, e.what());
  }

  try {
    auto os = open_out(a.out_dir / "probe.csv");
    bool header = true;
    for (const auto& [label, ds] : {std::pair<std::string, const Dataset*>{"D_P", &task.d_p}, {"D_H", &task.d_h}}) {
      const ProbeProblem p{ds->X, ds->Y, theta, LossKind::squared_error};
      const auto tr = gd_exact_line_search(p, Matrix::Zero(theta.cols(), ds->Y.cols()), a.iters);
      write_trajectory_csv(os, tr, label, header);
      header = false;
      out << label << ": norm ratio " << format_double(tr.norm_ratios.back()) << " after " << tr.steps() - 1
          << " steps\n";
    }
  } catch (const error& e) {
    if (e.code() == errc::io_failure) return fail(err, exit_data, e.what());
    return fail(err, exit_numeric, e.what());
  }
  return exit_ok;
}

// --- verify ---------------------------------------------------------------------

inline int cmd_verify(const std::string& level, std::uint64_t seed, std::ostream& out, std::ostream& err,
                      const verify::Hooks& hooks = {}) {
  verify::Level lv;
  if (level == "fast") {
    lv = verify::Level::fast;
  } else if (level == "full") {
    lv = verify::Level::full;
  } else {
    return fail(err, exit_config, "--level must be fast or full");
  }
  const auto rep = verify::run(lv, seed, hooks);
  verify::write_report(out, rep);
  return rep.all_passed() ? exit_ok : exit_verify;
}

// --- pairs ----------------------------------------------------------------------

struct PairsArgs {
  fs::path config;
  std::string pairs = "all";
  fs::path out_dir;
  unsigned jobs = 0;  // 0: hardware concurrency
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
};

/// "all" or a comma-separated list of "p-h" task indices, where task d
/// separates digit d from digit (d + 1) mod 10.
inline std::vector<std::pair<int, int>> parse_pair_list(const std::string& s) {
  std::vector<std::pair<int, int>> out;
  if (s == "all") {
    for (int p = 0; p < 10; ++p)
      for (int h = 0; h < 10; ++h)
        if (p != h) out.emplace_back(p, h);
    return out;
  }
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int p = -1, h = -1;
    char dash = 0;
    std::stringstream is(item);
    if (!(is >> p >> dash >> h) || dash != '-' || !(is >> std::ws).eof() || p < 0 || p > 9 || h < 0 || h > 9 ||
        p == h)
      throw error(errc::invalid_config, "bad pair '" + item + "', expected p-h with distinct task indices 0..9");
    out.emplace_back(p, h);
  }
  if (out.empty()) throw error(errc::invalid_config, "empty pair list");
  return out;
}

inline int cmd_pairs(const PairsArgs& a, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  std::vector<std::pair<int, int>> pairs;
  try {
    cfg = load_config(a.config);
    if (cfg.kind != DataKind::idx) throw error(errc::invalid_config, "pairs needs an idx data config");
    if (a.method) cfg.methods = {detail::parse_method(*a.method, "--method")};
    if (cfg.methods.size() != 1) throw error(errc::invalid_config, "pairs runs a single method; pass --method");
    if (a.seed) cfg.seeds = {*a.seed};
    pairs = parse_pair_list(a.pairs);
  } catch (const error& e) {
    return fail(err, exit_config, e.what());
  }

  // One dataset per digit task, shared read-only by the workers.
  std::vector<std::optional<Dataset>> by_task(10);
  Manifest man{"pairs", a.config, cfg.snapshot, {}, cfg.seeds, {"runs.csv", "pair_grid.csv"}};
  man.config["pairs"] = a.pairs;
  try {
    man.inputs = fingerprints(input_files(cfg));
    const IdxData data = read_idx(cfg.idx.images, cfg.idx.labels);
    for (const auto& [p, h] : pairs)
      for (int t : {p, h})
        if (!by_task[t]) {
          const auto d = task_digits(t);
          by_task[t] = idx_pair(data, d[0], d[1]);
          by_task[t]->validate();
        }
    prepare_out_dir(a.out_dir);
    write_manifest(a.out_dir, man);
  } catch (const error& e) {
    return fail(err, exit_data, e.what());
  }

  struct Job {
    int p, h;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& [p, h] : pairs)
    for (auto s : cfg.seeds) jobs.push_back({p, h, s});
  std::vector<std::optional<RunRecord>> results(jobs.size());
  std::vector<std::string> failures(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& j = jobs[i];
      const auto pd = task_digits(j.p), hd = task_digits(j.h);
      const std::string key = DigitTasks{pd, hd}.key();
      try {
        results[i] = run_one(cfg, key, *by_task[j.p], *by_task[j.h], cfg.methods.front(), j.seed, false).record;
      } catch (const std::exception& e) {
        failures[i] = key + " seed " + std::to_string(j.seed) + ": " + e.what();
      }
    }
  };
  unsigned n_threads = a.jobs ? a.jobs : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(jobs.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (const auto& f : failures)
    if (!f.empty()) return fail(err, exit_numeric, f);

  try {
    std::vector<RunRecord> records;
    std::vector<std::pair<std::pair<int, int>, double>> cells;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      cells.push_back({{jobs[i].p, jobs[i].h}, results[i]->rir.rir});
      records.push_back(std::move(*results[i]));
    }
    const auto rep = experiment_report(std::move(records));
    auto runs = open_out(a.out_dir / "runs.csv");
    write_runs_csv(runs, rep);
    auto grid = open_out(a.out_dir / "pair_grid.csv");
    write_pair_grid_csv(grid, pair_grid(cells));
    write_summary_table(out, rep);
  } catch (const error& e) {
    return fail(err, exit_data, e.what());
  }
  return exit_ok;
}

}  // namespace immunize::cli
