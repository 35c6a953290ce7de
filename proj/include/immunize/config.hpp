#pragma once

// JSON experiment configuration: which data, which method(s), which seeds.
// Parsing is strict; unknown keys and wrong types raise InvalidConfig.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "immunize/datasets.hpp"
#include "immunize/error.hpp"
#include "immunize/evaluation.hpp"
#include "immunize/immunizer.hpp"
#include "json.hpp"

namespace immunize {

using Json = nlohmann::ordered_json;

inline constexpr const char* data_dir_env = "IMMUNIZE_DATA_DIR";

enum class DataKind { tabular, idx, synthetic };
enum class ReferenceKind { identity, theta0 };

/// One pre-training / harmful task pair over IDX digits: each task separates two digits.
struct DigitTasks {
  std::array<int, 2> p{0, 1};
  std::array<int, 2> h{1, 2};
  std::string key() const {
    return std::to_string(p[0]) + "v" + std::to_string(p[1]) + "-" + std::to_string(h[0]) + "v" + std::to_string(h[1]);
  }
};

/// Task d separates digit d from digit (d + 1) mod 10.
inline std::array<int, 2> task_digits(int d) { return {d, (d + 1) % 10}; }

struct IdxSettings {
  std::filesystem::path images;
  std::filesystem::path labels;
  std::vector<DigitTasks> tasks;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DataKind kind = DataKind::synthetic;
  TabularConfig tabular;
  IdxSettings idx;
  SyntheticSpec synthetic;
  ImmunizationConfig training;
  std::vector<Method> methods;        // defaults to {training.method}
  std::vector<std::uint64_t> seeds;   // defaults to {training.seed}
  ReferenceKind reference = ReferenceKind::identity;
  VerdictThresholds thresholds;
  Json snapshot;  // the document as read, for manifests

  void validate() const {
    training.validate();
    if (methods.empty()) throw error(errc::invalid_config, "methods must not be empty");
    if (seeds.empty()) throw error(errc::invalid_config, "seeds must not be empty");
    if (kind == DataKind::idx && idx.tasks.empty()) throw error(errc::invalid_config, "data.tasks must not be empty");
    if (kind == DataKind::synthetic) {
      try {
        synthetic.validate();
      } catch (const error& e) {
        throw error(errc::invalid_config, std::string("data: ") + e.what());
      }
    }
  }
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& where, const std::string& msg) {
  throw error(errc::invalid_config, where + ": " + msg);
}

inline void only_keys(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) config_fail(where, "expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : obj.items())
    if (!ok.count(k)) config_fail(where, "unknown key '" + k + "'");
}

template <class T>
T get_as(const Json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  const Json& v = obj.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) config_fail(where + "." + key, "expected a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) config_fail(where + "." + key, "expected an integer");
    if (std::is_unsigned_v<T> && v.get<long long>() < 0) config_fail(where + "." + key, "must be >= 0");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) config_fail(where + "." + key, "expected a number");
  } else {
    if (!v.is_string()) config_fail(where + "." + key, "expected a string");
  }
  return v.get<T>();
}

template <class E>
E parse_enum(const std::string& s, const std::string& where, std::initializer_list<std::pair<const char*, E>> table) {
  std::string options;
  for (const auto& [name, value] : table) {
    if (s == name) return value;
    options += options.empty() ? name : std::string(", ") + name;
  }
  config_fail(where, "'" + s + "' is not one of " + options);
}

inline Vector number_vector(const Json& v, const std::string& where) {
  if (!v.is_array()) config_fail(where, "expected an array of numbers");
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) config_fail(where, "expected an array of numbers");
    out(static_cast<Index>(i)) = v[i].get<double>();
  }
  return out;
}

inline std::array<int, 2> digit_pair(const Json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
    config_fail(where, "expected [digit, digit]");
  std::array<int, 2> out{v[0].get<int>(), v[1].get<int>()};
  for (int d : out)
    if (d < 0 || d > 9) config_fail(where, "digits must be in 0..9");
  if (out[0] == out[1]) config_fail(where, "a task needs two different digits");
  return out;
}

/// Relative data paths resolve against $IMMUNIZE_DATA_DIR, else data_dir, else the config's directory.
inline std::filesystem::path resolve_data_path(const std::string& p, const std::filesystem::path& base) {
  std::filesystem::path path(p);
  if (path.is_absolute()) return path;
  if (const char* env = std::getenv(data_dir_env); env && *env) return std::filesystem::path(env) / path;
  return base / path;
}

inline void parse_data(const Json& d, ExperimentConfig& cfg, const std::filesystem::path& base) {
  const std::string where = "data";
  if (!d.is_object()) config_fail(where, "expected an object");
  const std::string kind = get_as<std::string>(d, "kind", where, "");
  cfg.kind = parse_enum<DataKind>(kind, where + ".kind",
                                  {{"tabular", DataKind::tabular}, {"idx", DataKind::idx}, {"synthetic", DataKind::synthetic}});
  switch (cfg.kind) {
    case DataKind::tabular: {
      only_keys(d, where, {"kind", "csv", "split_column", "split_value", "target_P", "target_H", "drop", "normalization",
                           "normalize_targets"});
      auto& t = cfg.tabular;
      const auto csv = get_as<std::string>(d, "csv", where, "");
      if (csv.empty()) config_fail(where + ".csv", "required");
      t.csv_path = resolve_data_path(csv, base);
      t.split_column = get_as(d, "split_column", where, t.split_column);
      t.split_value = get_as(d, "split_value", where, t.split_value);
      t.target_P = get_as(d, "target_P", where, t.target_P);
      t.target_H = get_as(d, "target_H", where, t.target_H);
      if (d.contains("drop")) {
        const Json& drop = d.at("drop");
        if (!drop.is_array()) config_fail(where + ".drop", "expected an array of column names");
        t.drop_columns.clear();
        for (const auto& c : drop) {
          if (!c.is_string()) config_fail(where + ".drop", "expected an array of column names");
          t.drop_columns.push_back(c.get<std::string>());
        }
      }
      t.normalization = parse_enum<NormalizationMode>(
          get_as<std::string>(d, "normalization", where, "per_split"), where + ".normalization",
          {{"per_split", NormalizationMode::per_split}, {"pooled", NormalizationMode::pooled}});
      t.normalize_targets = get_as(d, "normalize_targets", where, t.normalize_targets);
      break;
    }
    case DataKind::idx: {
      only_keys(d, where, {"kind", "images", "labels", "tasks"});
      const auto images = get_as<std::string>(d, "images", where, "");
      const auto labels = get_as<std::string>(d, "labels", where, "");
      if (images.empty() || labels.empty()) config_fail(where, "images and labels are required");
      cfg.idx.images = resolve_data_path(images, base);
      cfg.idx.labels = resolve_data_path(labels, base);
      cfg.idx.tasks.clear();
      if (d.contains("tasks")) {
        const Json& tasks = d.at("tasks");
        if (!tasks.is_array()) config_fail(where + ".tasks", "expected an array");
        for (std::size_t i = 0; i < tasks.size(); ++i) {
          const std::string w = where + ".tasks[" + std::to_string(i) + "]";
          only_keys(tasks[i], w, {"P", "H"});
          if (!tasks[i].contains("P") || !tasks[i].contains("H")) config_fail(w, "needs P and H");
          cfg.idx.tasks.push_back({digit_pair(tasks[i].at("P"), w + ".P"), digit_pair(tasks[i].at("H"), w + ".H")});
        }
      }
      break;
    }
    case DataKind::synthetic: {
      only_keys(d, where, {"kind", "D_in", "N_P", "N_H", "spectrum_P", "spectrum_H", "alignment_angle", "noise", "seed"});
      auto& s = cfg.synthetic;
      s.D_in = get_as<Index>(d, "D_in", where, s.D_in);
      s.N_P = get_as<Index>(d, "N_P", where, s.N_P);
      s.N_H = get_as<Index>(d, "N_H", where, s.N_H);
      if (!d.contains("spectrum_P") || !d.contains("spectrum_H")) config_fail(where, "spectrum_P and spectrum_H are required");
      s.spectrum_P = number_vector(d.at("spectrum_P"), where + ".spectrum_P");
      s.spectrum_H = number_vector(d.at("spectrum_H"), where + ".spectrum_H");
      s.alignment_angle = get_as(d, "alignment_angle", where, s.alignment_angle);
      s.noise = get_as(d, "noise", where, s.noise);
      s.seed = get_as<std::uint64_t>(d, "seed", where, s.seed);
      break;
    }
  }
}

inline Method parse_method(const std::string& s, const std::string& where) {
  return parse_enum<Method>(s, where, {{"Ours", Method::ours}, {"RillOnly", Method::rill_only},
                                       {"OptKappa", Method::opt_kappa}, {"Imma", Method::imma}});
}

inline void parse_training(const Json& t, ImmunizationConfig& c) {
  const std::string where = "training";
  only_keys(t, where, {"method", "optimizer", "eta", "lambda_P", "lambda_H", "epochs", "loss", "ridge", "seed",
                       "theta_init", "theta_init_scale", "auto_balance", "balance_base", "inner_steps", "inner_lr",
                       "inner_var", "clip_to_safe_step", "adam"});
  if (t.contains("method")) c.method = parse_method(get_as<std::string>(t, "method", where, ""), where + ".method");
  if (t.contains("optimizer"))
    c.optimizer = parse_enum<Optimizer>(get_as<std::string>(t, "optimizer", where, ""), where + ".optimizer",
                                        {{"gd", Optimizer::gradient_descent}, {"adam", Optimizer::adam}});
  c.eta = get_as(t, "eta", where, c.eta);
  c.lambda_P = get_as(t, "lambda_P", where, c.lambda_P);
  c.lambda_H = get_as(t, "lambda_H", where, c.lambda_H);
  c.epochs = get_as(t, "epochs", where, c.epochs);
  if (t.contains("loss"))
    c.loss = parse_enum<LossKind>(get_as<std::string>(t, "loss", where, ""), where + ".loss",
                                  {{"squared_error", LossKind::squared_error}, {"bce", LossKind::binary_cross_entropy}});
  c.ridge = get_as(t, "ridge", where, c.ridge);
  c.seed = get_as(t, "seed", where, c.seed);
  if (t.contains("theta_init"))
    c.theta_init = parse_enum<ThetaInit>(get_as<std::string>(t, "theta_init", where, ""), where + ".theta_init",
                                         {{"identity", ThetaInit::identity},
                                          {"normal", ThetaInit::normal},
                                          {"perturbed_identity", ThetaInit::perturbed_identity}});
  c.theta_init_scale = get_as(t, "theta_init_scale", where, c.theta_init_scale);
  c.auto_balance = get_as(t, "auto_balance", where, c.auto_balance);
  c.balance_base = get_as(t, "balance_base", where, c.balance_base);
  c.inner_steps = get_as(t, "inner_steps", where, c.inner_steps);
  if (t.contains("inner_lr")) c.inner_lr = get_as(t, "inner_lr", where, 0.0);
  if (t.contains("inner_var"))
    c.inner_var = parse_enum<InnerVar>(get_as<std::string>(t, "inner_var", where, ""), where + ".inner_var",
                                       {{"theta", InnerVar::theta}, {"w", InnerVar::w}});
  c.clip_to_safe_step = get_as(t, "clip_to_safe_step", where, c.clip_to_safe_step);
  if (t.contains("adam")) {
    const Json& a = t.at("adam");
    only_keys(a, where + ".adam", {"beta1", "beta2", "eps"});
    c.adam.beta1 = get_as(a, "beta1", where + ".adam", c.adam.beta1);
    c.adam.beta2 = get_as(a, "beta2", where + ".adam", c.adam.beta2);
    c.adam.eps = get_as(a, "eps", where + ".adam", c.adam.eps);
  }
}

inline void parse_evaluation(const Json& e, ExperimentConfig& cfg) {
  const std::string where = "evaluation";
  only_keys(e, where, {"reference", "threshold_a", "tol_b", "tol_c"});
  if (e.contains("reference"))
    cfg.reference = parse_enum<ReferenceKind>(get_as<std::string>(e, "reference", where, ""), where + ".reference",
                                              {{"identity", ReferenceKind::identity}, {"theta0", ReferenceKind::theta0}});
  cfg.thresholds.a = get_as(e, "threshold_a", where, cfg.thresholds.a);
  cfg.thresholds.tol_b = get_as(e, "tol_b", where, cfg.thresholds.tol_b);
  cfg.thresholds.tol_c = get_as(e, "tol_c", where, cfg.thresholds.tol_c);
}

}  // namespace detail

/// `base` is the directory relative data paths resolve against when no
/// data_dir or environment override applies.
inline ExperimentConfig parse_config(const Json& doc, const std::filesystem::path& base = ".") {
  detail::only_keys(doc, "config", {"name", "data_dir", "data", "training", "methods", "seeds", "evaluation"});
  ExperimentConfig cfg;
  cfg.snapshot = doc;
  cfg.name = detail::get_as<std::string>(doc, "name", "config", cfg.name);
  std::filesystem::path data_base = base;
  if (doc.contains("data_dir")) data_base = base / detail::get_as<std::string>(doc, "data_dir", "config", "");
  if (!doc.contains("data")) detail::config_fail("config", "missing 'data'");
  detail::parse_data(doc.at("data"), cfg, data_base);
  if (doc.contains("training")) detail::parse_training(doc.at("training"), cfg.training);
  if (doc.contains("methods")) {
    const Json& m = doc.at("methods");
    if (!m.is_array()) detail::config_fail("methods", "expected an array of method names");
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!m[i].is_string()) detail::config_fail("methods", "expected an array of method names");
      cfg.methods.push_back(detail::parse_method(m[i].get<std::string>(), "methods[" + std::to_string(i) + "]"));
    }
  } else {
    cfg.methods = {cfg.training.method};
  }
  if (doc.contains("seeds")) {
    const Json& s = doc.at("seeds");
    if (!s.is_array()) detail::config_fail("seeds", "expected an array of integers");
    for (const auto& v : s) {
      if (!v.is_number_unsigned()) detail::config_fail("seeds", "expected an array of non-negative integers");
      cfg.seeds.push_back(v.get<std::uint64_t>());
    }
  } else {
    cfg.seeds = {cfg.training.seed};
  }
  if (doc.contains("evaluation")) detail::parse_evaluation(doc.at("evaluation"), cfg);
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const error&) {
    throw error(errc::invalid_config, "cannot read config " + path.string());
  }
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw error(errc::invalid_config, path.string() + ": " + e.what());
  }
  return parse_config(doc, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

}  // namespace immunize
