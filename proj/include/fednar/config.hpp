#pragma once

// Experiment configuration and its flat `key = value` text format.
//
// Lines are `key = value`; `#` starts a comment; blank lines are ignored.
// Unknown and duplicate keys are errors. Every key is optional and falls back
// to the default below.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fednar/errors.hpp"
#include "fednar/local_engine.hpp"
#include "fednar/models.hpp"
#include "fednar/server_engine.hpp"

namespace fednar {

enum class Backbone { kFedAvg, kFedProx, kScaffold, kFedExp, kFedAdam, kFedAvgM };
enum class DatasetSource { kBlobs, kCsv };

struct ExperimentConfig {
  std::uint64_t seed = 0;

  DatasetSource dataset = DatasetSource::kBlobs;
  std::size_t classes = 10;
  std::size_t per_class = 200;
  std::size_t d_in = 32;
  double separation = 10000.0;
  double noise = 3000.0;
  std::string train_csv;
  std::string test_csv;  // optional; TRAIN is reused for evaluation when empty

  Family model = Family::kMlpOneHidden;
  std::size_t hidden = 64;
  Activation activation = Activation::kRelu;

  std::size_t clients = 50;
  double alpha = 0.3;
  std::size_t rounds = 200;
  std::size_t tau = 20;
  std::size_t clients_per_round = 10;
  std::size_t batch_size = 32;

  Backbone backbone = Backbone::kFedAvg;
  StepRuleKind rule = StepRuleKind::kFedNar;
  Schedule schedule{0.01, 0.998, 0.01, 0.998};
  double max_norm = 10.0;
  double prox_mu = 0.01;
  ServerConfig server{};  // optimizer is derived from the backbone

  bool lemma1 = true;
  bool norm_bound = true;
  bool clip_stats = true;
  std::size_t eval_every = 1;
  std::size_t threads = 1;
  bool record_snapshots = false;

  void validate() const;

  ServerOptimizer server_optimizer() const {
    switch (backbone) {
      case Backbone::kFedExp:
        return ServerOptimizer::kExp;
      case Backbone::kFedAdam:
        return ServerOptimizer::kAdam;
      case Backbone::kFedAvgM:
        return ServerOptimizer::kAvgM;
      default:
        return ServerOptimizer::kAvg;
    }
  }

  ModifierKind modifier() const {
    switch (backbone) {
      case Backbone::kFedProx:
        return ModifierKind::kProx;
      case Backbone::kScaffold:
        return ModifierKind::kScaffold;
      default:
        return ModifierKind::kNone;
    }
  }
};

namespace detail {

template <typename E>
using Names = std::vector<std::pair<std::string, E>>;

inline const Names<Backbone>& backbone_names() {
  static const Names<Backbone> n{{"fedavg", Backbone::kFedAvg},     {"fedprox", Backbone::kFedProx},
                                 {"scaffold", Backbone::kScaffold}, {"fedexp", Backbone::kFedExp},
                                 {"fedadam", Backbone::kFedAdam},   {"fedavgm", Backbone::kFedAvgM}};
  return n;
}
inline const Names<StepRuleKind>& rule_names() {
  static const Names<StepRuleKind> n{{"plain_wd", StepRuleKind::kPlainWd},
                                     {"gradclip_wd", StepRuleKind::kGradClipWd},
                                     {"fednar", StepRuleKind::kFedNar}};
  return n;
}
inline const Names<Family>& model_names() {
  static const Names<Family> n{{"mlp", Family::kMlpOneHidden},
                               {"logistic", Family::kMultinomialLogistic},
                               {"linear", Family::kLinearRegression}};
  return n;
}
inline const Names<Activation>& activation_names() {
  static const Names<Activation> n{{"tanh", Activation::kTanh}, {"relu", Activation::kRelu}};
  return n;
}
inline const Names<DatasetSource>& dataset_names() {
  static const Names<DatasetSource> n{{"blobs", DatasetSource::kBlobs}, {"csv", DatasetSource::kCsv}};
  return n;
}

template <typename E>
E parse_enum(const std::string& key, const std::string& value, const Names<E>& names) {
  for (const auto& [name, e] : names) {
    if (name == value) return e;
  }
  std::string allowed;
  for (const auto& [name, e] : names) allowed += (allowed.empty() ? "" : "|") + name;
  throw ConfigError("config: " + key + " = '" + value + "' (expected " + allowed + ")");
}

template <typename E>
std::string enum_name(E e, const Names<E>& names) {
  for (const auto& [name, v] : names) {
    if (v == e) return name;
  }
  return "?";
}

inline double parse_real(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size() || !std::isfinite(v)) {
    throw ConfigError("config: " + key + " = '" + value + "' is not a finite number");
  }
  return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!value.empty() && value[0] != '-') v = std::stoull(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) {
    throw ConfigError("config: " + key + " = '" + value + "' is not a non-negative integer");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  throw ConfigError("config: " + key + " = '" + value + "' is not a boolean");
}

struct KeySpec {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// Shortest text that reads back to the same double.
inline std::string fmt_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline const std::map<std::string, KeySpec>& config_keys() {
  using C = ExperimentConfig;
  static const std::map<std::string, KeySpec> keys = [] {
    std::map<std::string, KeySpec> k;
    auto real = [&](const std::string& name, double C::*field) {
      k[name] = {[name, field](C& c, const std::string& v) { c.*field = parse_real(name, v); },
                 [field](const C& c) { return fmt_real(c.*field); }};
    };
    auto size = [&](const std::string& name, std::size_t C::*field) {
      k[name] = {[name, field](C& c, const std::string& v) { c.*field = parse_uint(name, v); },
                 [field](const C& c) { return std::to_string(c.*field); }};
    };
    auto flag = [&](const std::string& name, bool C::*field) {
      k[name] = {[name, field](C& c, const std::string& v) { c.*field = parse_bool(name, v); },
                 [field](const C& c) { return std::string(c.*field ? "true" : "false"); }};
    };
    auto text = [&](const std::string& name, std::string C::*field) {
      k[name] = {[field](C& c, const std::string& v) { c.*field = v; }, [field](const C& c) { return c.*field; }};
    };
    auto sched = [&](const std::string& name, double Schedule::*field) {
      k[name] = {[name, field](C& c, const std::string& v) { c.schedule.*field = parse_real(name, v); },
                 [field](const C& c) { return fmt_real(c.schedule.*field); }};
    };
    auto srv = [&](const std::string& name, double ServerConfig::*field) {
      k[name] = {[name, field](C& c, const std::string& v) { c.server.*field = parse_real(name, v); },
                 [field](const C& c) { return fmt_real(c.server.*field); }};
    };
    k["seed"] = {[](C& c, const std::string& v) { c.seed = parse_uint("seed", v); },
                 [](const C& c) { return std::to_string(c.seed); }};
    k["dataset"] = {[](C& c, const std::string& v) { c.dataset = parse_enum("dataset", v, dataset_names()); },
                    [](const C& c) { return enum_name(c.dataset, dataset_names()); }};
    size("classes", &C::classes);
    size("per_class", &C::per_class);
    size("d_in", &C::d_in);
    real("separation", &C::separation);
    real("noise", &C::noise);
    text("train_csv", &C::train_csv);
    text("test_csv", &C::test_csv);
    k["model"] = {[](C& c, const std::string& v) { c.model = parse_enum("model", v, model_names()); },
                  [](const C& c) { return enum_name(c.model, model_names()); }};
    size("hidden", &C::hidden);
    k["activation"] = {
        [](C& c, const std::string& v) { c.activation = parse_enum("activation", v, activation_names()); },
        [](const C& c) { return enum_name(c.activation, activation_names()); }};
    size("clients", &C::clients);
    real("alpha", &C::alpha);
    size("rounds", &C::rounds);
    size("tau", &C::tau);
    size("clients_per_round", &C::clients_per_round);
    size("batch_size", &C::batch_size);
    k["backbone"] = {[](C& c, const std::string& v) { c.backbone = parse_enum("backbone", v, backbone_names()); },
                     [](const C& c) { return enum_name(c.backbone, backbone_names()); }};
    k["rule"] = {[](C& c, const std::string& v) { c.rule = parse_enum("rule", v, rule_names()); },
                 [](const C& c) { return enum_name(c.rule, rule_names()); }};
    sched("l0", &Schedule::l0);
    sched("rho", &Schedule::rho);
    sched("u0", &Schedule::u0);
    sched("gamma", &Schedule::gamma);
    real("max_norm", &C::max_norm);
    real("prox_mu", &C::prox_mu);
    srv("lambda_g", &ServerConfig::lambda_g);
    srv("server_momentum", &ServerConfig::server_momentum);
    srv("beta1", &ServerConfig::beta1);
    srv("beta2", &ServerConfig::beta2);
    srv("adam_eps", &ServerConfig::adam_eps);
    srv("exp_eps", &ServerConfig::exp_eps);
    flag("lemma1", &C::lemma1);
    flag("norm_bound", &C::norm_bound);
    flag("clip_stats", &C::clip_stats);
    size("eval_every", &C::eval_every);
    size("threads", &C::threads);
    flag("record_snapshots", &C::record_snapshots);
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Sets one key from its textual value. Unknown keys throw ConfigError.
inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const auto& keys = detail::config_keys();
  auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(cfg, value);
}

inline std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) {
  const auto& keys = detail::config_keys();
  auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("config: unknown key '" + key + "'");
  return it->second.get(cfg);
}

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : detail::config_keys()) out.push_back(k);
  return out;
}

/// Parses config text on top of the defaults and validates the result.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

/// Every key with its current value, one per line, in the format parse_config reads.
inline std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& key : config_key_names()) out += key + " = " + get_config_value(cfg, key) + "\n";
  return out;
}

inline void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (clients < 1) fail("clients must be >= 1");
  if (clients_per_round < 1) fail("clients_per_round must be >= 1");
  if (clients_per_round > clients) {
    fail("clients_per_round (" + std::to_string(clients_per_round) + ") exceeds clients (" +
         std::to_string(clients) + ")");
  }
  if (rounds < 1) fail("rounds must be >= 1");
  if (tau < 1) fail("tau must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (!(alpha > 0.0)) fail("alpha must be positive");
  if (model == Family::kLinearRegression) fail("model = linear is not supported for classification experiments");
  if (model == Family::kMlpOneHidden && hidden < 1) fail("hidden must be >= 1");
  if (dataset == DatasetSource::kBlobs) {
    if (classes < 2) fail("classes must be >= 2");
    if (per_class < 1) fail("per_class must be >= 1");
    if (d_in < 1) fail("d_in must be >= 1");
    if (!(separation > 0.0)) fail("separation must be positive");
    if (!(noise > 0.0)) fail("noise must be positive");
  } else if (train_csv.empty()) {
    fail("dataset = csv requires train_csv");
  }
  if (!(schedule.l0 > 0.0)) fail("l0 must be positive");
  if (!(schedule.rho > 0.0 && schedule.rho <= 1.0)) fail("rho must lie in (0, 1]");
  if (!(schedule.u0 >= 0.0)) fail("u0 must be non-negative");
  if (!(schedule.gamma > 0.0 && schedule.gamma <= 1.0)) fail("gamma must lie in (0, 1]");
  if (!(max_norm > 0.0)) fail("max_norm must be positive");
  if (!(prox_mu >= 0.0)) fail("prox_mu must be non-negative");
  try {
    server.validate();
  } catch (const PreconditionError& e) {
    fail(e.what());
  }
}

}  // namespace fednar
