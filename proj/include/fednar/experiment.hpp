#pragma once

// Round orchestration, evaluation and metrics CSV output.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fednar/config.hpp"
#include "fednar/data.hpp"
#include "fednar/errors.hpp"
#include "fednar/local_engine.hpp"
#include "fednar/models.hpp"
#include "fednar/numkit.hpp"
#include "fednar/server_engine.hpp"

namespace fednar {

struct MetricsRow {
  std::size_t round = 0;  // completed rounds, 1-based
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  double global_norm = 0.0;
  double mu_g = 0.0;
  std::size_t clip_count = 0;
  double clip_mean_norm = 0.0;
  double norm_bound_slack = 0.0;
  double wall_ms = 0.0;
};

struct Evaluation {
  double loss;
  double accuracy;
};

/// Mean loss and argmax accuracy over a labelled set.
inline Evaluation evaluate(const Model& model, const ParamVector& params, const Dataset& test) {
  if (test.size() == 0) throw PreconditionError("evaluate: empty test set");
  const double l = loss(model, params, test.samples);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (predict_class(model, params, test.samples.row(i)) == static_cast<std::size_t>(test.samples.labels[i])) {
      ++correct;
    }
  }
  return {l, static_cast<double>(correct) / static_cast<double>(test.size())};
}

/// What happened in one round, handed to an optional observer.
struct RoundRecord {
  std::size_t round = 0;  // zero-based round index t
  std::vector<std::size_t> participants;
  const RoundTrace* traces = nullptr;
  const ParamVector* x_prev = nullptr;
  const ParamVector* x_next = nullptr;
  std::optional<Lemma1Report> lemma1;
  NormBoundCheck norm_bound{true, 0.0, 0.0};
  ClipStats clips;
};

using RoundObserver = std::function<void(const RoundRecord&)>;

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  ParamVector x_initial;
  ParamVector x_final;
};

struct ExperimentSetup {
  Model model;
  Dataset train;
  Dataset test;
  Partition partition;
  ParamVector x0;
};

/// Dataset, partition, model and initial parameters for a config. Everything
/// depends only on the seed and the data/model keys.
inline ExperimentSetup build_setup(const ExperimentConfig& cfg) {
  const RngStream root(cfg.seed);
  ExperimentSetup s;
  if (cfg.dataset == DatasetSource::kBlobs) {
    auto tt = make_blobs(cfg.classes, cfg.per_class, cfg.d_in, cfg.separation, cfg.noise,
                         root.child(Purpose::kDataset));
    s.train = std::move(tt.train);
    s.test = std::move(tt.test);
  } else {
    try {
      s.train = load_csv(cfg.train_csv);
      s.test = cfg.test_csv.empty() ? s.train : load_csv(cfg.test_csv);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    s.test.split = Split::kTest;
    if (s.test.d_in() != s.train.d_in() || s.test.classes > s.train.classes) {
      throw ConfigError("config: test_csv does not match train_csv dimensions/classes");
    }
    s.test.classes = s.train.classes;
  }
  if (cfg.clients > s.train.size()) {
    throw ConfigError("config: clients (" + std::to_string(cfg.clients) + ") exceeds TRAIN size (" +
                      std::to_string(s.train.size()) + ")");
  }
  s.model = cfg.model == Family::kMlpOneHidden
                ? Model::mlp(s.train.d_in(), cfg.hidden, s.train.classes, cfg.activation)
                : Model::logistic(s.train.d_in(), s.train.classes);
  s.partition = dirichlet_partition(s.train, cfg.clients, cfg.alpha, root.child(Purpose::kPartition));
  s.x0 = init_params(s.model, root.child(Purpose::kInit));
  return s;
}

/// Runs the configured federated training loop.
///
/// Per round: sample clients, run local training, aggregate, run the
/// enabled diagnostics, apply the server update, evaluate. Any failed
/// diagnostic throws DiagnosticError naming the round.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const RoundObserver& observer = {}) {
  cfg.validate();
  const RngStream root(cfg.seed);
  ExperimentSetup setup = build_setup(cfg);
  const Model& model = setup.model;

  ServerConfig scfg = cfg.server;
  scfg.optimizer = cfg.server_optimizer();
  ServerState state = ServerState::initial(setup.x0, scfg);
  const StepRule rule{cfg.rule, cfg.max_norm};
  const ModifierKind mod_kind = cfg.modifier();
  std::optional<ScaffoldVariates> variates;
  if (mod_kind == ModifierKind::kScaffold) variates = ScaffoldVariates::zeros(cfg.clients, model.param_dim());
  const bool enforce_norm_bound = cfg.rule == StepRuleKind::kFedNar && scfg.optimizer == ServerOptimizer::kAvg;

  ExperimentResult result;
  result.x_initial = setup.x0;

  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    const auto wall_start = std::chrono::steady_clock::now();
    const auto ids = sample_clients(cfg.clients, cfg.clients_per_round, t, root);
    const auto rates = schedule_at(cfg.schedule, t);

    double train_loss = 0.0;
    for (std::size_t id : ids) {
      const auto b = next_batch(setup.partition.shards[id], setup.train, cfg.batch_size,
                                root.child(Purpose::kTrainLoss).child(t).child(id), 0);
      train_loss += loss(model, state.x, b);
    }
    train_loss /= static_cast<double>(ids.size());

    auto client_job = [&](std::size_t id) {
      ObjectiveModifier mod;
      mod.kind = mod_kind;
      mod.prox_mu = cfg.prox_mu;
      if (variates) {
        mod.client_variate = variates->client[id];
        mod.global_variate = variates->global;
      }
      return run_local(model, setup.train, setup.partition.shards[id], state.x, t, cfg.tau, rule,
                       cfg.schedule, mod, cfg.batch_size, root.child(Purpose::kBatch).child(t).child(id),
                       LocalOptions{cfg.record_snapshots});
    };

    std::vector<LocalResult> locals(ids.size());
    if (cfg.threads > 1) {
      std::vector<std::future<LocalResult>> futs;
      futs.reserve(ids.size());
      for (std::size_t id : ids) futs.push_back(std::async(std::launch::async, client_job, id));
      for (std::size_t k = 0; k < ids.size(); ++k) locals[k] = futs[k].get();
    } else {
      for (std::size_t k = 0; k < ids.size(); ++k) locals[k] = client_job(ids[k]);
    }

    std::vector<ParamVector> deltas;
    RoundTrace traces;
    deltas.reserve(ids.size());
    traces.reserve(ids.size());
    for (auto& lr : locals) {
      deltas.push_back(std::move(lr.delta));
      traces.push_back(std::move(lr.trace));
    }
    const ParamVector delta_bar = aggregate(deltas);

    RoundRecord rec;
    rec.round = t;
    rec.participants = ids;
    rec.traces = &traces;
    const ParamVector x_prev = state.x;
    rec.x_prev = &x_prev;

    // mu_g only needs the recorded decays, so it is always reported.
    double prod_sum = 0.0;
    for (const auto& tr : traces) {
      double prod = 1.0;
      for (const auto& st : tr.steps) prod *= 1.0 - st.mu;
      prod_sum += prod;
    }
    double mu_g = scfg.lambda_g - scfg.lambda_g / static_cast<double>(traces.size()) * prod_sum;

    if (cfg.lemma1) {
      const ParamVector x_sim = lin_comb(1.0, x_prev, -scfg.lambda_g, delta_bar);
      try {
        rec.lemma1 = lemma1_decompose(traces, x_prev, x_sim, scfg.lambda_g);
      } catch (const DiagnosticError& e) {
        throw DiagnosticError("round " + std::to_string(t + 1) + ": " + e.what());
      }
      mu_g = rec.lemma1->mu_g;
      const double slack = decay_coefficient_slack(traces);
      if (slack < -kIdentityTol) {
        throw DiagnosticError("round " + std::to_string(t + 1) + ": effective decay 1 - prod(1 - mu_j) exceeds tau u_t by " +
                              std::to_string(-slack));
      }
    }

    if (variates) variates = scaffold_server_round(*variates, ids, deltas, cfg.tau, rates.lr);
    state = global_update(state, delta_bar, deltas);
    rec.x_next = &state.x;

    rec.norm_bound = check_norm_bound(state.x, setup.x0, scfg.lambda_g, cfg.tau, cfg.max_norm,
                                      cfg.schedule.max_lr(), t + 1);
    if (cfg.norm_bound && enforce_norm_bound && !rec.norm_bound.ok) {
      throw DiagnosticError("round " + std::to_string(t + 1) + ": norm bound violated, ||x_t|| exceeds " +
                            std::to_string(rec.norm_bound.bound) + " by " + std::to_string(-rec.norm_bound.slack));
    }
    if (cfg.clip_stats) rec.clips = clip_stats(traces);
    if (observer) observer(rec);

    if ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.rounds) {
      const auto ev = evaluate(model, state.x, setup.test);
      MetricsRow row;
      row.round = t + 1;
      row.train_loss = train_loss;
      row.test_loss = ev.loss;
      row.test_accuracy = ev.accuracy;
      row.global_norm = norm2(state.x);
      row.mu_g = mu_g;
      row.clip_count = rec.clips.clip_count;
      row.clip_mean_norm = rec.clips.mean_clipped_norm;
      row.norm_bound_slack = rec.norm_bound.slack;
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall_start).count();
      result.rows.push_back(row);
    }
  }
  result.x_final = state.x;
  return result;
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr const char* kMetricsHeader =
    "round,train_loss,test_loss,test_acc,global_norm,mu_g,clip_count,clip_mean_norm,bound_slack,wall_ms";

namespace detail {
inline std::string g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}
}  // namespace detail

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, std::ostream& out) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.round << ',' << detail::g9(r.train_loss) << ',' << detail::g9(r.test_loss) << ','
        << detail::g9(r.test_accuracy) << ',' << detail::g9(r.global_norm) << ',' << detail::g9(r.mu_g) << ','
        << r.clip_count << ',' << detail::g9(r.clip_mean_norm) << ',' << detail::g9(r.norm_bound_slack) << ','
        << detail::g9(r.wall_ms) << '\n';
  }
}

inline void emit_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("emit_metrics_csv: cannot open " + path);
  write_metrics_csv(rows, out);
  out.flush();
  if (!out) throw Error("emit_metrics_csv: write failed for " + path);
}

inline std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kMetricsHeader) {
    throw DataError("metrics csv: missing or wrong header");
  }
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv_line(detail::trim(line));
    if (f.size() != 10) throw DataError("metrics csv: line " + std::to_string(line_no) + " has wrong field count");
    try {
      MetricsRow r;
      r.round = std::stoull(f[0]);
      r.train_loss = std::stod(f[1]);
      r.test_loss = std::stod(f[2]);
      r.test_accuracy = std::stod(f[3]);
      r.global_norm = std::stod(f[4]);
      r.mu_g = std::stod(f[5]);
      r.clip_count = std::stoull(f[6]);
      r.clip_mean_norm = std::stod(f[7]);
      r.norm_bound_slack = std::stod(f[8]);
      r.wall_ms = std::stod(f[9]);
      rows.push_back(r);
    } catch (const std::exception&) {
      throw DataError("metrics csv: line " + std::to_string(line_no) + " is malformed");
    }
  }
  return rows;
}

/// CSV text with the wall_ms column removed; equal strings mean equal runs.
inline std::string metrics_without_timing(const std::vector<MetricsRow>& rows) {
  auto copy = rows;
  for (auto& r : copy) r.wall_ms = 0.0;
  std::ostringstream os;
  write_metrics_csv(copy, os);
  return os.str();
}

}  // namespace fednar
