#pragma once

// Fast property suite behind `fednar check`.

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "fednar/config.hpp"
#include "fednar/data.hpp"
#include "fednar/experiment.hpp"
#include "fednar/local_engine.hpp"
#include "fednar/models.hpp"
#include "fednar/numkit.hpp"
#include "fednar/server_engine.hpp"

namespace fednar {

struct CheckOutcome {
  std::string name;
  bool passed;
  std::string detail;
};

/// Random dense batch for gradient checks.
inline Batch random_batch(const Model& model, std::size_t n, std::mt19937_64& eng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Batch b;
  b.d_in = model.d_in;
  for (std::size_t i = 0; i < n * model.d_in; ++i) b.features.push_back(normal(eng));
  if (model.is_classifier()) {
    std::uniform_int_distribution<int> lab(0, static_cast<int>(model.classes) - 1);
    for (std::size_t i = 0; i < n; ++i) b.labels.push_back(lab(eng));
  } else {
    for (std::size_t i = 0; i < n; ++i) b.targets.push_back(normal(eng));
  }
  return b;
}

/// Worst fd-vs-analytic relative error over `draws` random (params, batch)
/// pairs. ReLU draws with any |pre-activation| < 1e-3 are redrawn.
inline double worst_gradient_error(const Model& model, std::size_t draws, std::uint64_t seed) {
  auto eng = RngStream(seed, {static_cast<std::uint64_t>(model.family), static_cast<std::uint64_t>(model.activation)})
                 .engine();
  std::normal_distribution<double> normal(0.0, 0.5);
  double worst = 0.0;
  std::size_t done = 0;
  while (done < draws) {
    ParamVector p(model.param_dim());
    for (std::size_t i = 0; i < p.dim(); ++i) p[i] = normal(eng);
    const Batch b = random_batch(model, 8, eng);
    if (model.family == Family::kMlpOneHidden && model.activation == Activation::kRelu &&
        min_abs_preactivation(model, p, b) < 1e-3) {
      continue;
    }
    worst = std::max(worst, relative_error(fd_gradient(model, p, b), grad(model, p, b)));
    ++done;
  }
  return worst;
}

/// FedAvg written directly from its definition: plain local SGD, unweighted
/// mean of deltas, x <- x - lambda_g * mean. Shares only data plumbing with
/// run_experiment.
inline ParamVector reference_fedavg(const ExperimentConfig& cfg) {
  const ExperimentSetup s = build_setup(cfg);
  const RngStream root(cfg.seed);
  const double lr = cfg.schedule.l0;
  std::vector<double> x = s.x0.to_vector();
  const std::size_t d = x.size();
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    const auto ids = sample_clients(cfg.clients, cfg.clients_per_round, t, root);
    std::vector<double> sum(d, 0.0);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto& shard = s.partition.shards[ids[k]];
      const auto stream = root.child(Purpose::kBatch).child(t).child(ids[k]);
      std::vector<double> w = x;
      for (std::size_t step = 0; step < cfg.tau; ++step) {
        const auto g = grad(s.model, ParamVector(w), next_batch(shard, s.train, cfg.batch_size, stream, step));
        for (std::size_t i = 0; i < d; ++i) w[i] = w[i] - lr * g[i];
      }
      for (std::size_t i = 0; i < d; ++i) {
        const double delta = x[i] - w[i];
        sum[i] = k == 0 ? delta : sum[i] + delta;
      }
    }
    for (std::size_t i = 0; i < d; ++i) x[i] = x[i] - cfg.server.lambda_g * (sum[i] / static_cast<double>(ids.size()));
  }
  return ParamVector(x);
}

/// Small, quick configuration used by the self-check.
inline ExperimentConfig small_config() {
  ExperimentConfig c;
  c.classes = 4;
  c.per_class = 40;
  c.d_in = 6;
  c.separation = 3.0;
  c.noise = 1.0;
  c.hidden = 12;
  c.clients = 8;
  c.clients_per_round = 4;
  c.rounds = 8;
  c.tau = 5;
  c.batch_size = 8;
  return c;
}

inline std::vector<CheckOutcome> run_self_check() {
  std::vector<CheckOutcome> out;
  auto record = [&](const std::string& name, const std::function<std::string()>& body) {
    try {
      out.push_back({name, true, body()});
    } catch (const std::exception& e) {
      out.push_back({name, false, e.what()});
    }
  };
  auto require = [](bool cond, const std::string& what) {
    if (!cond) throw DiagnosticError(what);
  };

  record("gradient oracles", [&] {
    const Model models[] = {Model::linear_regression(4), Model::logistic(4, 3),
                            Model::mlp(4, 6, 3, Activation::kTanh), Model::mlp(4, 6, 3, Activation::kRelu)};
    double worst = 0.0;
    for (const auto& m : models) worst = std::max(worst, worst_gradient_error(m, 5, 11));
    require(worst <= 1e-5, "worst relative error " + std::to_string(worst));
    return "worst rel err " + detail::g9(worst);
  });

  record("single-step decomposition", [&] {
    ClientTrace tr;
    tr.steps.push_back({0.1, 0.01, 0.0, 0.0, false, ParamVector{1.0, 0.0}, std::nullopt});
    const ParamVector x_prev{1.0, 1.0};
    const ParamVector x_new = local_step(x_prev, tr.steps[0].g, 0.1, 0.01);
    const auto rep = lemma1_reconstruct({tr}, x_prev, x_new, 1.0);
    const auto alt = lemma1_reconstruct({tr}, x_prev, x_new, 1.0, GradientDecayProduct::kIncludingStep);
    require(rep.reconstruction_error <= kReconstructionTol, "step-derived index fails");
    require(alt.reconstruction_error > kReconstructionTol, "inclusive index unexpectedly reconstructs");
    return "x_new = (" + detail::g9(x_new[0]) + ", " + detail::g9(x_new[1]) + ")";
  });

  record("global-step decomposition + step bound + norm bound", [&] {
    std::size_t steps = 0;
    double worst_ratio = 0.0;
    for (double u0 : {0.0, 0.01, 0.1}) {
      for (double A : {1.0, 10.0}) {
        auto c = small_config();
        c.schedule.u0 = u0;
        c.max_norm = A;
        run_experiment(c, [&](const RoundRecord& r) {
          require(r.norm_bound.ok, "norm bound failed");
          for (const auto& tr : *r.traces) {
            for (const auto& st : tr.steps) {
              ++steps;
              require(st.step_norm <= tr.lr * A + kIdentityTol, "step bound failed");
              if (tr.wd > 0.0) worst_ratio = std::max(worst_ratio, std::abs(st.mu / st.lambda - tr.wd / tr.lr));
            }
          }
        });
      }
    }
    require(worst_ratio <= kIdentityTol, "mu/lambda drifted from u_t/l_t by " + std::to_string(worst_ratio));
    return std::to_string(steps) + " steps checked";
  });

  record("zero-decay collapse", [&] {
    auto a = small_config();
    a.schedule.u0 = 0.0;
    a.max_norm = 1.0;
    auto b = a;
    b.rule = StepRuleKind::kGradClipWd;
    require(metrics_without_timing(run_experiment(a).rows) == metrics_without_timing(run_experiment(b).rows),
            "FEDNAR and GRADCLIP_WD differ at u0 = 0");
    return std::string("identical metrics");
  });

  record("FedAvg recovery", [&] {
    auto c = small_config();
    c.rule = StepRuleKind::kPlainWd;
    c.schedule = Schedule{0.05, 1.0, 0.0, 1.0};
    const auto engine = run_experiment(c).x_final;
    require(engine == reference_fedavg(c), "engine differs from reference FedAvg loop");
    return std::string("bit-identical over ") + std::to_string(c.rounds) + " rounds";
  });

  record("partition cover + heterogeneity", [&] {
    auto tt = make_blobs(5, 30, 3, 3.0, 1.0, RngStream(3));
    auto eng = RngStream(3, {99}).engine();
    std::uniform_int_distribution<std::size_t> m_pick(1, 40);
    std::uniform_real_distribution<double> a_pick(0.05, 20.0);
    for (int k = 0; k < 50; ++k) {
      const auto part = dirichlet_partition(tt.train, m_pick(eng), a_pick(eng), RngStream(k));
      check_partition(part, tt.train.size(), 5);
    }
    double prev = 2.0;
    for (double alpha : {0.3, 1.0, 10.0}) {
      auto e = RngStream(5, {static_cast<std::uint64_t>(alpha * 10)}).engine();
      double s = 0.0;
      for (int k = 0; k < 1000; ++k) s += tv_to_uniform(sample_dirichlet(10, alpha, e));
      s /= 1000.0;
      require(s < prev, "mean TV not decreasing at alpha " + std::to_string(alpha));
      prev = s;
    }
    return std::string("ok");
  });

  record("determinism", [&] {
    const auto c = small_config();
    require(metrics_without_timing(run_experiment(c).rows) == metrics_without_timing(run_experiment(c).rows),
            "repeated runs differ");
    return std::string("identical metrics");
  });

  return out;
}

}  // namespace fednar
