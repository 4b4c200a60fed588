// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
// Oracles here are written independently of the library code they check:
// the FedAvg loop, the rank correlation and the per-step bound are all
// recomputed from raw recorded quantities.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "fednar/fednar.hpp"

using namespace fednar;

namespace {

// Thresholds pinned from a 5-seed pilot of the default configuration
// (FEDNAR 0.794 vs GRADCLIP_WD 0.735 at u0 = 0.1; GRADCLIP_WD sweep peak
// 0.8775 at u0 = 1e-3 vs 0.7125 at u0 = 0.1).
constexpr double kGradTol = 1e-5;
constexpr double kStepTol = 1e-12;
constexpr double kBoundTol = 1e-9;
constexpr double kMinSelfAdjustMargin = 0.02;
constexpr double kMaxGapToTunedDecay = 0.03;
constexpr double kMinSweepDrop = 0.05;
constexpr std::size_t kSeeds = 5;
constexpr std::size_t kMinPositiveTrendSeeds = 4;

int failures = 0;

void report(int id, const std::string& name, bool passed, const std::string& detail) {
  std::printf("%s [%d] %s: %s\n", passed ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += passed ? 0 : 1;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Runs `body`, reporting an exception as a failure of criterion `id`.
void guarded(int id, const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

double final_accuracy(const ExperimentResult& r) { return r.rows.back().test_accuracy; }

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

// Plain local SGD, unweighted mean of deltas, x <- x - lambda_g * mean.
std::vector<double> independent_fedavg(const ExperimentConfig& cfg) {
  const ExperimentSetup s = build_setup(cfg);
  const RngStream root(cfg.seed);
  std::vector<double> x = s.x0.to_vector();
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    std::vector<double> sum(x.size(), 0.0);
    const auto ids = sample_clients(cfg.clients, cfg.clients_per_round, t, root);
    for (std::size_t id : ids) {
      std::vector<double> w = x;
      const auto stream = root.child(Purpose::kBatch).child(t).child(id);
      for (std::size_t k = 0; k < cfg.tau; ++k) {
        const auto batch = next_batch(s.partition.shards[id], s.train, cfg.batch_size, stream, k);
        const auto g = grad(s.model, ParamVector(w), batch);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.schedule.l0 * g[i];
      }
      for (std::size_t i = 0; i < x.size(); ++i) sum[i] += x[i] - w[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] -= cfg.server.lambda_g * (sum[i] / static_cast<double>(ids.size()));
    }
  }
  return x;
}

ExperimentConfig diagnostic_config(std::size_t per_round) {
  ExperimentConfig c;
  c.clients = 10;
  c.clients_per_round = per_round;
  c.tau = 5;
  c.rounds = 50;
  c.rule = StepRuleKind::kFedNar;
  c.norm_bound = false;  // counted by the observer instead of thrown
  return c;
}

struct BoundTally {
  std::size_t rounds = 0;
  std::size_t violations = 0;
  double worst_slack = 1e300;
};

}  // namespace

int main() {
  const auto suite_start = std::chrono::steady_clock::now();
  BoundTally norm_tally;
  double x0_norm = 0.0;
  // ||x_t|| <= ||x_0|| + lambda_g tau l_* A t, recomputed from the config.
  auto count_norm = [&](const RoundRecord& r, const ExperimentConfig& c) {
    if (r.round == 0) x0_norm = norm2(*r.x_prev);
    ++norm_tally.rounds;
    const double bound = x0_norm + c.server.lambda_g * static_cast<double>(c.tau) * c.schedule.l0 * c.max_norm *
                                       static_cast<double>(r.round + 1);
    const double nx = norm2(*r.x_next);
    norm_tally.worst_slack = std::min(norm_tally.worst_slack, bound - nx);
    if (nx > bound + kBoundTol) ++norm_tally.violations;
  };

  // 1 ------------------------------------------------------------------------
  guarded(1, "gradient oracles", [] {
    const auto t0 = std::chrono::steady_clock::now();
    const Model models[] = {Model::linear_regression(8), Model::logistic(8, 5),
                            Model::mlp(8, 16, 5, Activation::kTanh), Model::mlp(8, 16, 5, Activation::kRelu)};
    double worst = 0.0;
    for (const auto& m : models) worst = std::max(worst, worst_gradient_error(m, 20, 2024));
    const double secs = seconds_since(t0);
    report(1, "gradient oracles", worst <= kGradTol && secs < 10.0,
           "worst rel err " + fmt("%.3g", worst) + " over 4 families x 20 draws, " + fmt("%.2f s", secs));
  });

  // 2 + 4 (part) ------------------------------------------------------------
  guarded(2, "global-step reconstruction", [&] {
    // Hand example: one client, one step.
    ClientTrace tr;
    StepRecord st;
    st.lambda = 0.1;
    st.mu = 0.01;
    st.g = ParamVector{1.0, 0.0};
    tr.steps.push_back(st);
    const ParamVector x_prev{1.0, 1.0};
    const ParamVector x_new = local_step(x_prev, st.g, st.lambda, st.mu);
    const bool hand_ok = x_new == ParamVector{0.89, 0.99} || norm_inf(x_new - ParamVector{0.89, 0.99}) <= 1e-15;
    const auto rep = lemma1_reconstruct({tr}, x_prev, x_new, 1.0);
    const auto alt = lemma1_reconstruct({tr}, x_prev, x_new, 1.0, GradientDecayProduct::kIncludingStep);
    const bool idx_ok = rep.reconstruction_error <= kReconstructionTol && alt.reconstruction_error > kReconstructionTol;

    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::size_t rounds = 0;
    std::size_t params = 0;
    for (std::size_t per_round : {10u, 5u}) {
      auto cfg = diagnostic_config(per_round);
      const auto res = run_experiment(cfg, [&](const RoundRecord& r) {
        ++rounds;
        // Recompute from the raw traces rather than trusting the embedded report.
        const auto x_sim = lin_comb(1.0, *r.x_prev, -cfg.server.lambda_g, aggregate([&] {
                                      std::vector<ParamVector> d;
                                      for (const auto& t : *r.traces) {
                                        ParamVector x = *r.x_prev;
                                        for (const auto& s : t.steps) x = local_step(x, s.g, s.lambda, s.mu);
                                        d.push_back(*r.x_prev - x);
                                      }
                                      return d;
                                    }()));
        worst = std::max(worst, lemma1_reconstruct(*r.traces, *r.x_prev, x_sim, cfg.server.lambda_g).reconstruction_error);
        count_norm(r, cfg);
      });
      params = res.x_initial.dim();
    }
    const double secs = seconds_since(t0);
    report(2, "global-step reconstruction",
           hand_ok && idx_ok && worst <= kReconstructionTol && rounds == 100 && secs < 30.0,
           "hand example (" + fmt("%.17g", x_new[0]) + ", " + fmt("%.17g", x_new[1]) + "), inclusive index error " +
               fmt("%.3g", alt.reconstruction_error) + "; worst error " + fmt("%.3g", worst) + " over " +
               std::to_string(rounds) + " rounds, " + std::to_string(params) + " params, " + fmt("%.1f s", secs));
  });

  // 3 + 4 (part) ------------------------------------------------------------
  guarded(3, "per-step bound grid", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t steps = 0, violations = 0, clipped = 0;
    for (double u0 : {0.0, 0.01, 0.1}) {
      for (double A : {1.0, 10.0, 100.0}) {
        auto cfg = diagnostic_config(10);
        cfg.schedule.u0 = u0;
        cfg.max_norm = A;
        run_experiment(cfg, [&](const RoundRecord& r) {
          for (const auto& tr : *r.traces) {
            ParamVector x = *r.x_prev;
            for (const auto& s : tr.steps) {
              const double n = norm2(lin_comb(s.lambda, s.g, s.mu, x));
              ++steps;
              clipped += s.clipped;
              if (n > tr.lr * A + kStepTol) ++violations;
              x = local_step(x, s.g, s.lambda, s.mu);
            }
          }
          count_norm(r, cfg);
        });
      }
    }
    const double secs = seconds_since(t0);
    report(3, "per-step bound grid", violations == 0 && secs < 60.0,
           std::to_string(violations) + " violations in " + std::to_string(steps) + " steps (" +
               std::to_string(clipped) + " clipped), " + fmt("%.1f s", secs));
  });

  // 4 ------------------------------------------------------------------------
  report(4, "global norm bound", norm_tally.violations == 0 && norm_tally.rounds == 100 + 9 * 50,
         std::to_string(norm_tally.violations) + " violations over " + std::to_string(norm_tally.rounds) +
             " rounds of runs 2-3, min slack " + fmt("%.4g", norm_tally.worst_slack));

  // 5 ------------------------------------------------------------------------
  guarded(5, "zero-decay collapse", [] {
    ExperimentConfig a;
    a.schedule.u0 = 0.0;
    a.rule = StepRuleKind::kFedNar;
    auto b = a;
    b.rule = StepRuleKind::kGradClipWd;
    const auto ra = run_experiment(a), rb = run_experiment(b);
    std::size_t clips = 0;
    for (const auto& r : ra.rows) clips += r.clip_count;
    report(5, "zero-decay collapse", metrics_without_timing(ra.rows) == metrics_without_timing(rb.rows),
           "default config, u0 = 0: metrics " +
               std::string(metrics_without_timing(ra.rows) == metrics_without_timing(rb.rows) ? "identical" : "differ") +
               ", " + std::to_string(clips) + " clipped steps");
  });

  // 6 ------------------------------------------------------------------------
  guarded(6, "FedAvg recovery", [] {
    ExperimentConfig c;
    c.rounds = 10;
    c.rule = StepRuleKind::kPlainWd;
    c.schedule = Schedule{1e-4, 1.0, 0.0, 1.0};  // unclipped SGD diverges at the default l0 on this data
    const auto engine = run_experiment(c).x_final;
    const auto reference = independent_fedavg(c);
    const bool same = engine.to_vector() == reference;
    double diff = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) diff = std::max(diff, std::abs(engine[i] - reference[i]));
    report(6, "FedAvg recovery", same,
           std::string(same ? "bit-identical" : "differs") + " after 10 rounds, max |diff| " + fmt("%.3g", diff));
  });

  // 7, 8, 9, 11 share the default-config runs.
  std::vector<ExperimentResult> tuned(kSeeds);  // FEDNAR, u0 = 0.01 (default)
  std::vector<double> acc_nar_big, acc_clip_big, acc_nar_tuned;
  double clip_big_seed0 = 0.0;
  guarded(7, "self-adjustment under oversized decay", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t seed = 0; seed < kSeeds; ++seed) {
      ExperimentConfig c;
      c.seed = seed;
      tuned[seed] = run_experiment(c);
      acc_nar_tuned.push_back(final_accuracy(tuned[seed]));
      c.schedule.u0 = 0.1;
      acc_nar_big.push_back(final_accuracy(run_experiment(c)));
      c.rule = StepRuleKind::kGradClipWd;
      acc_clip_big.push_back(final_accuracy(run_experiment(c)));
    }
    clip_big_seed0 = acc_clip_big[0];
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    const double nar = mean(acc_nar_big), clip = mean(acc_clip_big), ref = mean(acc_nar_tuned);
    const double secs = seconds_since(t0);
    const bool margin_ok = nar - clip >= kMinSelfAdjustMargin;
    const bool gap_ok = ref - nar <= kMaxGapToTunedDecay;
    report(7, "self-adjustment under oversized decay", margin_ok && gap_ok && secs < 300.0,
           "mean acc over " + std::to_string(kSeeds) + " seeds at u0=0.1: FEDNAR " + fmt("%.4f", nar) +
               ", GRADCLIP_WD " + fmt("%.4f", clip) + " (margin " + fmt("%+.4f", nar - clip) + ", need >= " +
               fmt("%.2f", kMinSelfAdjustMargin) + (margin_ok ? " ok" : " MISSED") + "); FEDNAR at u0=0.01 " +
               fmt("%.4f", ref) + " (gap " + fmt("%.4f", ref - nar) + ", need <= " + fmt("%.2f", kMaxGapToTunedDecay) +
               (gap_ok ? " ok" : " MISSED") + "); " + fmt("%.0f s", secs));
  });

  guarded(8, "weight-decay sensitivity sweep", [&] {
    const double sweep[] = {1e-4, 1e-3, 1e-2, 5e-2, 1e-1};
    std::vector<double> acc;
    std::string curve;
    for (double u0 : sweep) {
      double a = 0.0;
      if (u0 == 1e-1 && !acc_clip_big.empty()) {
        a = clip_big_seed0;
      } else {
        ExperimentConfig c;
        c.rule = StepRuleKind::kGradClipWd;
        c.schedule.u0 = u0;
        a = final_accuracy(run_experiment(c));
      }
      acc.push_back(a);
      curve += (curve.empty() ? "" : ", ") + fmt("%g", u0) + ":" + fmt("%.4f", a);
    }
    bool up = true, down = true;
    for (std::size_t i = 1; i < acc.size(); ++i) {
      up = up && acc[i] >= acc[i - 1];
      down = down && acc[i] <= acc[i - 1];
    }
    const double peak = *std::max_element(acc.begin(), acc.end());
    const bool ok = !up && !down && peak - acc.back() >= kMinSweepDrop;
    report(8, "weight-decay sensitivity sweep", ok,
           "GRADCLIP_WD accuracy {" + curve + "}, drop from peak " + fmt("%.4f", peak - acc.back()) + " (need >= " +
               fmt("%.2f", kMinSweepDrop) + ")" + (!up && !down ? ", non-monotone" : ", monotone"));
  });

  guarded(9, "clip-count trend", [&] {
    if (tuned.front().rows.empty()) throw std::runtime_error("default runs unavailable");
    std::size_t positive = 0;
    std::string rhos;
    for (const auto& res : tuned) {
      const auto& rows = res.rows;
      std::vector<double> round, clips;
      for (std::size_t i = rows.size() / 2; i < rows.size(); ++i) {
        round.push_back(static_cast<double>(rows[i].round));
        clips.push_back(static_cast<double>(rows[i].clip_count));
      }
      const double rho = spearman(round, clips);
      positive += rho > 0.0;
      rhos += (rhos.empty() ? "" : ", ") + fmt("%+.3f", rho);
    }
    report(9, "clip-count trend", positive >= kMinPositiveTrendSeeds,
           "second-half Spearman(round, clip_count) per seed {" + rhos + "}; positive in " + std::to_string(positive) +
               "/" + std::to_string(kSeeds) + " (need >= " + std::to_string(kMinPositiveTrendSeeds) + ")");
  });

  // 10 -----------------------------------------------------------------------
  guarded(10, "Dirichlet heterogeneity", [] {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> means;
    std::size_t partitions = 0;
    const ExperimentConfig def;
    const auto tt = make_blobs(def.classes, def.per_class, 2, 1.0, 1.0, RngStream(0));
    for (double alpha : {0.3, 1.0, 10.0}) {
      auto eng = RngStream(77).engine();
      double s = 0.0;
      for (int k = 0; k < 1000; ++k) {
        const auto p = sample_dirichlet(10, alpha, eng);
        double tv = 0.0;
        for (double v : p) tv += std::abs(v - 0.1);
        s += 0.5 * tv;
      }
      means.push_back(s / 1000.0);
      for (std::size_t M : {1u, 10u, 50u, 200u}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
          check_partition(dirichlet_partition(tt.train, M, alpha, RngStream(seed)), tt.train.size(), def.classes);
          ++partitions;
        }
      }
    }
    const double secs = seconds_since(t0);
    report(10, "Dirichlet heterogeneity", means[0] > means[1] && means[1] > means[2] && secs < 10.0,
           "mean TV at alpha 0.3/1/10: " + fmt("%.4f", means[0]) + " / " + fmt("%.4f", means[1]) + " / " +
               fmt("%.4f", means[2]) + "; " + std::to_string(partitions) + " partitions pass the cover check, " +
               fmt("%.2f s", secs));
  });

  // 11 -----------------------------------------------------------------------
  guarded(11, "determinism", [&] {
    if (tuned.front().rows.empty()) throw std::runtime_error("default run unavailable");
    const auto again = run_experiment(ExperimentConfig{});
    const bool same = metrics_without_timing(again.rows) == metrics_without_timing(tuned.front().rows);
    report(11, "determinism", same,
           std::string("default config rerun: metrics CSV ") + (same ? "byte-identical" : "differs") +
               " excluding wall_ms");
  });

  std::printf("%d criteria failed, %.0f s total\n", failures, seconds_since(suite_start));
  return failures == 0 ? 0 : 1;
}
