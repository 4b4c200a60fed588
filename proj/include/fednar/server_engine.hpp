#pragma once

// Server side: aggregation, global update rules, SCAFFOLD control-variate
// bookkeeping and per-round theory diagnostics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fednar/errors.hpp"
#include "fednar/local_engine.hpp"
#include "fednar/numkit.hpp"

namespace fednar {

/// Tolerance for reconstructing the global step from the recorded local traces.
inline constexpr double kReconstructionTol = 1e-9;

enum class ServerOptimizer { kAvg, kAvgM, kAdam, kExp };

struct ServerConfig {
  ServerOptimizer optimizer = ServerOptimizer::kAvg;
  double lambda_g = 1.0;
  double server_momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-3;
  double exp_eps = 1e-3;

  void validate() const {
    if (!(lambda_g > 0.0)) throw PreconditionError("ServerConfig: lambda_g must be positive");
    if (!(server_momentum >= 0.0 && server_momentum < 1.0)) {
      throw PreconditionError("ServerConfig: server_momentum must lie in [0, 1)");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw PreconditionError("ServerConfig: Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0) || !(exp_eps > 0.0)) throw PreconditionError("ServerConfig: eps must be positive");
  }
};

struct ServerState {
  ParamVector x;
  std::size_t t = 0;  // completed rounds
  ServerConfig config;
  ParamVector momentum_buf;   // AVGM momentum / Adam first moment
  ParamVector second_moment;  // Adam

  static ServerState initial(ParamVector x0, ServerConfig cfg) {
    cfg.validate();
    ServerState s;
    s.momentum_buf = ParamVector(x0.dim());
    s.second_moment = ParamVector(x0.dim());
    s.x = std::move(x0);
    s.config = cfg;
    return s;
  }
};

/// Unweighted mean, accumulated in the given order (callers pass ascending client id).
inline ParamVector aggregate(std::span<const ParamVector> deltas) {
  if (deltas.empty()) throw PreconditionError("aggregate: no deltas");
  ParamVector sum = deltas[0];
  for (std::size_t k = 1; k < deltas.size(); ++k) {
    require_same_dim(sum, deltas[k], "aggregate");
    for (std::size_t i = 0; i < sum.dim(); ++i) sum[i] += deltas[k][i];
  }
  const double n = static_cast<double>(deltas.size());
  for (std::size_t i = 0; i < sum.dim(); ++i) sum[i] /= n;
  require_finite(sum, "aggregate");
  return sum;
}

/// FedExP server step size: max(1, sum_i ||d_i||^2 / (2 |C| (||mean||^2 + eps))).
inline double fedexp_step(std::span<const ParamVector> client_deltas, const ParamVector& delta_bar,
                          double eps) {
  if (client_deltas.empty()) throw PreconditionError("fedexp_step: no client deltas");
  double num = 0.0;
  for (const auto& d : client_deltas) {
    const double n = norm2(d);
    num += n * n;
  }
  const double nb = norm2(delta_bar);
  const double denom = 2.0 * static_cast<double>(client_deltas.size()) * (nb * nb + eps);
  return std::max(1.0, num / denom);
}

/// Applies one server update to the aggregated delta. `client_deltas` is only
/// read by the EXP rule.
inline ServerState global_update(const ServerState& state, const ParamVector& delta_bar,
                                 std::span<const ParamVector> client_deltas = {}) {
  require_same_dim(state.x, delta_bar, "global_update");
  ServerState next = state;
  const auto& cfg = state.config;
  const std::size_t n = delta_bar.dim();
  switch (cfg.optimizer) {
    case ServerOptimizer::kAvg:
      next.x = lin_comb(1.0, state.x, -cfg.lambda_g, delta_bar);
      break;
    case ServerOptimizer::kAvgM:
      next.momentum_buf = lin_comb(cfg.server_momentum, state.momentum_buf, 1.0, delta_bar);
      next.x = lin_comb(1.0, state.x, -cfg.lambda_g, next.momentum_buf);
      break;
    case ServerOptimizer::kAdam: {
      const double step = static_cast<double>(state.t + 1);
      const double bc1 = 1.0 - std::pow(cfg.beta1, step);
      const double bc2 = 1.0 - std::pow(cfg.beta2, step);
      for (std::size_t i = 0; i < n; ++i) {
        const double d = delta_bar[i];
        next.momentum_buf[i] = cfg.beta1 * state.momentum_buf[i] + (1.0 - cfg.beta1) * d;
        next.second_moment[i] = cfg.beta2 * state.second_moment[i] + (1.0 - cfg.beta2) * d * d;
        const double m_hat = next.momentum_buf[i] / bc1;
        const double v_hat = next.second_moment[i] / bc2;
        next.x[i] = state.x[i] - cfg.lambda_g * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
      }
      break;
    }
    case ServerOptimizer::kExp: {
      const double eta = fedexp_step(client_deltas, delta_bar, cfg.exp_eps);
      next.x = lin_comb(1.0, state.x, -eta, delta_bar);
      break;
    }
  }
  if (!all_finite(next.x.values())) {
    throw NumericError("global_update: non-finite model after round " + std::to_string(state.t + 1));
  }
  next.t = state.t + 1;
  return next;
}

// ---------------------------------------------------------------------------
// SCAFFOLD

struct ScaffoldVariates {
  ParamVector global;               // c
  std::vector<ParamVector> client;  // c_i for every client, participating or not

  static ScaffoldVariates zeros(std::size_t clients, std::size_t dim) {
    return {ParamVector(dim), std::vector<ParamVector>(clients, ParamVector(dim))};
  }
};

/// Control-variate refresh without an extra gradient pass:
///   c_i' = c_i - c + delta_i / (tau l_eff)
///   c'   = c + (1/M) sum_{i in participated} (c_i' - c_i)
/// where M is the total client count. `deltas[k]` belongs to `participated[k]`.
inline ScaffoldVariates scaffold_server_round(const ScaffoldVariates& variates,
                                              std::span<const std::size_t> participated,
                                              std::span<const ParamVector> deltas, std::size_t tau,
                                              double l_eff) {
  if (participated.empty()) throw PreconditionError("scaffold_server_round: no participants");
  if (participated.size() != deltas.size()) {
    throw PreconditionError("scaffold_server_round: participants/deltas length mismatch");
  }
  const double scale = static_cast<double>(tau) * l_eff;
  if (!(scale != 0.0)) throw PreconditionError("scaffold_server_round: tau * l_eff must be non-zero");
  const double M = static_cast<double>(variates.client.size());

  ScaffoldVariates next = variates;
  ParamVector drift_sum(variates.global.dim());
  for (std::size_t k = 0; k < participated.size(); ++k) {
    const std::size_t id = participated[k];
    if (id >= variates.client.size()) throw PreconditionError("scaffold_server_round: bad client id");
    const auto& ci = variates.client[id];
    const auto& c = variates.global;
    const auto& d = deltas[k];
    require_same_dim(ci, d, "scaffold_server_round");
    ParamVector ci_new(ci.dim());
    for (std::size_t i = 0; i < ci.dim(); ++i) {
      ci_new[i] = ci[i] - c[i] + d[i] / scale;
      drift_sum[i] += ci_new[i] - ci[i];
    }
    require_finite(ci_new, "scaffold_server_round");
    next.client[id] = std::move(ci_new);
  }
  next.global = lin_comb(1.0, variates.global, 1.0 / M, drift_sum);
  return next;
}

// ---------------------------------------------------------------------------
// Global-step decomposition
//
// With x_k = (1 - mu_{k-1}) x_{k-1} - lambda_{k-1} g_{k-1} on every client and
// x^t = x^{t-1} - lambda_g * mean_i(delta_i), the global step equals
//   x^t = (1 - mu_g) x^{t-1} - lambda_g h
//   mu_g = lambda_g - (lambda_g / M) sum_i prod_j (1 - mu_j)
//   h    = (1/M) sum_i sum_j lambda_j [prod_{r>j} (1 - mu_r)] g_j

/// Which decay factors multiply the j-th gradient in h.
enum class GradientDecayProduct {
  kAfterStep,      // prod_{r=j+1}^{tau-1}: what iterating the local update yields
  kIncludingStep,  // prod_{r=j}^{tau-1}: one extra factor, does not reconstruct the step
};

struct Lemma1Report {
  double mu_g = 0.0;
  ParamVector h;
  double reconstruction_error = 0.0;  // inf-norm
  double max_decay_coefficient = 0.0;  // max_i 1 - prod_j (1 - mu_j)
};

/// Computes mu_g, h and the reconstruction error without judging it.
inline Lemma1Report lemma1_reconstruct(const RoundTrace& traces, const ParamVector& x_prev,
                                       const ParamVector& x_new_simulated, double lambda_g,
                                       GradientDecayProduct convention = GradientDecayProduct::kAfterStep) {
  if (traces.empty()) throw PreconditionError("lemma1: no client traces");
  require_same_dim(x_prev, x_new_simulated, "lemma1");
  const double M = static_cast<double>(traces.size());
  Lemma1Report rep;
  rep.h = ParamVector(x_prev.dim());
  double prod_sum = 0.0;
  for (const auto& tr : traces) {
    const std::size_t tau = tr.steps.size();
    if (tau == 0) throw PreconditionError("lemma1: client trace without steps");
    // suffix[j] = prod_{r=j}^{tau-1} (1 - mu_r); suffix[tau] = 1
    std::vector<double> suffix(tau + 1, 1.0);
    for (std::size_t j = tau; j-- > 0;) suffix[j] = suffix[j + 1] * (1.0 - tr.steps[j].mu);
    prod_sum += suffix[0];
    rep.max_decay_coefficient = std::max(rep.max_decay_coefficient, 1.0 - suffix[0]);
    for (std::size_t j = 0; j < tau; ++j) {
      const auto& st = tr.steps[j];
      require_same_dim(st.g, x_prev, "lemma1");
      const double decay = convention == GradientDecayProduct::kAfterStep ? suffix[j + 1] : suffix[j];
      const double coef = st.lambda * decay / M;
      for (std::size_t i = 0; i < rep.h.dim(); ++i) rep.h[i] += coef * st.g[i];
    }
  }
  rep.mu_g = lambda_g - lambda_g / M * prod_sum;
  double err = 0.0;
  for (std::size_t i = 0; i < x_prev.dim(); ++i) {
    const double recon = (1.0 - rep.mu_g) * x_prev[i] - lambda_g * rep.h[i];
    err = std::max(err, std::abs(recon - x_new_simulated[i]));
  }
  rep.reconstruction_error = err;
  return rep;
}

/// As lemma1_reconstruct, but a reconstruction error above 1e-9 is a hard failure.
inline Lemma1Report lemma1_decompose(const RoundTrace& traces, const ParamVector& x_prev,
                                     const ParamVector& x_new_simulated, double lambda_g) {
  auto rep = lemma1_reconstruct(traces, x_prev, x_new_simulated, lambda_g);
  if (!(rep.reconstruction_error <= kReconstructionTol)) {
    throw DiagnosticError("lemma1: reconstruction error " + std::to_string(rep.reconstruction_error) +
                          " exceeds " + std::to_string(kReconstructionTol));
  }
  return rep;
}

/// 1 - prod_j (1 - mu_j) <= tau u_t on every client; returns the worst slack.
inline double decay_coefficient_slack(const RoundTrace& traces) {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& tr : traces) {
    double prod = 1.0;
    for (const auto& st : tr.steps) prod *= 1.0 - st.mu;
    const double bound = static_cast<double>(tr.steps.size()) * tr.wd;
    worst = std::min(worst, bound - (1.0 - prod));
  }
  return worst;
}

struct NormBoundCheck {
  bool ok;
  double slack;  // bound - ||x_t||
  double bound;
};

/// ||x_t|| <= ||x_0|| + lambda_g tau l_star A t (+1e-9).
inline NormBoundCheck check_norm_bound(const ParamVector& x_t, const ParamVector& x_0, double lambda_g,
                                       std::size_t tau, double A, double l_star, std::size_t t) {
  const double bound =
      norm2(x_0) + lambda_g * static_cast<double>(tau) * (l_star * A) * static_cast<double>(t);
  const double nx = norm2(x_t);
  return {nx <= bound + kReconstructionTol, bound - nx, bound};
}

struct ClipStats {
  std::size_t clip_count = 0;
  std::size_t total_steps = 0;
  double mean_clipped_norm = 0.0;  // 0 when nothing was clipped
  bool empty = true;
};

inline ClipStats clip_stats(const RoundTrace& traces) {
  ClipStats s;
  double sum = 0.0;
  for (const auto& tr : traces) {
    for (const auto& st : tr.steps) {
      ++s.total_steps;
      if (st.clipped) {
        ++s.clip_count;
        sum += st.pre_clip_norm;
      }
    }
  }
  s.empty = s.clip_count == 0;
  s.mean_clipped_norm = s.empty ? 0.0 : sum / static_cast<double>(s.clip_count);
  return s;
}

}  // namespace fednar
