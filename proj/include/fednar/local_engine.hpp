#pragma once

// Client-side training: learning-rate / weight-decay schedules, the three
// step rules (plain weight decay, gradient clipping, co-clipping), local
// objective modifiers and the tau-step local loop with trace recording.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fednar/data.hpp"
#include "fednar/errors.hpp"
#include "fednar/models.hpp"
#include "fednar/numkit.hpp"

namespace fednar {

/// Absolute tolerance for exact arithmetic identities.
inline constexpr double kIdentityTol = 1e-12;

struct Schedule {
  double l0 = 0.01;
  double rho = 0.998;
  double u0 = 0.01;
  double gamma = 0.998;

  void validate() const {
    if (!(l0 > 0.0)) throw PreconditionError("Schedule: l0 must be positive");
    if (!(rho > 0.0 && rho <= 1.0)) throw PreconditionError("Schedule: rho must lie in (0, 1]");
    if (!(u0 >= 0.0)) throw PreconditionError("Schedule: u0 must be non-negative");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw PreconditionError("Schedule: gamma must lie in (0, 1]");
  }

  /// max_t l_t; the schedule is non-increasing so this is l0.
  double max_lr() const noexcept { return l0; }
};

struct RoundRates {
  double lr;  // l_t
  double wd;  // u_t
};

/// (l0 * rho^t, u0 * gamma^t) for zero-based round index t.
inline RoundRates schedule_at(const Schedule& s, std::size_t t) {
  const double tt = static_cast<double>(t);
  return {s.l0 * std::pow(s.rho, tt), s.u0 * std::pow(s.gamma, tt)};
}

enum class StepRuleKind { kPlainWd, kGradClipWd, kFedNar };

struct StepRule {
  StepRuleKind kind = StepRuleKind::kFedNar;
  double max_norm = 10.0;  // A

  void validate() const {
    if (kind != StepRuleKind::kPlainWd && !(max_norm > 0.0)) {
      throw PreconditionError("StepRule: max_norm must be positive for clipping rules");
    }
  }
};

/// Learning rate and weight decay actually applied on one local step.
struct Coefficients {
  double lambda;
  double mu;
  double pre_clip_norm;  // the norm compared against A
  bool clipped;
};

namespace detail {

inline void check_rates(double l_t, double u_t, double A) {
  if (!(l_t > 0.0)) throw PreconditionError("coefficients: l_t must be positive");
  if (!(u_t >= 0.0)) throw PreconditionError("coefficients: u_t must be non-negative");
  if (!(A > 0.0)) throw PreconditionError("coefficients: A must be positive");
}

// || g + c * x ||
inline double shifted_norm(const ParamVector& g, const ParamVector& x, double c) {
  require_same_dim(g, x, "shifted_norm");
  double s = 0.0;
  for (std::size_t i = 0; i < g.dim(); ++i) {
    const double v = g[i] + c * x[i];
    s += v * v;
  }
  return std::sqrt(s);
}

}  // namespace detail

/// Co-clipping: scale learning rate and weight decay together by
/// A / ||g + (u_t / l_t) x|| whenever that norm exceeds A, so that
/// ||lambda g + mu x|| <= l_t A.
inline Coefficients nar_coefficients(const ParamVector& g, const ParamVector& x, double l_t, double u_t,
                                     double A) {
  detail::check_rates(l_t, u_t, A);
  const double n = detail::shifted_norm(g, x, u_t / l_t);
  if (!std::isfinite(n)) throw NumericError("nar_coefficients: non-finite norm");
  if (n > A) return {l_t * A / n, u_t * A / n, n, true};
  return {l_t, u_t, n, false};
}

/// Plain gradient clipping: only the learning rate is rescaled, by A / ||g||.
inline Coefficients clip_coefficients(const ParamVector& g, double l_t, double u_t, double A) {
  detail::check_rates(l_t, u_t, A);
  const double n = norm2(g);
  if (!std::isfinite(n)) throw NumericError("clip_coefficients: non-finite norm");
  if (n > A) return {l_t * A / n, u_t, n, true};
  return {l_t, u_t, n, false};
}

/// (1 - mu) x - lambda g
inline ParamVector local_step(const ParamVector& x, const ParamVector& g, double lambda, double mu) {
  return lin_comb(1.0 - mu, x, -lambda, g);
}

inline Coefficients step_coefficients(const StepRule& rule, const ParamVector& g, const ParamVector& x,
                                      double l_t, double u_t) {
  switch (rule.kind) {
    case StepRuleKind::kFedNar:
      return nar_coefficients(g, x, l_t, u_t, rule.max_norm);
    case StepRuleKind::kGradClipWd:
      return clip_coefficients(g, l_t, u_t, rule.max_norm);
    case StepRuleKind::kPlainWd:
      break;
  }
  return {l_t, u_t, detail::shifted_norm(g, x, u_t / l_t), false};
}

enum class ModifierKind { kNone, kProx, kScaffold };

/// Local-objective change applied to the raw stochastic gradient.
struct ObjectiveModifier {
  ModifierKind kind = ModifierKind::kNone;
  double prox_mu = 0.01;
  std::optional<ParamVector> client_variate;  // c_i
  std::optional<ParamVector> global_variate;  // c

  static ObjectiveModifier none() { return {}; }
  static ObjectiveModifier prox(double mu) { return {ModifierKind::kProx, mu, std::nullopt, std::nullopt}; }
  static ObjectiveModifier scaffold(ParamVector c_i, ParamVector c) {
    return {ModifierKind::kScaffold, 0.0, std::move(c_i), std::move(c)};
  }
};

/// NONE: g. PROX: g + prox_mu (x - x0). SCAFFOLD: g - c_i + c.
inline ParamVector modified_gradient(const ObjectiveModifier& mod, const ParamVector& g, const ParamVector& x,
                                     const ParamVector& x0) {
  switch (mod.kind) {
    case ModifierKind::kNone:
      return g;
    case ModifierKind::kProx: {
      if (!(mod.prox_mu >= 0.0)) throw PreconditionError("modified_gradient: prox_mu must be >= 0");
      require_same_dim(x, x0, "modified_gradient");
      require_same_dim(g, x, "modified_gradient");
      ParamVector out(g.dim());
      for (std::size_t i = 0; i < g.dim(); ++i) out[i] = g[i] + mod.prox_mu * (x[i] - x0[i]);
      require_finite(out, "modified_gradient");
      return out;
    }
    case ModifierKind::kScaffold: {
      if (!mod.client_variate || !mod.global_variate) {
        throw PreconditionError("modified_gradient: SCAFFOLD control variates not initialized");
      }
      const auto& ci = *mod.client_variate;
      const auto& c = *mod.global_variate;
      require_same_dim(g, ci, "modified_gradient");
      require_same_dim(g, c, "modified_gradient");
      ParamVector out(g.dim());
      for (std::size_t i = 0; i < g.dim(); ++i) out[i] = g[i] - ci[i] + c[i];
      require_finite(out, "modified_gradient");
      return out;
    }
  }
  return g;
}

/// One recorded local step.
struct StepRecord {
  double lambda = 0.0;
  double mu = 0.0;
  double pre_clip_norm = 0.0;
  double step_norm = 0.0;  // ||lambda g + mu x||
  bool clipped = false;
  ParamVector g;                 // modified gradient
  std::optional<ParamVector> x;  // iterate before the step, when snapshots are enabled
};

/// Everything one client did in one round.
struct ClientTrace {
  std::size_t client_id = 0;
  std::size_t round = 0;
  double lr = 0.0;  // l_t
  double wd = 0.0;  // u_t
  StepRuleKind rule = StepRuleKind::kFedNar;
  double max_norm = 0.0;
  std::vector<StepRecord> steps;
};

using RoundTrace = std::vector<ClientTrace>;

struct LocalResult {
  ParamVector delta;  // x_global - x_tau
  ClientTrace trace;
};

struct LocalOptions {
  bool record_snapshots = false;
};

/// Runs tau local steps from `x_global` on the client's shard.
///
/// Each step draws a batch from `rng`/step, computes the model gradient,
/// applies the objective modifier, evaluates the step rule at the current
/// iterate and then updates. Under FEDNAR every step is checked against
/// ||lambda g + mu x|| <= l_t A.
inline LocalResult run_local(const Model& model, const Dataset& dataset, const ClientShard& shard,
                             const ParamVector& x_global, std::size_t t, std::size_t tau,
                             const StepRule& rule, const Schedule& schedule, const ObjectiveModifier& mod,
                             std::size_t batch_size, const RngStream& rng, const LocalOptions& opts = {}) {
  if (tau < 1) throw PreconditionError("run_local: tau must be >= 1");
  rule.validate();
  schedule.validate();
  const auto [l_t, u_t] = schedule_at(schedule, t);

  LocalResult out;
  out.trace.client_id = shard.client_id;
  out.trace.round = t;
  out.trace.lr = l_t;
  out.trace.wd = u_t;
  out.trace.rule = rule.kind;
  out.trace.max_norm = rule.max_norm;
  out.trace.steps.reserve(tau);

  ParamVector x = x_global;
  for (std::size_t k = 0; k < tau; ++k) {
    const Batch batch = next_batch(shard, dataset, batch_size, rng, k);
    ParamVector g = modified_gradient(mod, grad(model, x, batch), x, x_global);
    const Coefficients co = step_coefficients(rule, g, x, l_t, u_t);

    StepRecord rec;
    rec.lambda = co.lambda;
    rec.mu = co.mu;
    rec.pre_clip_norm = co.pre_clip_norm;
    rec.clipped = co.clipped;
    {
      double s = 0.0;
      for (std::size_t i = 0; i < x.dim(); ++i) {
        const double v = co.lambda * g[i] + co.mu * x[i];
        s += v * v;
      }
      rec.step_norm = std::sqrt(s);
    }
    if (rule.kind == StepRuleKind::kFedNar && rec.step_norm > l_t * rule.max_norm + kIdentityTol) {
      throw DiagnosticError("run_local: step bound violated at round " + std::to_string(t) + ", client " +
                            std::to_string(shard.client_id) + ", step " + std::to_string(k) +
                            ": ||lambda g + mu x|| = " + std::to_string(rec.step_norm) +
                            " > l_t A = " + std::to_string(l_t * rule.max_norm));
    }
    if (opts.record_snapshots) rec.x = x;

    x = local_step(x, g, co.lambda, co.mu);
    rec.g = std::move(g);
    out.trace.steps.push_back(std::move(rec));
  }
  out.delta = x_global - x;
  return out;
}

}  // namespace fednar
