#pragma once

// Closed-form loss/gradient oracles: linear regression, multinomial logistic
// regression, and a one-hidden-layer MLP.
//
// Parameter layout is layer by layer, weights row-major (output x input)
// followed by that layer's biases:
//   linear     [w (d_in), b]
//   logistic   [W (C x d_in), b (C)]
//   mlp        [W1 (H x d_in), b1 (H), W2 (C x H), b2 (C)]

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fednar/errors.hpp"
#include "fednar/numkit.hpp"

namespace fednar {

/// Rows of features plus either class labels or real targets.
struct Batch {
  std::size_t d_in = 0;
  std::vector<double> features;  // row-major, size() * d_in
  std::vector<int> labels;       // classification
  std::vector<double> targets;   // regression

  std::size_t size() const noexcept { return d_in == 0 ? 0 : features.size() / d_in; }
  bool empty() const noexcept { return size() == 0; }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * d_in, d_in);
  }

  void validate(std::size_t classes) const {
    if (d_in == 0 || features.size() % d_in != 0) throw DimensionError("Batch: ragged feature rows");
    const std::size_t n = size();
    if (!labels.empty()) {
      if (labels.size() != n) throw DimensionError("Batch: labels/features length mismatch");
      for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
          throw PreconditionError("Batch: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(classes) + ")");
        }
      }
    }
    if (!targets.empty() && targets.size() != n) {
      throw DimensionError("Batch: targets/features length mismatch");
    }
  }
};

enum class Family { kLinearRegression, kMultinomialLogistic, kMlpOneHidden };
enum class Activation { kTanh, kRelu };

struct Model {
  Family family = Family::kMultinomialLogistic;
  std::size_t d_in = 1;
  std::size_t classes = 2;  // 1 for regression
  std::size_t hidden = 0;   // MLP only
  Activation activation = Activation::kTanh;

  static Model linear_regression(std::size_t d_in) {
    return {Family::kLinearRegression, d_in, 1, 0, Activation::kTanh};
  }
  static Model logistic(std::size_t d_in, std::size_t classes) {
    return {Family::kMultinomialLogistic, d_in, classes, 0, Activation::kTanh};
  }
  static Model mlp(std::size_t d_in, std::size_t hidden, std::size_t classes,
                   Activation act = Activation::kTanh) {
    return {Family::kMlpOneHidden, d_in, classes, hidden, act};
  }

  bool is_classifier() const noexcept { return family != Family::kLinearRegression; }

  std::size_t param_dim() const noexcept {
    switch (family) {
      case Family::kLinearRegression:
        return d_in + 1;
      case Family::kMultinomialLogistic:
        return classes * d_in + classes;
      case Family::kMlpOneHidden:
        return hidden * d_in + hidden + classes * hidden + classes;
    }
    return 0;
  }

  void validate() const {
    if (d_in == 0) throw PreconditionError("Model: d_in must be positive");
    if (family == Family::kLinearRegression && classes != 1) {
      throw PreconditionError("Model: regression must have exactly one output");
    }
    if (is_classifier() && classes < 2) throw PreconditionError("Model: need at least 2 classes");
    if (family == Family::kMlpOneHidden && hidden == 0) {
      throw PreconditionError("Model: MLP hidden width must be positive");
    }
  }
};

namespace detail {

inline void check_inputs(const Model& model, const ParamVector& params, const Batch& batch) {
  model.validate();
  if (params.dim() != model.param_dim()) {
    throw DimensionError("model: params dim " + std::to_string(params.dim()) + " != param_dim " +
                         std::to_string(model.param_dim()));
  }
  if (batch.d_in != model.d_in) throw DimensionError("model: batch feature dim != d_in");
  if (batch.empty()) throw PreconditionError("model: empty batch");
  batch.validate(model.classes);
  if (model.is_classifier() && batch.labels.size() != batch.size()) {
    throw PreconditionError("model: classifier batch needs labels");
  }
  if (!model.is_classifier() && batch.targets.size() != batch.size()) {
    throw PreconditionError("model: regression batch needs targets");
  }
}

inline double activate(Activation a, double z) { return a == Activation::kTanh ? std::tanh(z) : (z > 0.0 ? z : 0.0); }

// Derivative expressed via pre-activation z and activation value h.
inline double activate_deriv(Activation a, double z, double h) {
  if (a == Activation::kTanh) return 1.0 - h * h;
  return z > 0.0 ? 1.0 : 0.0;
}

// out[r] = b[r] + sum_c W[r, c] * x[c]
inline void affine(const double* w, const double* b, std::size_t rows, std::size_t cols,
                   const double* x, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
    out[r] = s + b[r];
  }
}

inline double log_sum_exp(const double* z, std::size_t n) {
  const double m = *std::max_element(z, z + n);
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += std::exp(z[k] - m);
  return m + std::log(s);
}

// Computes the batch-mean loss and, when `grad_out` is non-null, the gradient.
inline double evaluate(const Model& model, const ParamVector& params, const Batch& batch,
                       double* grad_out) {
  check_inputs(model, params, batch);
  const std::size_t n = batch.size();
  const std::size_t d = model.d_in;
  const std::size_t C = model.classes;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double* p = params.data();
  if (grad_out) std::fill(grad_out, grad_out + params.dim(), 0.0);

  double total = 0.0;
  switch (model.family) {
    case Family::kLinearRegression: {
      const double* w = p;
      const double b = p[d];
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = batch.features.data() + i * d;
        double pred = b;
        for (std::size_t c = 0; c < d; ++c) pred += w[c] * x[c];
        const double r = pred - batch.targets[i];
        total += r * r;
        if (grad_out) {
          const double coef = 2.0 * r * inv_n;
          for (std::size_t c = 0; c < d; ++c) grad_out[c] += coef * x[c];
          grad_out[d] += coef;
        }
      }
      break;
    }
    case Family::kMultinomialLogistic: {
      const double* W = p;
      const double* b = p + C * d;
      std::vector<double> z(C);
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = batch.features.data() + i * d;
        affine(W, b, C, d, x, z.data());
        const double lse = log_sum_exp(z.data(), C);
        const auto y = static_cast<std::size_t>(batch.labels[i]);
        total += lse - z[y];
        if (grad_out) {
          double* gW = grad_out;
          double* gb = grad_out + C * d;
          for (std::size_t k = 0; k < C; ++k) {
            const double dz = (std::exp(z[k] - lse) - (k == y ? 1.0 : 0.0)) * inv_n;
            double* gWk = gW + k * d;
            for (std::size_t c = 0; c < d; ++c) gWk[c] += dz * x[c];
            gb[k] += dz;
          }
        }
      }
      break;
    }
    case Family::kMlpOneHidden: {
      const std::size_t H = model.hidden;
      const double* W1 = p;
      const double* b1 = W1 + H * d;
      const double* W2 = b1 + H;
      const double* b2 = W2 + C * H;
      std::vector<double> z1(H), h(H), z2(C), dz2(C), dh(H);
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = batch.features.data() + i * d;
        affine(W1, b1, H, d, x, z1.data());
        for (std::size_t j = 0; j < H; ++j) h[j] = activate(model.activation, z1[j]);
        affine(W2, b2, C, H, h.data(), z2.data());
        const double lse = log_sum_exp(z2.data(), C);
        const auto y = static_cast<std::size_t>(batch.labels[i]);
        total += lse - z2[y];
        if (grad_out) {
          double* gW1 = grad_out;
          double* gb1 = gW1 + H * d;
          double* gW2 = gb1 + H;
          double* gb2 = gW2 + C * H;
          for (std::size_t k = 0; k < C; ++k) {
            dz2[k] = (std::exp(z2[k] - lse) - (k == y ? 1.0 : 0.0)) * inv_n;
          }
          std::fill(dh.begin(), dh.end(), 0.0);
          for (std::size_t k = 0; k < C; ++k) {
            const double g = dz2[k];
            const double* W2k = W2 + k * H;
            double* gW2k = gW2 + k * H;
            for (std::size_t j = 0; j < H; ++j) {
              gW2k[j] += g * h[j];
              dh[j] += g * W2k[j];
            }
            gb2[k] += g;
          }
          for (std::size_t j = 0; j < H; ++j) {
            const double dz1 = dh[j] * activate_deriv(model.activation, z1[j], h[j]);
            double* gW1j = gW1 + j * d;
            for (std::size_t c = 0; c < d; ++c) gW1j[c] += dz1 * x[c];
            gb1[j] += dz1;
          }
        }
      }
      break;
    }
  }
  const double mean = total * inv_n;
  if (!std::isfinite(mean)) throw NumericError("model: non-finite loss");
  return mean;
}

}  // namespace detail

/// Mean loss over the batch: MSE for regression, softmax cross-entropy
/// (natural log) for classification.
inline double loss(const Model& model, const ParamVector& params, const Batch& batch) {
  return detail::evaluate(model, params, batch, nullptr);
}

/// Exact gradient of `loss` with respect to the parameters.
inline ParamVector grad(const Model& model, const ParamVector& params, const Batch& batch) {
  ParamVector g(model.param_dim());
  detail::evaluate(model, params, batch, g.data());
  require_finite(g, "grad");
  return g;
}

struct LossAndGrad {
  double loss;
  ParamVector grad;
};

inline LossAndGrad loss_and_grad(const Model& model, const ParamVector& params, const Batch& batch) {
  ParamVector g(model.param_dim());
  const double l = detail::evaluate(model, params, batch, g.data());
  require_finite(g, "loss_and_grad");
  return {l, std::move(g)};
}

/// Output layer values for one feature row (logits, or the single regression output).
inline std::vector<double> forward(const Model& model, const ParamVector& params,
                                   std::span<const double> row) {
  model.validate();
  if (params.dim() != model.param_dim()) throw DimensionError("forward: params dim mismatch");
  if (row.size() != model.d_in) throw DimensionError("forward: feature dim mismatch");
  const std::size_t d = model.d_in;
  const std::size_t C = model.classes;
  const double* p = params.data();
  std::vector<double> out(C);
  switch (model.family) {
    case Family::kLinearRegression:
    case Family::kMultinomialLogistic:
      detail::affine(p, p + C * d, C, d, row.data(), out.data());
      break;
    case Family::kMlpOneHidden: {
      const std::size_t H = model.hidden;
      std::vector<double> h(H);
      detail::affine(p, p + H * d, H, d, row.data(), h.data());
      for (double& v : h) v = detail::activate(model.activation, v);
      const double* W2 = p + H * d + H;
      detail::affine(W2, W2 + C * H, C, H, h.data(), out.data());
      break;
    }
  }
  return out;
}

/// Argmax of the logits; ties go to the lowest class index.
inline std::size_t predict_class(const Model& model, const ParamVector& params,
                                 std::span<const double> row) {
  if (!model.is_classifier()) throw PreconditionError("predict_class: regression model");
  const auto z = forward(model, params, row);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

inline double predict_value(const Model& model, const ParamVector& params,
                            std::span<const double> row) {
  if (model.is_classifier()) throw PreconditionError("predict_value: classification model");
  return forward(model, params, row)[0];
}

/// Uniform on [-s, s], s = 1/sqrt(fan_in), for every weight and bias of a layer.
inline ParamVector init_params(const Model& model, const RngStream& rng) {
  model.validate();
  auto eng = rng.engine();
  ParamVector p(model.param_dim());
  std::size_t pos = 0;
  auto fill_layer = [&](std::size_t rows, std::size_t fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-s, s);
    for (std::size_t k = 0; k < rows * fan_in + rows; ++k) p[pos++] = u(eng);
  };
  if (model.family == Family::kMlpOneHidden) {
    fill_layer(model.hidden, model.d_in);
    fill_layer(model.classes, model.hidden);
  } else {
    fill_layer(model.classes, model.d_in);
  }
  return p;
}

/// Smallest |pre-activation| of the hidden layer over the batch; +inf for
/// models without a hidden layer. Used to keep ReLU gradient checks away
/// from kinks.
inline double min_abs_preactivation(const Model& model, const ParamVector& params, const Batch& batch) {
  if (model.family != Family::kMlpOneHidden) return std::numeric_limits<double>::infinity();
  detail::check_inputs(model, params, batch);
  const std::size_t H = model.hidden;
  const std::size_t d = model.d_in;
  std::vector<double> z(H);
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    detail::affine(params.data(), params.data() + H * d, H, d, batch.features.data() + i * d, z.data());
    for (double v : z) m = std::min(m, std::abs(v));
  }
  return m;
}

inline ParamVector fd_gradient(const Model& model, const ParamVector& params, const Batch& batch,
                               double h = kDefaultFdStep) {
  return fd_gradient([&](const ParamVector& p) { return loss(model, p, batch); }, params, h);
}

}  // namespace fednar
