#pragma once

// Dense parameter vectors, seeded stream-addressed randomness and a
// central-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fednar/errors.hpp"

namespace fednar {

/// Flat vector of doubles holding model weights, gradients and updates.
///
/// The dimension is fixed at construction; every binary operation checks
/// that both operands agree. A default-constructed vector is an empty
/// placeholder and cannot take part in arithmetic.
class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {
    if (dim == 0) throw PreconditionError("ParamVector: dim must be positive");
  }

  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw PreconditionError("ParamVector: dim must be positive");
  }

  ParamVector(std::initializer_list<double> values) : ParamVector(std::vector<double>(values)) {}

  std::size_t dim() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const double* data() const noexcept { return values_.data(); }
  double* data() noexcept { return values_.data(); }

  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  const std::vector<double>& to_vector() const noexcept { return values_; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

inline void require_same_dim(const ParamVector& u, const ParamVector& v, const char* op) {
  if (u.dim() != v.dim() || u.empty()) {
    throw DimensionError(std::string(op) + ": dimension mismatch (" + std::to_string(u.dim()) +
                         " vs " + std::to_string(v.dim()) + ")");
  }
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline void require_finite(const ParamVector& v, const char* op) {
  if (!all_finite(v.values())) throw NumericError(std::string(op) + ": non-finite result");
}

/// Element-wise a*u + b*v.
inline ParamVector lin_comb(double a, const ParamVector& u, double b, const ParamVector& v) {
  require_same_dim(u, v, "lin_comb");
  ParamVector out(u.dim());
  const double* pu = u.data();
  const double* pv = v.data();
  double* po = out.data();
  for (std::size_t i = 0; i < u.dim(); ++i) po[i] = a * pu[i] + b * pv[i];
  require_finite(out, "lin_comb");
  return out;
}

inline ParamVector scaled(double a, const ParamVector& u) {
  ParamVector out(u.dim());
  for (std::size_t i = 0; i < u.dim(); ++i) out[i] = a * u[i];
  require_finite(out, "scaled");
  return out;
}

inline ParamVector operator+(const ParamVector& u, const ParamVector& v) {
  require_same_dim(u, v, "operator+");
  ParamVector out(u.dim());
  for (std::size_t i = 0; i < u.dim(); ++i) out[i] = u[i] + v[i];
  require_finite(out, "operator+");
  return out;
}

inline ParamVector operator-(const ParamVector& u, const ParamVector& v) {
  require_same_dim(u, v, "operator-");
  ParamVector out(u.dim());
  for (std::size_t i = 0; i < u.dim(); ++i) out[i] = u[i] - v[i];
  require_finite(out, "operator-");
  return out;
}

inline double dot(const ParamVector& u, const ParamVector& v) {
  require_same_dim(u, v, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < u.dim(); ++i) s += u[i] * v[i];
  return s;
}

/// Euclidean norm.
inline double norm2(const ParamVector& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double norm_inf(const ParamVector& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// ---------------------------------------------------------------------------
// Randomness

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Purpose tags used as the first stream-path component so that streams for
/// different consumers never collide.
enum class Purpose : std::uint64_t {
  kInit = 1,
  kDataset = 2,
  kPartition = 3,
  kClientSample = 4,
  kBatch = 5,
  kTrainLoss = 6,
  kTest = 7,
};

/// A random stream addressed by (root_seed, path).
///
/// The stream key is a SplitMix64 hash chain over the seed and path, so any
/// stream can be derived independently of every other without shared state.
/// `engine()` always starts from the beginning of the stream.
class RngStream {
 public:
  explicit RngStream(std::uint64_t root_seed, std::vector<std::uint64_t> path = {})
      : root_seed_(root_seed), path_(std::move(path)) {}

  RngStream child(std::uint64_t component) const {
    auto p = path_;
    p.push_back(component);
    return RngStream(root_seed_, std::move(p));
  }

  RngStream child(Purpose purpose) const { return child(static_cast<std::uint64_t>(purpose)); }

  std::uint64_t root_seed() const noexcept { return root_seed_; }
  const std::vector<std::uint64_t>& path() const noexcept { return path_; }

  std::uint64_t key() const noexcept {
    std::uint64_t h = detail::splitmix64(root_seed_);
    for (std::uint64_t c : path_) h = detail::splitmix64(h ^ detail::splitmix64(c + 0x632be59bd9b4e019ULL));
    return h;
  }

  std::mt19937_64 engine() const { return std::mt19937_64(key()); }

 private:
  std::uint64_t root_seed_;
  std::vector<std::uint64_t> path_;
};

// ---------------------------------------------------------------------------
// Finite differences

inline constexpr double kDefaultFdStep = 1e-5;

/// Central-difference gradient of `loss` at `params`.
template <typename LossFn>
ParamVector fd_gradient(const LossFn& loss, const ParamVector& params, double h = kDefaultFdStep) {
  if (!(h > 0.0)) throw PreconditionError("fd_gradient: step must be positive");
  ParamVector probe = params;
  ParamVector out(params.dim());
  for (std::size_t i = 0; i < params.dim(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = loss(probe);
    probe[i] = orig - h;
    const double down = loss(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("fd_gradient: non-finite loss at coordinate " + std::to_string(i));
    }
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

/// ||a - b|| / max(1, ||b||).
inline double relative_error(const ParamVector& a, const ParamVector& b) {
  require_same_dim(a, b, "relative_error");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s) / std::max(1.0, norm2(b));
}

}  // namespace fednar
