#pragma once

// Synthetic datasets, Dirichlet non-IID client partitioning, client sampling
// and minibatch draws.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fednar/errors.hpp"
#include "fednar/models.hpp"
#include "fednar/numkit.hpp"

namespace fednar {

enum class Split { kTrain, kTest };

struct Dataset {
  Batch samples;
  std::size_t classes = 0;
  Split split = Split::kTrain;

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t d_in() const noexcept { return samples.d_in; }
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<std::size_t> indices;  // ascending
  std::vector<double> p;             // sampled class distribution
};

struct Partition {
  std::vector<ClientShard> shards;
  double alpha = 0.0;
};

/// Copies the given rows of `dataset` into a new batch.
inline Batch gather(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  Batch b;
  b.d_in = dataset.d_in();
  b.features.reserve(indices.size() * b.d_in);
  b.labels.reserve(indices.size());
  for (std::size_t idx : indices) {
    auto r = dataset.samples.row(idx);
    b.features.insert(b.features.end(), r.begin(), r.end());
    if (!dataset.samples.labels.empty()) b.labels.push_back(dataset.samples.labels[idx]);
    if (!dataset.samples.targets.empty()) b.targets.push_back(dataset.samples.targets[idx]);
  }
  return b;
}

/// C isotropic Gaussian clusters with means on a sphere of radius `separation`.
///
/// TRAIN holds `per_class` points per cluster in class-major order. TEST holds
/// ceil(0.2 * C * per_class) points with labels assigned round-robin.
inline TrainTest make_blobs(std::size_t C, std::size_t per_class, std::size_t d_in,
                            double separation, double noise, const RngStream& rng) {
  if (C < 2) throw PreconditionError("make_blobs: need at least 2 classes");
  if (per_class < 1) throw PreconditionError("make_blobs: per_class must be >= 1");
  if (d_in < 1) throw PreconditionError("make_blobs: d_in must be >= 1");
  if (!(separation > 0.0) || !(noise > 0.0)) {
    throw PreconditionError("make_blobs: separation and noise must be positive");
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  auto mean_eng = rng.child(1).engine();
  std::vector<double> means(C * d_in);
  for (std::size_t c = 0; c < C; ++c) {
    double sq = 0.0;
    do {
      sq = 0.0;
      for (std::size_t k = 0; k < d_in; ++k) {
        means[c * d_in + k] = normal(mean_eng);
        sq += means[c * d_in + k] * means[c * d_in + k];
      }
    } while (sq == 0.0);
    const double scale = separation / std::sqrt(sq);
    for (std::size_t k = 0; k < d_in; ++k) means[c * d_in + k] *= scale;
  }

  auto draw = [&](std::mt19937_64& eng, std::size_t label, Batch& out) {
    for (std::size_t k = 0; k < d_in; ++k) out.features.push_back(means[label * d_in + k] + noise * normal(eng));
    out.labels.push_back(static_cast<int>(label));
  };

  TrainTest tt;
  tt.train.classes = tt.test.classes = C;
  tt.train.split = Split::kTrain;
  tt.test.split = Split::kTest;
  tt.train.samples.d_in = tt.test.samples.d_in = d_in;

  auto train_eng = rng.child(2).engine();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) draw(train_eng, c, tt.train.samples);
  }
  const auto n_test = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(C * per_class)));
  auto test_eng = rng.child(3).engine();
  for (std::size_t i = 0; i < n_test; ++i) draw(test_eng, i % C, tt.test.samples);
  return tt;
}

/// Dirichlet(alpha, ..., alpha) via normalized Gamma(alpha, 1) draws.
inline std::vector<double> sample_dirichlet(std::size_t C, double alpha, std::mt19937_64& eng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(C);
  double sum = 0.0;
  for (double& v : p) {
    v = gamma(eng);
    sum += v;
  }
  if (!(sum > 0.0)) {
    // Every draw underflowed (only possible for tiny alpha): fall back to a vertex.
    std::uniform_int_distribution<std::size_t> pick(0, C - 1);
    std::fill(p.begin(), p.end(), 0.0);
    p[pick(eng)] = 1.0;
    return p;
  }
  for (double& v : p) v /= sum;
  return p;
}

/// Total-variation distance from the uniform distribution.
inline double tv_to_uniform(const std::vector<double>& p) {
  const double u = 1.0 / static_cast<double>(p.size());
  double s = 0.0;
  for (double v : p) s += std::abs(v - u);
  return 0.5 * s;
}

/// Largest-remainder split of `total` proportional to `weights`; ties on the
/// fractional part go to the lower index.
inline std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size(), 0);
  std::vector<double> frac(weights.size(), 0.0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double q = wsum > 0.0 ? static_cast<double>(total) * weights[i] / wsum
                                : static_cast<double>(total) / static_cast<double>(weights.size());
    counts[i] = static_cast<std::size_t>(std::floor(q));
    frac[i] = q - std::floor(q);
    assigned += counts[i];
  }
  // Floating error can push the floor sum past total by one; trim from the smallest fractions.
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size()) {
    ++counts[order[k]];
    ++assigned;
  }
  for (std::size_t k = order.size(); assigned > total;) {
    k = (k == 0 ? order.size() : k) - 1;
    if (counts[order[k]] > 0) {
      --counts[order[k]];
      --assigned;
    }
  }
  return counts;
}

/// Throws unless the shards form a disjoint cover of [0, n) with valid simplex points.
inline void check_partition(const Partition& part, std::size_t n, std::size_t classes) {
  std::vector<char> seen(n, 0);
  std::size_t count = 0;
  for (const auto& s : part.shards) {
    if (s.indices.empty()) throw DiagnosticError("partition: empty shard " + std::to_string(s.client_id));
    for (std::size_t idx : s.indices) {
      if (idx >= n) throw DiagnosticError("partition: index out of range");
      if (seen[idx]) throw DiagnosticError("partition: index " + std::to_string(idx) + " assigned twice");
      seen[idx] = 1;
      ++count;
    }
    if (s.p.size() != classes) throw DiagnosticError("partition: p has wrong length");
    double sum = 0.0;
    for (double v : s.p) {
      if (v < 0.0) throw DiagnosticError("partition: negative class probability");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DiagnosticError("partition: p does not sum to 1");
  }
  if (count != n) throw DiagnosticError("partition: " + std::to_string(n - count) + " samples unassigned");
}

/// Splits each class's samples across M clients proportionally to the
/// clients' Dirichlet-sampled class weights.
inline Partition dirichlet_partition(const Dataset& dataset, std::size_t M, double alpha,
                                     const RngStream& rng) {
  if (M < 1) throw PreconditionError("dirichlet_partition: M must be >= 1");
  if (!(alpha > 0.0)) throw PreconditionError("dirichlet_partition: alpha must be positive");
  const std::size_t n = dataset.size();
  if (M > n) {
    throw PreconditionError("dirichlet_partition: M=" + std::to_string(M) + " exceeds TRAIN size " +
                            std::to_string(n));
  }
  const std::size_t C = dataset.classes;

  Partition part;
  part.alpha = alpha;
  part.shards.resize(M);
  auto p_eng = rng.child(1).engine();
  for (std::size_t i = 0; i < M; ++i) {
    part.shards[i].client_id = i;
    part.shards[i].p = sample_dirichlet(C, alpha, p_eng);
  }

  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t idx = 0; idx < n; ++idx) {
    by_class[static_cast<std::size_t>(dataset.samples.labels[idx])].push_back(idx);
  }
  auto shuffle_eng = rng.child(2).engine();
  std::vector<double> column(M);
  for (std::size_t c = 0; c < C; ++c) {
    auto& members = by_class[c];
    std::shuffle(members.begin(), members.end(), shuffle_eng);
    for (std::size_t i = 0; i < M; ++i) column[i] = part.shards[i].p[c];
    const auto counts = largest_remainder(members.size(), column);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t k = 0; k < counts[i]; ++k) part.shards[i].indices.push_back(members[pos++]);
    }
  }

  for (;;) {
    auto empty = std::find_if(part.shards.begin(), part.shards.end(),
                              [](const ClientShard& s) { return s.indices.empty(); });
    if (empty == part.shards.end()) break;
    auto largest = std::max_element(part.shards.begin(), part.shards.end(),
                                    [](const ClientShard& a, const ClientShard& b) {
                                      return a.indices.size() < b.indices.size();
                                    });
    empty->indices.push_back(largest->indices.back());
    largest->indices.pop_back();
  }
  for (auto& s : part.shards) std::sort(s.indices.begin(), s.indices.end());
  check_partition(part, n, C);
  return part;
}

/// `count` distinct client ids drawn uniformly from [0, M), ascending.
inline std::vector<std::size_t> sample_clients(std::size_t M, std::size_t count, std::size_t round,
                                               const RngStream& rng) {
  if (count < 1 || count > M) {
    throw PreconditionError("sample_clients: count=" + std::to_string(count) + " must lie in [1, M=" +
                            std::to_string(M) + "]");
  }
  std::vector<std::size_t> ids(M);
  std::iota(ids.begin(), ids.end(), 0);
  auto eng = rng.child(round).child(Purpose::kClientSample).engine();
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, M - 1);
    std::swap(ids[k], ids[pick(eng)]);
  }
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// min(batch_size, |shard|) rows drawn uniformly with replacement from the
/// shard, using stream `rng`/step.
inline Batch next_batch(const ClientShard& shard, const Dataset& dataset, std::size_t batch_size,
                        const RngStream& rng, std::size_t step) {
  if (batch_size < 1) throw PreconditionError("next_batch: batch_size must be >= 1");
  if (shard.indices.empty()) throw PreconditionError("next_batch: empty shard");
  const std::size_t b = std::min(batch_size, shard.indices.size());
  auto eng = rng.child(step).engine();
  std::uniform_int_distribution<std::size_t> pick(0, shard.indices.size() - 1);
  std::vector<std::size_t> rows(b);
  for (auto& r : rows) r = shard.indices[pick(eng)];
  return gather(dataset, rows);
}

// ---------------------------------------------------------------------------
// CSV: header f0,...,f{d-1},label

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  const auto last = s.find_last_not_of(ws);
  s.erase(last == std::string::npos ? 0 : last + 1);
  return s;
}

}  // namespace detail

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ":1: missing header");
  const auto header = detail::split_csv_line(detail::trim(line));
  if (header.size() < 2 || detail::trim(header.back()) != "label") {
    throw DataError(path + ":1: header must be f0,...,f{d-1},label");
  }
  const std::size_t d = header.size() - 1;
  for (std::size_t k = 0; k < d; ++k) {
    if (detail::trim(header[k]) != "f" + std::to_string(k)) {
      throw DataError(path + ":1: expected column f" + std::to_string(k) + ", got '" + header[k] + "'");
    }
  }

  Dataset ds;
  ds.samples.d_in = d;
  std::size_t line_no = 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    if (cells.size() != d + 1) {
      throw DataError(where + "expected " + std::to_string(d + 1) + " fields, got " + std::to_string(cells.size()));
    }
    for (std::size_t k = 0; k < d; ++k) {
      const std::string cell = detail::trim(cells[k]);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cell.size() || !std::isfinite(v)) {
        throw DataError(where + "bad feature value '" + cell + "'");
      }
      ds.samples.features.push_back(v);
    }
    const std::string lab = detail::trim(cells[d]);
    std::size_t used = 0;
    long y = -1;
    try {
      y = std::stol(lab, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != lab.size() || y < 0 || y > std::numeric_limits<int>::max()) {
      throw DataError(where + "bad label '" + lab + "'");
    }
    ds.samples.labels.push_back(static_cast<int>(y));
    max_label = std::max(max_label, static_cast<int>(y));
  }
  if (ds.samples.labels.empty()) throw DataError(path + ": no data rows");
  std::set<int> present(ds.samples.labels.begin(), ds.samples.labels.end());
  if (present.size() != static_cast<std::size_t>(max_label) + 1) {
    throw DataError(path + ": labels are not contiguous in [0, " + std::to_string(max_label) + "]");
  }
  ds.classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

/// Writes `dataset` in the format read by load_csv (17 significant digits, exact round-trip).
inline void write_csv(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("write_csv: cannot open " + path);
  const std::size_t d = dataset.d_in();
  for (std::size_t k = 0; k < d; ++k) out << 'f' << k << ',';
  out << "label\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (double v : dataset.samples.row(i)) out << v << ',';
    out << dataset.samples.labels[i] << '\n';
  }
  if (!out) throw DataError("write_csv: write failed for " + path);
}

}  // namespace fednar
