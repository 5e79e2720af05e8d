#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tcc/array.hpp"
#include "tcc/error.hpp"

namespace tcc {

/// Counts n(p, t) of points with predicted label p and true label t.
class ContingencyTable {
 public:
  ContingencyTable(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size()) {
      throw LengthMismatch("contingency: " + std::to_string(predicted.size()) +
                           " predictions vs " + std::to_string(truth.size()) + " labels");
    }
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      if (predicted[i] < 0 || truth[i] < 0) throw DataError("contingency: negative label");
      rows_ = std::max<std::size_t>(rows_, predicted[i] + 1);
      cols_ = std::max<std::size_t>(cols_, truth[i] + 1);
    }
    counts_.assign(rows_ * cols_, 0);
    for (std::size_t i = 0; i < predicted.size(); ++i) ++counts_[predicted[i] * cols_ + truth[i]];
    total_ = predicted.size();
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::uint64_t total() const noexcept { return total_; }
  std::uint64_t operator()(std::size_t p, std::size_t t) const { return counts_[p * cols_ + t]; }

  std::vector<std::uint64_t> row_sums() const {
    std::vector<std::uint64_t> s(rows_, 0);
    for (std::size_t p = 0; p < rows_; ++p)
      for (std::size_t t = 0; t < cols_; ++t) s[p] += (*this)(p, t);
    return s;
  }
  std::vector<std::uint64_t> col_sums() const {
    std::vector<std::uint64_t> s(cols_, 0);
    for (std::size_t p = 0; p < rows_; ++p)
      for (std::size_t t = 0; t < cols_; ++t) s[t] += (*this)(p, t);
    return s;
  }

  /// True when every non-empty row and column has exactly one nonzero cell,
  /// i.e. the partitions agree up to relabeling.
  bool is_bijective() const {
    for (std::size_t p = 0; p < rows_; ++p) {
      std::size_t nz = 0;
      for (std::size_t t = 0; t < cols_; ++t) nz += (*this)(p, t) != 0;
      if (nz > 1) return false;
    }
    for (std::size_t t = 0; t < cols_; ++t) {
      std::size_t nz = 0;
      for (std::size_t p = 0; p < rows_; ++p) nz += (*this)(p, t) != 0;
      if (nz > 1) return false;
    }
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::uint64_t total_ = 0;
  std::vector<std::uint64_t> counts_;
};

/// Minimum-cost perfect matching on a square cost matrix (row-major, n x n).
/// Returns assignment[row] = column. O(n^3) potentials/augmenting-path form.
inline std::vector<std::size_t> hungarian_min_cost(std::span<const double> cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);  // match[col] = row, 1-based
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n, 0);
  for (std::size_t j = 1; j <= n; ++j)
    if (match[j] != 0) assignment[match[j] - 1] = j - 1;
  return assignment;
}

/// Best label bijection predicted -> true, padded to a square table.
/// mapping[p] is the true label matched to predicted label p.
inline std::vector<std::size_t> best_label_mapping(const ContingencyTable& table) {
  const std::size_t n = std::max(table.rows(), table.cols());
  std::vector<double> cost(n * n, 0.0);
  for (std::size_t p = 0; p < table.rows(); ++p)
    for (std::size_t t = 0; t < table.cols(); ++t)
      cost[p * n + t] = -static_cast<double>(table(p, t));
  return hungarian_min_cost(cost, n);
}

/// Clustering accuracy under the optimal one-to-one relabeling.
inline double acc(std::span<const int> predicted, std::span<const int> truth) {
  ContingencyTable table(predicted, truth);
  if (table.total() == 0) return 0.0;
  const auto mapping = best_label_mapping(table);
  std::uint64_t matched = 0;
  for (std::size_t p = 0; p < table.rows(); ++p)
    if (mapping[p] < table.cols()) matched += table(p, mapping[p]);
  return static_cast<double>(matched) / static_cast<double>(table.total());
}

namespace detail {
inline double entropy_of_counts(const std::vector<std::uint64_t>& counts, double n) {
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}
}  // namespace detail

/// Mutual information normalized by the arithmetic mean of the two entropies.
/// Two constant partitions score 1; a constant versus a non-constant one scores 0.
inline double nmi(std::span<const int> predicted, std::span<const int> truth) {
  ContingencyTable table(predicted, truth);
  if (table.total() == 0) return 0.0;
  if (table.is_bijective()) return 1.0;
  const double n = static_cast<double>(table.total());
  const auto a = table.row_sums();
  const auto b = table.col_sums();
  const double ha = detail::entropy_of_counts(a, n);
  const double hb = detail::entropy_of_counts(b, n);
  if (ha + hb == 0.0) return 1.0;
  double mi = 0.0;
  for (std::size_t p = 0; p < table.rows(); ++p) {
    for (std::size_t t = 0; t < table.cols(); ++t) {
      const auto c = table(p, t);
      if (c == 0) continue;
      const double cd = static_cast<double>(c);
      mi += (cd / n) * std::log(cd * n / (static_cast<double>(a[p]) * static_cast<double>(b[t])));
    }
  }
  return std::clamp(mi / (0.5 * (ha + hb)), 0.0, 1.0);
}

/// Adjusted Rand index from pair counts.
inline double ari(std::span<const int> predicted, std::span<const int> truth) {
  ContingencyTable table(predicted, truth);
  auto pairs = [](std::uint64_t c) { return static_cast<double>(c * (c - (c > 0)) / 2); };
  double index = 0.0;
  for (std::size_t p = 0; p < table.rows(); ++p)
    for (std::size_t t = 0; t < table.cols(); ++t) index += pairs(table(p, t));
  double sum_a = 0.0, sum_b = 0.0;
  for (auto c : table.row_sums()) sum_a += pairs(c);
  for (auto c : table.col_sums()) sum_b += pairs(c);
  const double total = pairs(table.total());
  if (total == 0.0) return 1.0;
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both partitions trivial
  return (index - expected) / (max_index - expected);
}

/// DEC-style self-sharpening divergence, monitored only:
///   target_ik = (pi_ik^2 / f_k) / sum_k' (pi_ik'^2 / f_k'),  f_k = sum_i pi_ik
///   value = (1/N) sum_i KL(target_i || pi_i).
inline double dec_diagnostic(const DenseArray& assignments) {
  const std::size_t n = assignments.rows();
  const std::size_t K = assignments.cols();
  if (n == 0) throw ShapeMismatch("dec_diagnostic: empty batch");
  std::vector<double> freq(K, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < K; ++k) freq[k] += assignments(i, k);
  double total = 0.0;
  std::vector<double> target(K);
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double pik = assignments(i, k);
      target[k] = freq[k] > 0.0 ? pik * pik / freq[k] : 0.0;
      z += target[k];
    }
    for (std::size_t k = 0; k < K; ++k) {
      const double t = target[k] / z;
      if (t > 0.0) total += t * std::log(t / assignments(i, k));
    }
  }
  return total / static_cast<double>(n);
}

/// Assignment histogram over K clusters.
inline std::vector<std::size_t> label_histogram(std::span<const int> labels, std::size_t K) {
  std::vector<std::size_t> h(K, 0);
  for (int l : labels)
    if (l >= 0 && static_cast<std::size_t>(l) < K) ++h[l];
  return h;
}

/// Entropy (nats) of an empirical histogram.
inline double histogram_entropy(std::span<const std::size_t> counts) {
  double n = 0.0;
  for (auto c : counts) n += static_cast<double>(c);
  if (n == 0.0) return 0.0;
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace tcc
