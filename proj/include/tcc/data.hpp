#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tcc/array.hpp"
#include "tcc/error.hpp"
#include "tcc/rng.hpp"

namespace tcc {

struct Dataset {
  std::string name;
  DenseArray x;              ///< N x d_x
  std::vector<int> labels;   ///< empty when unlabeled

  std::size_t size() const noexcept { return x.rows(); }
  std::size_t dim() const noexcept { return x.cols(); }
  bool has_labels() const noexcept { return !labels.empty(); }

  void validate() const {
    if (!x.all_finite()) throw DataError("dataset '" + name + "' has non-finite entries");
    if (!labels.empty() && labels.size() != x.rows()) {
      throw DataError("dataset '" + name + "': label count does not match rows");
    }
    for (int l : labels)
      if (l < 0) throw DataError("dataset '" + name + "': negative label");
  }

  std::size_t num_classes() const {
    int mx = -1;
    for (int l : labels) mx = std::max(mx, l);
    return static_cast<std::size_t>(mx + 1);
  }

  /// Rows selected by index, in the given order.
  DenseArray gather(std::span<const std::size_t> idx) const {
    DenseArray out(idx.size(), dim());
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy(x.row(idx[i]).begin(), x.row(idx[i]).end(), out.row(i).begin());
    return out;
  }

  /// Mean of per-feature standard deviations.
  double mean_feature_std() const {
    const std::size_t n = size(), d = dim();
    if (n < 2) return 0.0;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
      acc += std::sqrt(var / static_cast<double>(n - 1));
    }
    return acc / static_cast<double>(d);
  }
};

/// 64-bit FNV-1a over shape, values and labels.
inline std::uint64_t fingerprint(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::uint64_t shape[2] = {ds.size(), ds.dim()};
  mix(shape, sizeof shape);
  mix(ds.x.data().data(), ds.x.size() * sizeof(double));
  if (!ds.labels.empty()) mix(ds.labels.data(), ds.labels.size() * sizeof(int));
  return h;
}

// ---------------------------------------------------------------------------
// Generators. All are pure functions of their arguments.

/// Two interleaving half circles of unit radius: the upper arc centered at
/// (0, 0) and the lower arc centered at (1, 0.5). Points are evenly spaced in
/// angle; Gaussian noise of scale sigma is added to both coordinates.
inline Dataset two_moons(std::size_t n, double noise_sigma, std::uint64_t seed) {
  if (n == 0 || n % 2 != 0) throw DataError("two_moons: n must be positive and even");
  if (noise_sigma < 0.0) throw DataError("two_moons: sigma must be non-negative");
  const std::size_t half = n / 2;
  Dataset ds{"two_moons", DenseArray(n, 2), std::vector<int>(n)};
  CounterRng rng = make_stream(seed, Stream::kData);
  for (std::size_t i = 0; i < half; ++i) {
    const double t = half > 1 ? std::numbers::pi * static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
    ds.x(i, 0) = std::cos(t);
    ds.x(i, 1) = std::sin(t);
    ds.labels[i] = 0;
    ds.x(half + i, 0) = 1.0 - std::cos(t);
    ds.x(half + i, 1) = 0.5 - std::sin(t);
    ds.labels[half + i] = 1;
  }
  if (noise_sigma > 0.0)
    for (double& v : ds.x.data()) v += noise_sigma * rng.normal();
  return ds;
}

/// Isotropic Gaussian clusters. Centers are drawn uniformly in
/// [-spread, spread]^dim and resampled until every pair is at least
/// spread / 2 apart (best effort, 1000 attempts). Labels are balanced
/// (round-robin), so cluster sizes differ by at most one.
inline Dataset blobs(std::size_t n, std::size_t K, double spread, double sigma,
                     std::uint64_t seed, std::size_t dim = 2) {
  if (K < 2) throw DataError("blobs: need K >= 2");
  if (n < K) throw DataError("blobs: need n >= K");
  if (sigma < 0.0 || spread <= 0.0) throw DataError("blobs: bad spread/sigma");
  CounterRng rng = make_stream(seed, Stream::kData);
  DenseArray centers(K, dim);
  const double min_sep = spread / 2.0;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (double& v : centers.data()) v = rng.uniform(-spread, spread);
    bool ok = true;
    for (std::size_t a = 0; a < K && ok; ++a)
      for (std::size_t b = a + 1; b < K && ok; ++b) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) d2 += std::pow(centers(a, j) - centers(b, j), 2);
        ok = std::sqrt(d2) >= min_sep;
      }
    if (ok) break;
  }
  Dataset ds{"blobs", DenseArray(n, dim), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % K;
    ds.labels[i] = static_cast<int>(k);
    for (std::size_t j = 0; j < dim; ++j) ds.x(i, j) = centers(k, j) + sigma * rng.normal();
  }
  return ds;
}

/// Concentric rings centered at the origin, one label per radius, uniform
/// random angle, Gaussian noise of scale sigma on both coordinates.
inline Dataset rings(std::size_t n, const std::vector<double>& radii, double sigma,
                     std::uint64_t seed) {
  if (radii.size() < 2) throw DataError("rings: need at least two radii");
  if (n < radii.size()) throw DataError("rings: need n >= number of rings");
  if (sigma < 0.0) throw DataError("rings: sigma must be non-negative");
  CounterRng rng = make_stream(seed, Stream::kData);
  Dataset ds{"rings", DenseArray(n, 2), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % radii.size();
    const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
    ds.labels[i] = static_cast<int>(k);
    ds.x(i, 0) = radii[k] * std::cos(t) + sigma * rng.normal();
    ds.x(i, 1) = radii[k] * std::sin(t) + sigma * rng.normal();
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Element-level augmentation

struct AugmentPolicy {
  enum class Mode { kVector, kImage };
  Mode mode = Mode::kVector;
  // Vector mode.
  double noise_sigma = 0.0;   ///< absolute std of additive Gaussian noise
  double scale_range = 0.0;   ///< global scale factor drawn from [1 - s, 1 + s]
  double dropout = 0.0;       ///< per-coordinate zeroing probability
  // Image mode: rows are flattened height x width grayscale images.
  std::size_t height = 0;
  std::size_t width = 0;
  double crop_min = 1.0;      ///< crop side fraction drawn from [crop_min, 1]
  bool flip = false;          ///< horizontal flip with probability 1/2
  double jitter = 0.0;        ///< intensity x(1 +- j) + (+- j)

  static AugmentPolicy identity() { return {}; }

  bool is_identity() const noexcept {
    if (mode == Mode::kVector) return noise_sigma == 0.0 && scale_range == 0.0 && dropout == 0.0;
    return crop_min >= 1.0 && !flip && jitter == 0.0;
  }

  void validate(std::size_t dim) const {
    if (mode == Mode::kVector) {
      if (!(noise_sigma >= 0.0) || !(scale_range >= 0.0 && scale_range < 1.0) ||
          !(dropout >= 0.0 && dropout < 1.0)) {
        throw BadPolicy("augment: vector parameters out of range");
      }
    } else {
      if (height == 0 || width == 0 || height * width != dim)
        throw BadPolicy("augment: image size does not match input dimension");
      if (!(crop_min > 0.0 && crop_min <= 1.0) || !(jitter >= 0.0 && jitter < 1.0))
        throw BadPolicy("augment: image parameters out of range");
    }
  }
};

namespace detail {

inline void augment_image(std::span<const double> in, std::span<double> out,
                          const AugmentPolicy& p, CounterRng& rng) {
  const std::size_t H = p.height, W = p.width;
  const double frac = rng.uniform(p.crop_min, 1.0);
  const double ch = frac * static_cast<double>(H - 1);
  const double cw = frac * static_cast<double>(W - 1);
  const double y0 = rng.uniform(0.0, static_cast<double>(H - 1) - ch);
  const double x0 = rng.uniform(0.0, static_cast<double>(W - 1) - cw);
  const bool flip = p.flip && rng.uniform() < 0.5;
  const double gain = 1.0 + rng.uniform(-p.jitter, p.jitter);
  const double bias = rng.uniform(-p.jitter, p.jitter);
  auto at = [&](std::size_t r, std::size_t c) { return in[r * W + c]; };
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      const double ty = H > 1 ? static_cast<double>(r) / static_cast<double>(H - 1) : 0.0;
      const double tx = W > 1 ? static_cast<double>(flip ? W - 1 - c : c) / static_cast<double>(W - 1) : 0.0;
      const double sy = y0 + ty * ch;
      const double sx = x0 + tx * cw;
      const std::size_t r0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t c0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t r1 = std::min(r0 + 1, H - 1);
      const std::size_t c1 = std::min(c0 + 1, W - 1);
      const double fy = sy - static_cast<double>(r0);
      const double fx = sx - static_cast<double>(c0);
      const double v = (1 - fy) * ((1 - fx) * at(r0, c0) + fx * at(r0, c1)) +
                       fy * ((1 - fx) * at(r1, c0) + fx * at(r1, c1));
      out[r * W + c] = gain * v + bias;
    }
  }
}

}  // namespace detail

/// One random view of x. The identity policy returns x unchanged.
inline std::vector<double> augment(std::span<const double> x, const AugmentPolicy& policy,
                                   CounterRng& rng) {
  policy.validate(x.size());
  std::vector<double> out(x.begin(), x.end());
  if (policy.is_identity()) return out;
  if (policy.mode == AugmentPolicy::Mode::kImage) {
    detail::augment_image(x, out, policy, rng);
    return out;
  }
  const double s = 1.0 + rng.uniform(-policy.scale_range, policy.scale_range);
  for (double& v : out) {
    v *= s;
    if (policy.dropout > 0.0 && rng.uniform() < policy.dropout) v = 0.0;
    if (policy.noise_sigma > 0.0) v += policy.noise_sigma * rng.normal();
  }
  return out;
}

/// Augments every row of a batch with a single stream.
inline DenseArray augment_batch(const DenseArray& x, const AugmentPolicy& policy, CounterRng& rng) {
  if (policy.is_identity()) return x;
  DenseArray out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto v = augment(x.row(i), policy, rng);
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV: header "x0,...,x{d-1}[,label]", comma separated, LF line endings,
// values printed with 17 significant digits.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_csv: cannot open " + path);
  for (std::size_t j = 0; j < ds.dim(); ++j) out << (j ? "," : "") << 'x' << j;
  if (ds.has_labels()) out << ",label";
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j) out << (j ? "," : "") << format_double(ds.x(i, j));
    if (ds.has_labels()) out << ',' << ds.labels[i];
    out << '\n';
  }
  if (!out) throw DataError("save_csv: write failed for " + path);
}

namespace detail {
inline std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
}  // namespace detail

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("load_csv: empty file " + path, 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_commas(line);
  bool has_label = !header.empty() && header.back() == "label";
  const std::size_t d = header.size() - (has_label ? 1 : 0);
  if (d == 0) throw ParseError("load_csv: header has no feature columns", 1);
  for (std::size_t j = 0; j < d; ++j)
    if (header[j] != "x" + std::to_string(j)) throw ParseError("load_csv: bad header column '" + header[j] + "'", 1);
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size()) {
      throw ParseError("load_csv: expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(cells.size()), lineno);
    }
    for (std::size_t j = 0; j < d; ++j) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[j], &used);
      } catch (const std::exception&) {
        throw ParseError("load_csv: bad number '" + cells[j] + "'", lineno);
      }
      if (used != cells[j].size() || !std::isfinite(v)) {
        throw ParseError("load_csv: bad number '" + cells[j] + "'", lineno);
      }
      values.push_back(v);
    }
    if (has_label) {
      std::size_t used = 0;
      int l = -1;
      try {
        l = std::stoi(cells[d], &used);
      } catch (const std::exception&) {
        throw ParseError("load_csv: bad label '" + cells[d] + "'", lineno);
      }
      if (used != cells[d].size() || l < 0) throw ParseError("load_csv: bad label '" + cells[d] + "'", lineno);
      labels.push_back(l);
    }
  }
  const std::size_t n = values.size() / d;
  Dataset ds{path, DenseArray(n, d, std::move(values)), std::move(labels)};
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Named datasets: "two_moons", "blobs", "rings" or "csv:<path>".

struct DatasetOptions {
  std::optional<std::size_t> n;       ///< default 2000 (2048 for blobs)
  std::optional<double> noise;        ///< default 0.05 (0.5 for blobs)
  std::size_t clusters = 4;           ///< blobs centers / number of rings
  double spread = 10.0;               ///< blobs center range
  std::uint64_t seed = 0;
};

inline Dataset make_dataset(const std::string& spec, const DatasetOptions& o = {}) {
  if (spec.rfind("csv:", 0) == 0) return load_csv(spec.substr(4));
  if (spec == "two_moons") return two_moons(o.n.value_or(2000), o.noise.value_or(0.05), o.seed);
  if (spec == "blobs") return blobs(o.n.value_or(2048), o.clusters, o.spread, o.noise.value_or(0.5), o.seed);
  if (spec == "rings") {
    std::vector<double> radii;
    for (std::size_t k = 0; k < std::max<std::size_t>(o.clusters, 2); ++k) radii.push_back(1.0 + k);
    return rings(o.n.value_or(2000), radii, o.noise.value_or(0.05), o.seed);
  }
  throw DataError("unknown dataset '" + spec + "' (expected two_moons, blobs, rings or csv:<path>)");
}

}  // namespace tcc
