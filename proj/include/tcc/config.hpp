#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tcc/data.hpp"
#include "tcc/encoder.hpp"
#include "tcc/error.hpp"

namespace tcc {

enum class TrainMode { kJoint, kAlternating };

/// Every training hyperparameter. Queue sizes and batch size left unset are
/// derived from K and the dataset size by resolve().
struct TrainConfig {
  std::size_t clusters = 2;
  double alpha = 0.5;
  double tau = 1.0;
  double lambda = 0.8;
  std::optional<std::size_t> cluster_queue_size;   ///< L; default 100K capped at 10N/K
  std::optional<std::size_t> instance_queue_size;  ///< J; default min(12800, N/2)
  std::optional<std::size_t> batch_size;           ///< default 32K capped at N
  double learning_rate = 3e-3;
  double momentum = 0.999;
  std::size_t max_epochs = 300;
  std::uint64_t seed = 0;
  std::size_t gumbel_samples = 1;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t feature_dim = 16;
  bool normalize_prototypes = false;

  // Element augmentation (vector mode noise is relative to the mean feature std).
  std::string augment_mode = "vector";
  double augment_noise = 0.05;
  double augment_scale = 0.1;
  double augment_dropout = 0.1;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  double image_crop_min = 0.8;
  bool image_flip = true;
  double image_jitter = 0.1;

  // Ablation switches.
  bool use_cluster_queue = true;       ///< false: in-batch K-1 negatives for L1
  bool cluster_augment = true;         ///< false: L1 aggregates un-augmented inputs
  bool hard_assign_aggregate = false;  ///< true: L1 aggregates with one-hot assignments
  TrainMode mode = TrainMode::kJoint;

  // Optimizer and stopping.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool stop_on_convergence = true;
  std::size_t convergence_window = 20;
  double convergence_tolerance = 1e-4;

  void validate() const {
    if (clusters < 2) throw ConfigError("k must be >= 2");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("momentum must lie in [0, 1]");
    if (gumbel_samples < 1) throw ConfigError("gumbel_samples must be >= 1");
    if (feature_dim < 2) throw ConfigError("feature_dim must be >= 2");
    if (cluster_queue_size && *cluster_queue_size % clusters != 0)
      throw ConfigError("cluster_queue_size must be a multiple of k");
    if (batch_size && *batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (augment_mode != "vector" && augment_mode != "image")
      throw ConfigError("augment_mode must be 'vector' or 'image'");
    if (convergence_window < 1) throw ConfigError("convergence_window must be >= 1");
  }

  EncoderConfig encoder_config(std::size_t input_dim) const {
    EncoderConfig e;
    e.input_dim = input_dim;
    e.hidden = hidden;
    e.feature_dim = feature_dim;
    e.clusters = clusters;
    e.normalize_prototypes = normalize_prototypes;
    return e;
  }
};

/// Sizes fixed for a particular dataset.
struct ResolvedSizes {
  std::size_t cluster_queue = 0;
  std::size_t instance_queue = 0;
  std::size_t batch = 0;
};

inline ResolvedSizes resolve_sizes(const TrainConfig& c, std::size_t n) {
  ResolvedSizes r;
  const std::size_t K = c.clusters;
  r.batch = c.batch_size.value_or(std::min<std::size_t>(32 * K, n));
  if (r.batch < 2) throw ConfigError("batch size must be >= 2");
  if (r.batch > n) throw DataError("dataset has fewer points than one batch");
  if (!c.use_cluster_queue) {
    r.cluster_queue = 0;
  } else if (c.cluster_queue_size) {
    r.cluster_queue = *c.cluster_queue_size;
  } else {
    const std::size_t cap = (10 * n / K) / K * K;
    r.cluster_queue = std::min<std::size_t>(100 * K, cap);
  }
  r.instance_queue = c.instance_queue_size.value_or(std::min<std::size_t>(12800, n / 2));
  return r;
}

/// Augmentation policy with relative noise resolved against the dataset.
inline AugmentPolicy make_policy(const TrainConfig& c, const Dataset& ds) {
  AugmentPolicy p;
  if (c.augment_mode == "image") {
    p.mode = AugmentPolicy::Mode::kImage;
    p.height = c.image_height;
    p.width = c.image_width;
    p.crop_min = c.image_crop_min;
    p.flip = c.image_flip;
    p.jitter = c.image_jitter;
  } else {
    p.noise_sigma = c.augment_noise * ds.mean_feature_std();
    p.scale_range = c.augment_scale;
    p.dropout = c.augment_dropout;
  }
  p.validate(ds.dim());
  return p;
}

// ---------------------------------------------------------------------------
// Flat "key = value" text form.

namespace detail {

inline std::string trim(std::string s) {
  auto ws = [](unsigned char ch) { return std::isspace(ch) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used == v.size() && d >= 0) return static_cast<std::size_t>(d);
  } catch (const std::exception&) {
  }
  throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

inline std::string real_text(double v) { return format_double(v); }

struct ConfigField {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

inline std::optional<std::size_t> parse_auto(const std::string& key, const std::string& v) {
  if (v == "auto") return std::nullopt;
  return parse_count(key, v);
}

inline std::string auto_text(const std::optional<std::size_t>& v) {
  return v ? std::to_string(*v) : std::string("auto");
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
#define TCC_REAL(name)                                                                     \
  f.push_back({#name, [](TrainConfig& c, const std::string& v) { c.name = parse_real(#name, v); }, \
               [](const TrainConfig& c) { return real_text(c.name); }})
#define TCC_COUNT(name)                                                                     \
  f.push_back({#name, [](TrainConfig& c, const std::string& v) { c.name = parse_count(#name, v); }, \
               [](const TrainConfig& c) { return std::to_string(c.name); }})
#define TCC_BOOL(name)                                                                     \
  f.push_back({#name, [](TrainConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }, \
               [](const TrainConfig& c) { return std::string(c.name ? "true" : "false"); }})
#define TCC_AUTO(name)                                                                     \
  f.push_back({#name, [](TrainConfig& c, const std::string& v) { c.name = parse_auto(#name, v); }, \
               [](const TrainConfig& c) { return auto_text(c.name); }})
    TCC_COUNT(clusters);
    TCC_REAL(alpha);
    TCC_REAL(tau);
    TCC_REAL(lambda);
    TCC_AUTO(cluster_queue_size);
    TCC_AUTO(instance_queue_size);
    TCC_AUTO(batch_size);
    TCC_REAL(learning_rate);
    TCC_REAL(momentum);
    TCC_COUNT(max_epochs);
    TCC_COUNT(seed);
    TCC_COUNT(gumbel_samples);
    f.push_back({"hidden",
                 [](TrainConfig& c, const std::string& v) {
                   c.hidden.clear();
                   std::istringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) {
                     item = trim(item);
                     if (!item.empty()) c.hidden.push_back(parse_count("hidden", item));
                   }
                 },
                 [](const TrainConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.hidden.size(); ++i)
                     s += (i ? "," : "") + std::to_string(c.hidden[i]);
                   return s;
                 }});
    TCC_COUNT(feature_dim);
    TCC_BOOL(normalize_prototypes);
    f.push_back({"augment_mode",
                 [](TrainConfig& c, const std::string& v) { c.augment_mode = v; },
                 [](const TrainConfig& c) { return c.augment_mode; }});
    TCC_REAL(augment_noise);
    TCC_REAL(augment_scale);
    TCC_REAL(augment_dropout);
    TCC_COUNT(image_height);
    TCC_COUNT(image_width);
    TCC_REAL(image_crop_min);
    TCC_BOOL(image_flip);
    TCC_REAL(image_jitter);
    TCC_BOOL(use_cluster_queue);
    TCC_BOOL(cluster_augment);
    TCC_BOOL(hard_assign_aggregate);
    f.push_back({"mode",
                 [](TrainConfig& c, const std::string& v) {
                   if (v == "joint") c.mode = TrainMode::kJoint;
                   else if (v == "alternating") c.mode = TrainMode::kAlternating;
                   else throw ConfigError("config: mode must be 'joint' or 'alternating'");
                 },
                 [](const TrainConfig& c) {
                   return std::string(c.mode == TrainMode::kJoint ? "joint" : "alternating");
                 }});
    TCC_REAL(adam_beta1);
    TCC_REAL(adam_beta2);
    TCC_REAL(adam_eps);
    TCC_BOOL(stop_on_convergence);
    TCC_COUNT(convergence_window);
    TCC_REAL(convergence_tolerance);
#undef TCC_REAL
#undef TCC_COUNT
#undef TCC_BOOL
#undef TCC_AUTO
    return f;
  }();
  return fields;
}

}  // namespace detail

inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields()) {
    if (key == f.key) {
      f.set(c, detail::trim(value));
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

inline std::string get_config_value(const TrainConfig& c, const std::string& key) {
  for (const auto& f : detail::config_fields())
    if (key == f.key) return f.get(c);
  throw ConfigError("config: unknown key '" + key + "'");
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::config_fields()) keys.emplace_back(f.key);
  return keys;
}

/// Parses `key = value` lines; '#' starts a comment. Later keys win.
inline TrainConfig parse_config(std::istream& in, TrainConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    set_config_value(base, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

inline TrainConfig parse_config_text(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  return parse_config(in, std::move(base));
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config(in, std::move(base));
}

/// Every field, one `key = value` per line, in a fixed order.
inline std::string config_to_text(const TrainConfig& c) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += std::string(f.key) + " = " + f.get(c) + "\n";
  return out;
}

}  // namespace tcc
