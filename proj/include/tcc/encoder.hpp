#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tcc/autodiff.hpp"
#include "tcc/rng.hpp"

namespace tcc {

struct EncoderConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t feature_dim = 16;
  std::size_t clusters = 2;
  /// Re-normalize prototype rows inside every forward pass (off: normalized once at init).
  bool normalize_prototypes = false;

  void validate() const {
    if (clusters < 2) throw ConfigError("encoder: need at least 2 clusters");
    if (feature_dim < 2) throw ConfigError("encoder: feature_dim must be >= 2");
    if (input_dim < 1) throw ConfigError("encoder: input_dim must be >= 1");
    for (std::size_t h : hidden)
      if (h == 0) throw ConfigError("encoder: hidden widths must be positive");
  }
};

/// Categorical assignment q(k|x) for one datum; lies on the open simplex.
struct AssignmentDistribution {
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t k) const { return probs[k]; }

  /// First index of the maximum probability.
  std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k)
      if (probs[k] > probs[best]) best = k;
    return best;
  }
};

namespace param_names {
inline std::string layer_weight(std::size_t i) { return "f.layer" + std::to_string(i) + ".weight"; }
inline std::string layer_bias(std::size_t i) { return "f.layer" + std::to_string(i) + ".bias"; }
inline constexpr const char* kPrototypes = "prototypes";
inline constexpr const char* kHeadWeight = "head.weight";
inline constexpr const char* kHeadBias = "head.bias";
}  // namespace param_names

/// Feature MLP f, prototypes mu (K x d_m) and the instance head NN: K -> d_m.
///
/// Layer weights are stored (in x out) so a batch X (B x in) maps to X W + b.
class Encoder {
 public:
  Encoder() = default;

  /// Glorot-uniform weights, zero biases, unit-norm Gaussian prototypes.
  static Encoder initialize(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    Encoder enc;
    enc.config_ = config;
    CounterRng rng = make_stream(seed, Stream::kInit);
    auto glorot = [&](std::size_t fan_in, std::size_t fan_out) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      DenseArray w(fan_in, fan_out);
      for (double& v : w.data()) v = rng.uniform(-limit, limit);
      return w;
    };
    std::size_t in = config.input_dim;
    std::vector<std::size_t> widths = config.hidden;
    widths.push_back(config.feature_dim);
    for (std::size_t i = 0; i < widths.size(); ++i) {
      enc.params_.add(param_names::layer_weight(i), glorot(in, widths[i]));
      enc.params_.add(param_names::layer_bias(i), DenseArray(1, widths[i]));
      in = widths[i];
    }
    DenseArray protos(config.clusters, config.feature_dim);
    for (std::size_t k = 0; k < config.clusters; ++k) {
      auto row = protos.row(k);
      for (double& v : row) v = rng.normal();
      const double n = l2_norm(row);
      for (double& v : row) v /= n;
    }
    enc.params_.add(param_names::kPrototypes, std::move(protos));
    enc.params_.add(param_names::kHeadWeight, glorot(config.clusters, config.feature_dim));
    enc.params_.add(param_names::kHeadBias, DenseArray(1, config.feature_dim));
    return enc;
  }

  /// Rebuilds an encoder around an existing store (checkpoint loading).
  static Encoder from_store(const EncoderConfig& config, ParameterStore store) {
    config.validate();
    Encoder enc;
    enc.config_ = config;
    enc.params_ = std::move(store);
    enc.check_shapes();
    return enc;
  }

  const EncoderConfig& config() const noexcept { return config_; }
  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }
  std::size_t num_layers() const noexcept { return config_.hidden.size() + 1; }

  void check_shapes() const {
    std::size_t in = config_.input_dim;
    std::vector<std::size_t> widths = config_.hidden;
    widths.push_back(config_.feature_dim);
    auto expect = [&](const std::string& name, std::size_t r, std::size_t c) {
      const DenseArray& v = params_.at(name).value;
      if (v.rows() != r || v.cols() != c) {
        throw ShapeMismatch("encoder parameter " + name + " has shape " + v.shape_string());
      }
    };
    for (std::size_t i = 0; i < widths.size(); ++i) {
      expect(param_names::layer_weight(i), in, widths[i]);
      expect(param_names::layer_bias(i), 1, widths[i]);
      in = widths[i];
    }
    expect(param_names::kPrototypes, config_.clusters, config_.feature_dim);
    expect(param_names::kHeadWeight, config_.clusters, config_.feature_dim);
    expect(param_names::kHeadBias, 1, config_.feature_dim);
    if (params_.size() != 2 * widths.size() + 3) throw ShapeMismatch("encoder: unexpected parameters");
  }

 private:
  EncoderConfig config_;
  ParameterStore params_;
};

/// An encoder's parameters placed on a tape, either trainable or frozen.
struct EncoderGraph {
  std::vector<Var> weights;
  std::vector<Var> biases;
  Var prototypes;
  Var head_weight;
  Var head_bias;
};

inline EncoderGraph bind_trainable(Tape& tape, Encoder& enc) {
  EncoderGraph g;
  ParameterStore& s = enc.params();
  for (std::size_t i = 0; i < enc.num_layers(); ++i) {
    g.weights.push_back(tape.parameter(s, param_names::layer_weight(i)));
    g.biases.push_back(tape.parameter(s, param_names::layer_bias(i)));
  }
  g.prototypes = tape.parameter(s, param_names::kPrototypes);
  if (enc.config().normalize_prototypes) g.prototypes = l2_normalize_rows(g.prototypes);
  g.head_weight = tape.parameter(s, param_names::kHeadWeight);
  g.head_bias = tape.parameter(s, param_names::kHeadBias);
  return g;
}

/// Binds values as constants: nothing computed from them can receive gradient.
inline EncoderGraph bind_frozen(Tape& tape, const Encoder& enc) {
  EncoderGraph g;
  const ParameterStore& s = enc.params();
  for (std::size_t i = 0; i < enc.num_layers(); ++i) {
    g.weights.push_back(tape.constant(s.at(param_names::layer_weight(i)).value));
    g.biases.push_back(tape.constant(s.at(param_names::layer_bias(i)).value));
  }
  g.prototypes = tape.constant(s.at(param_names::kPrototypes).value);
  if (enc.config().normalize_prototypes) g.prototypes = l2_normalize_rows(g.prototypes);
  g.head_weight = tape.constant(s.at(param_names::kHeadWeight).value);
  g.head_bias = tape.constant(s.at(param_names::kHeadBias).value);
  return g;
}

/// Features for a batch of inputs (B x d_x) -> (B x d_m). Not normalized.
inline Var encode(const EncoderGraph& g, Var x) {
  if (x.cols() != g.weights.front().rows()) {
    throw ShapeMismatch("encode: input has " + std::to_string(x.cols()) + " columns, expected " +
                        std::to_string(g.weights.front().rows()));
  }
  Var h = x;
  for (std::size_t i = 0; i < g.weights.size(); ++i) {
    h = add_bias(matmul(h, g.weights[i]), g.biases[i]);
    if (i + 1 < g.weights.size()) h = relu(h);
  }
  return h;
}

/// Logits mu_k^T f(x) for every row: (B x K).
inline Var assignment_logits(const EncoderGraph& g, Var features) {
  return matmul_nt(features, g.prototypes);
}

/// q(k|x) = softmax_k(mu_k^T f(x)), one row per datum.
inline Var assign(const EncoderGraph& g, Var features) {
  return softmax_rows(assignment_logits(g, features));
}

/// e = normalize(f(x) + NN(c)) for a batch of relaxed assignments c (B x K).
inline Var instance_embed(const EncoderGraph& g, Var features, Var c) {
  if (c.cols() != g.head_weight.rows()) throw ShapeMismatch("instance_embed: c has wrong width");
  return l2_normalize_rows(features + add_bias(matmul(c, g.head_weight), g.head_bias));
}

// Tape-free conveniences for evaluation.

inline DenseArray encode_batch(const Encoder& enc, const DenseArray& x) {
  Tape tape;
  EncoderGraph g = bind_frozen(tape, enc);
  return encode(g, tape.constant(x)).value();
}

inline DenseArray assign_batch(const Encoder& enc, const DenseArray& x) {
  Tape tape;
  EncoderGraph g = bind_frozen(tape, enc);
  return assign(g, encode(g, tape.constant(x))).value();
}

inline std::vector<double> encode(const Encoder& enc, std::span<const double> x) {
  if (x.size() != enc.config().input_dim) throw ShapeMismatch("encode: input dimension");
  DenseArray f = encode_batch(enc, DenseArray::row_vector(x));
  return {f.data().begin(), f.data().end()};
}

inline AssignmentDistribution assign(const Encoder& enc, std::span<const double> x) {
  if (x.size() != enc.config().input_dim) throw ShapeMismatch("assign: input dimension");
  DenseArray p = assign_batch(enc, DenseArray::row_vector(x));
  return {{p.data().begin(), p.data().end()}};
}

/// target <- m * target + (1 - m) * source, over every parameter.
inline void momentum_update(Encoder& target, const Encoder& source, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("momentum_update: m must lie in [0, 1]");
  ParameterStore& dst = target.params();
  const ParameterStore& src = source.params();
  if (dst.size() != src.size()) throw ShapeMismatch("momentum_update: parameter count differs");
  auto it = src.begin();
  for (auto& [name, p] : dst) {
    const auto& [sname, sp] = *it++;
    if (name != sname || !p.value.same_shape(sp.value)) {
      throw ShapeMismatch("momentum_update: parameter " + name + " does not match " + sname);
    }
    auto d = p.value.data();
    auto s = sp.value.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = m * d[i] + (1.0 - m) * s[i];
  }
}

}  // namespace tcc
