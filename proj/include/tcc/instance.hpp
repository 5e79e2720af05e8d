#pragma once

// Instance-level contrast with relaxed cluster assignments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "tcc/autodiff.hpp"
#include "tcc/encoder.hpp"
#include "tcc/queue.hpp"
#include "tcc/rng.hpp"

namespace tcc {

/// Uniform draws are clamped to this distance from {0, 1} before -log(-log u).
inline constexpr double kGumbelClamp = 1e-12;

struct GumbelSample {
  std::vector<double> c;
  double lambda = 1.0;
};

/// Memory bank of past momentum instance embeddings.
using InstanceQueue = VectorQueue;

inline void push_instances(InstanceQueue& queue, const DenseArray& embeddings) {
  queue.push_rows(embeddings);
}

inline double standard_gumbel(CounterRng& rng) {
  const double u = std::clamp(rng.uniform(), kGumbelClamp, 1.0 - kGumbelClamp);
  return -std::log(-std::log(u));
}

/// (rows x K) array of independent Gumbel(0, 1) draws.
inline DenseArray gumbel_noise(std::size_t rows, std::size_t clusters, CounterRng& rng) {
  DenseArray eps(rows, clusters);
  for (double& v : eps.data()) v = standard_gumbel(rng);
  return eps;
}

/// c = softmax((log pi + eps) / lambda), row-wise and differentiable in log_pi.
inline Var gumbel_softmax(Var log_pi, const DenseArray& noise, double lambda) {
  if (!(lambda > 0.0)) throw InvalidTemperature("gumbel_softmax: lambda must be positive");
  Tape& t = *log_pi.tape();
  return softmax_rows(scale(log_pi + t.constant(noise), 1.0 / lambda));
}

inline GumbelSample gumbel_sample(const AssignmentDistribution& pi, double lambda,
                                  CounterRng& rng) {
  if (!(lambda > 0.0)) throw InvalidTemperature("gumbel_sample: lambda must be positive");
  const std::size_t K = pi.size();
  std::vector<double> z(K);
  for (std::size_t k = 0; k < K; ++k) {
    if (!(pi[k] > 0.0)) throw NonFiniteInput("gumbel_sample: pi must be strictly positive");
    z[k] = (std::log(pi[k]) + standard_gumbel(rng)) / lambda;
  }
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) s += (v = std::exp(v - mx));
  for (double& v : z) v /= s;
  return {std::move(z), lambda};
}

inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

/// KL(pi || uniform) = log K - H(pi).
inline double kl_to_uniform(const AssignmentDistribution& pi) {
  return std::log(static_cast<double>(pi.size())) - entropy(pi.probs);
}

/// Tape version over rows of probabilities (B x K) -> (B x 1).
inline Var kl_to_uniform(Var pi) {
  const double log_k = std::log(static_cast<double>(pi.cols()));
  Tape& t = *pi.tape();
  return row_dot(pi, log(pi)) + t.constant(DenseArray(pi.rows(), 1, log_k));
}

/// Row entropies computed from logits, -sum softmax * log_softmax: (B x K) -> (B x 1).
inline Var entropy_from_logits(Var logits) {
  return scale(row_dot(softmax_rows(logits), log_softmax_rows(logits)), -1.0);
}

/// Per-row -log p(i|x,c) against a constant positive and the queue's negatives:
///   -log exp(e^.e/tau) / (exp(e^.e/tau) + sum_j exp(q_j.e/tau)).
/// `e` is (B x d) on the tape; `e_hat` is a constant (B x d). Returns (B x 1).
inline Var instance_nll(Var e, const DenseArray& e_hat, const InstanceQueue& queue, double tau) {
  if (!(tau > 0.0)) throw InvalidTemperature("instance_nll: tau must be positive");
  if (!e_hat.same_shape(e.value())) throw ShapeMismatch("instance_nll: e_hat shape");
  Tape& t = *e.tape();
  Var pos = scale(row_dot(e, t.constant(e_hat)), 1.0 / tau);
  if (queue.empty()) return log_sum_exp_rows(pos) - pos;
  if (queue.dim() != e.cols()) throw ShapeMismatch("instance_nll: queue dimension");
  Var neg = scale(matmul_nt(e, t.constant(queue.contents())), 1.0 / tau);
  return log_sum_exp_rows(concat_cols(pos, neg)) - pos;
}

/// Components of the instance-level loss
///   L2 = mean_i[ nll_i - H(q(.|x_i)) - log K ],
/// where the nll is averaged over Gumbel samples. Since KL(q||uniform) = log K - H,
/// L2 = mean_nll + mean_kl - 2 log K; the constant has zero gradient.
struct InstanceLossTerms {
  Var loss;
  Var mean_nll;
  Var mean_entropy;
  Var mean_kl;
};

/// Builds L2 from online logits and features. `online_noise[g]` and
/// `momentum_embeddings[g]` are the g-th Gumbel draw and its momentum target.
inline InstanceLossTerms instance_loss(const EncoderGraph& graph, Var features, Var logits,
                                       std::span<const DenseArray> online_noise,
                                       std::span<const DenseArray> momentum_embeddings,
                                       const InstanceQueue& queue, double tau, double lambda) {
  if (features.rows() == 0) throw ShapeMismatch("instance_loss: empty batch");
  if (online_noise.empty() || online_noise.size() != momentum_embeddings.size()) {
    throw CountMismatch("instance_loss: need one momentum target per Gumbel sample");
  }
  const double log_k = std::log(static_cast<double>(logits.cols()));
  Var log_pi = log_softmax_rows(logits);
  Var nll_sum;
  for (std::size_t g = 0; g < online_noise.size(); ++g) {
    Var c = gumbel_softmax(log_pi, online_noise[g], lambda);
    Var e = instance_embed(graph, features, c);
    Var nll = mean_all(instance_nll(e, momentum_embeddings[g], queue, tau));
    nll_sum = nll_sum.valid() ? nll_sum + nll : nll;
  }
  InstanceLossTerms terms;
  terms.mean_nll = scale(nll_sum, 1.0 / static_cast<double>(online_noise.size()));
  terms.mean_entropy = mean_all(entropy_from_logits(logits));
  Tape& t = *logits.tape();
  terms.mean_kl = t.constant(DenseArray::scalar(log_k)) - terms.mean_entropy;
  terms.loss = terms.mean_nll - terms.mean_entropy - t.constant(DenseArray::scalar(log_k));
  return terms;
}

/// Exact marginal log-likelihood and its Jensen lower bound for one datum:
///   lhs = log sum_k q(k) a(k) p(k)/q(k) = log sum_k a(k) p(k)
///   rhs = sum_k q(k) log a(k) - KL(q || p)
/// with p uniform. lhs >= rhs always.
struct ElboGap {
  double lhs = 0.0;
  double rhs = 0.0;
  double gap() const noexcept { return lhs - rhs; }
};

inline ElboGap elbo_gap_check(const AssignmentDistribution& q, std::span<const double> likelihoods) {
  const std::size_t K = q.size();
  if (likelihoods.size() != K) throw LengthMismatch("elbo_gap_check: likelihood count");
  for (double a : likelihoods)
    if (!(a > 0.0) || !std::isfinite(a)) throw NonPositiveLikelihood("elbo_gap_check: a(k) <= 0");
  const double prior = 1.0 / static_cast<double>(K);
  double mx = -std::numeric_limits<double>::infinity();
  for (double a : likelihoods) mx = std::max(mx, std::log(a));
  double s = 0.0;
  for (double a : likelihoods) s += std::exp(std::log(a) - mx) * prior;
  ElboGap out;
  out.lhs = mx + std::log(s);
  double expected_log = 0.0;
  double kl = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (q[k] <= 0.0) continue;
    expected_log += q[k] * std::log(likelihoods[k]);
    kl += q[k] * (std::log(q[k]) - std::log(prior));
  }
  out.rhs = expected_log - kl;
  return out;
}

}  // namespace tcc
