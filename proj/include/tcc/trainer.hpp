#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tcc/cluster.hpp"
#include "tcc/config.hpp"
#include "tcc/data.hpp"
#include "tcc/encoder.hpp"
#include "tcc/instance.hpp"
#include "tcc/metrics.hpp"
#include "tcc/objective.hpp"
#include "tcc/rng.hpp"

namespace tcc {

/// Everything needed to continue training bit-exactly. Random streams are
/// addressed by (seed, purpose, epoch, step), so the counters are the RNG state.
struct TrainState {
  TrainConfig config;
  ResolvedSizes sizes;
  Encoder online;
  Encoder momentum;
  ClusterQueue cluster_queue;
  InstanceQueue instance_queue;
  std::uint64_t epoch = 0;  ///< completed epochs
  std::uint64_t step = 0;   ///< completed optimizer steps
  std::vector<double> epoch_losses;
  bool converged = false;
};

struct StepReport {
  double total = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double mean_nll = 0.0;
  double mean_kl = 0.0;
  double mean_entropy = 0.0;
  std::vector<std::size_t> histogram;  ///< argmax counts over the batch
  double dec = 0.0;                    ///< DEC diagnostic on the batch assignments
  double seconds = 0.0;
};

struct EpochReport {
  std::uint64_t epoch = 0;  ///< 1-based
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
  double dec = 0.0;  ///< on the full un-augmented dataset
  std::vector<std::size_t> histogram;
  std::optional<double> acc, nmi, ari;
  double seconds = 0.0;
};

inline ObjectiveOptions objective_options(const TrainConfig& c) {
  ObjectiveOptions o;
  o.alpha = c.alpha;
  o.tau = c.tau;
  o.lambda = c.lambda;
  o.use_cluster_queue = c.use_cluster_queue;
  o.hard_assign_aggregate = c.hard_assign_aggregate;
  return o;
}

inline TrainState make_initial_state(const TrainConfig& config, const Dataset& data) {
  config.validate();
  data.validate();
  TrainState s;
  s.config = config;
  s.sizes = resolve_sizes(config, data.size());
  s.online = Encoder::initialize(config.encoder_config(data.dim()), config.seed);
  s.momentum = s.online;
  s.cluster_queue = ClusterQueue(s.sizes.cluster_queue, config.clusters, config.feature_dim);
  s.instance_queue = InstanceQueue(s.sizes.instance_queue, config.feature_dim);
  return s;
}

/// Bias-corrected Adam update of every parameter from its accumulated gradient.
inline void adam_step(ParameterStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  ++store.step;
  const double t = static_cast<double>(store.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (auto& [name, p] : store) {
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = p.first_moment.data();
    auto v = p.second_moment.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

/// Draws views and Gumbel noise for a batch at the given global step.
inline StepDraws draw_step(const TrainConfig& c, const AugmentPolicy& policy,
                           const DenseArray& batch, std::uint64_t step) {
  StepDraws d;
  CounterRng aug_a = make_stream(c.seed, Stream::kAugmentOnline, 0, step);
  CounterRng aug_b = make_stream(c.seed, Stream::kAugmentMomentum, 0, step);
  d.online_view = augment_batch(batch, policy, aug_a);
  d.momentum_view = augment_batch(batch, policy, aug_b);
  if (!c.cluster_augment) d.cluster_input = batch;
  CounterRng g_a = make_stream(c.seed, Stream::kGumbelOnline, 0, step);
  CounterRng g_b = make_stream(c.seed, Stream::kGumbelMomentum, 0, step);
  for (std::size_t s = 0; s < c.gumbel_samples; ++s) {
    d.online_noise.push_back(gumbel_noise(batch.rows(), c.clusters, g_a));
    d.momentum_noise.push_back(gumbel_noise(batch.rows(), c.clusters, g_b));
  }
  return d;
}

namespace detail {

inline std::string column_mass(const DenseArray& pi) {
  std::string s;
  for (std::size_t k = 0; k < pi.cols(); ++k) {
    double m = 0.0;
    for (std::size_t i = 0; i < pi.rows(); ++i) m += pi(i, k);
    s += (k ? "," : "") + format_double(m);
  }
  return s;
}

}  // namespace detail

/// One optimizer step on `batch` with the loss weight `alpha` (the
/// configured alpha unless a training phase overrides it):
/// forward both branches, descend, enqueue r^ and e^, then move the momentum encoder.
inline StepReport train_step(TrainState& state, const DenseArray& batch, const AugmentPolicy& policy,
                             std::optional<double> alpha_override = std::nullopt,
                             bool enqueue_clusters = true) {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig& c = state.config;
  if (batch.rows() < 2) throw DataError("train_step: batch needs at least 2 points");
  ObjectiveOptions opt = objective_options(c);
  if (alpha_override) opt.alpha = *alpha_override;

  const StepDraws draws = draw_step(c, policy, batch, state.step);
  StepReport report;
  DenseArray pi;
  MomentumTargets targets;
  try {
    targets = momentum_targets(state.momentum, draws, opt);
    state.online.params().zero_grad();
    Tape tape;
    Objective obj = build_objective(tape, state.online, targets, state.cluster_queue,
                                    state.instance_queue, draws, opt);
    report.total = obj.total.item();
    report.l1 = obj.l1.item();
    report.l2 = obj.instance.loss.item();
    report.mean_nll = obj.instance.mean_nll.item();
    report.mean_kl = obj.instance.mean_kl.item();
    report.mean_entropy = obj.instance.mean_entropy.item();
    pi = obj.assignments.value();
    if (!std::isfinite(report.total)) {
      throw NonFiniteLoss("non-finite loss at step " + std::to_string(state.step));
    }
    tape.backward(obj.total);
  } catch (const DegenerateNorm& e) {
    DenseArray p = assign_batch(state.online, batch);
    throw DegenerateNorm(std::string(e.what()) + " [step " + std::to_string(state.step) +
                         ", batch " + std::to_string(batch.rows()) + ", assignment mass " +
                         detail::column_mass(p) + "]");
  }

  adam_step(state.online.params(), c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps);
  if (enqueue_clusters) state.cluster_queue.push_clusters(targets.reps);
  push_instances(state.instance_queue, targets.enqueue_embeddings);
  momentum_update(state.momentum, state.online, c.momentum);
  ++state.step;

  report.histogram.assign(c.clusters, 0);
  for (std::size_t i = 0; i < pi.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < pi.cols(); ++k)
      if (pi(i, k) > pi(i, best)) best = k;
    ++report.histogram[best];
  }
  report.dec = dec_diagnostic(pi);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Cluster-level step over the whole dataset (alternating mode): aggregate
/// every point, descend L1 once, then update the cluster queue and momentum.
inline double full_dataset_cluster_step(TrainState& state, const Dataset& data) {
  const TrainConfig& c = state.config;
  ObjectiveOptions opt = objective_options(c);
  Tape mt;
  EncoderGraph mg = bind_frozen(mt, state.momentum);
  Var mf = encode(mg, mt.constant(data.x));
  Var mpi = assign(mg, mf);
  Var mw = opt.hard_assign_aggregate ? mt.constant(hard_assignment_weights(mpi.value())) : mpi;
  DenseArray r_hat = aggregate_all(mf, mw).value();

  state.online.params().zero_grad();
  Tape tape;
  EncoderGraph g = bind_trainable(tape, state.online);
  Var f = encode(g, tape.constant(data.x));
  Var pi = assign(g, f);
  Var w = opt.hard_assign_aggregate ? tape.constant(hard_assignment_weights(pi.value())) : pi;
  Var reps = aggregate_all(f, w);
  Var l1 = opt.use_cluster_queue ? cluster_loss(reps, r_hat, state.cluster_queue, opt.tau)
                                 : cluster_loss_in_batch(reps, r_hat, opt.tau);
  const double value = l1.item();
  tape.backward(l1);
  adam_step(state.online.params(), c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps);
  state.cluster_queue.push_clusters(r_hat);
  momentum_update(state.momentum, state.online, c.momentum);
  ++state.step;
  return value;
}

/// argmax_k q(k|x) on un-augmented inputs; ties go to the smallest index.
inline std::vector<int> infer_batch(const Encoder& enc, const DenseArray& x) {
  const DenseArray pi = assign_batch(enc, x);
  std::vector<int> labels(pi.rows());
  for (std::size_t i = 0; i < pi.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < pi.cols(); ++k)
      if (pi(i, k) > pi(i, best)) best = k;
    labels[i] = static_cast<int>(best);
  }
  return labels;
}

inline int infer(const TrainState& state, std::span<const double> x) {
  return infer_batch(state.online, DenseArray::row_vector(x)).front();
}

/// Batch order for an epoch: a seeded Fisher-Yates permutation of 0..N-1.
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng = make_stream(seed, Stream::kShuffle, epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

/// Evaluation of the current online encoder on the full dataset.
inline void evaluate_into(EpochReport& report, const TrainState& state, const Dataset& data) {
  const DenseArray pi = assign_batch(state.online, data.x);
  std::vector<int> pred(pi.rows());
  for (std::size_t i = 0; i < pi.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < pi.cols(); ++k)
      if (pi(i, k) > pi(i, best)) best = k;
    pred[i] = static_cast<int>(best);
  }
  report.dec = dec_diagnostic(pi);
  report.histogram = label_histogram(pred, state.config.clusters);
  if (data.has_labels()) {
    report.acc = acc(pred, data.labels);
    report.nmi = nmi(pred, data.labels);
    report.ari = ari(pred, data.labels);
  }
}

/// True once the moving average of the last `window` epoch losses differs
/// from the previous window's by less than `tolerance` (relative).
inline bool has_converged(const std::vector<double>& losses, std::size_t window, double tolerance) {
  if (losses.size() < 2 * window) return false;
  const auto end = losses.end();
  const double now = std::accumulate(end - window, end, 0.0) / static_cast<double>(window);
  const double prev = std::accumulate(end - 2 * window, end - window, 0.0) / static_cast<double>(window);
  return std::abs(now - prev) <= tolerance * std::max(std::abs(prev), 1e-12);
}

/// Runs one epoch and returns its report.
inline EpochReport train_epoch(TrainState& state, const Dataset& data, const AugmentPolicy& policy) {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig& c = state.config;
  const std::size_t B = state.sizes.batch;
  const std::size_t batches = data.size() / B;
  const auto order = epoch_order(c.seed, state.epoch, data.size());
  const bool alternating = c.mode == TrainMode::kAlternating;

  EpochReport r;
  r.epoch = state.epoch + 1;
  for (std::size_t b = 0; b < batches; ++b) {
    const DenseArray batch = data.gather(std::span(order).subspan(b * B, B));
    // Alternating mode descends only L2 here and leaves the cluster bank to
    // the full-dataset step.
    StepReport s = train_step(state, batch, policy,
                              alternating ? std::optional<double>(0.0) : std::nullopt, !alternating);
    r.l1 += s.l1;
    r.l2 += s.l2;
    r.total += s.total;
    r.kl += s.mean_kl;
    r.entropy += s.mean_entropy;
  }
  const double nb = static_cast<double>(batches);
  r.l1 /= nb;
  r.l2 /= nb;
  r.total /= nb;
  r.kl /= nb;
  r.entropy /= nb;
  if (alternating) {
    r.l1 = full_dataset_cluster_step(state, data);
    r.total = c.alpha * r.l1 + (1.0 - c.alpha) * r.l2;
  }
  ++state.epoch;
  state.epoch_losses.push_back(r.total);
  if (c.stop_on_convergence &&
      has_converged(state.epoch_losses, c.convergence_window, c.convergence_tolerance)) {
    state.converged = true;
  }
  evaluate_into(r, state, data);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

using EpochCallback = std::function<void(const EpochReport&, const TrainState&)>;

/// Trains until max_epochs or convergence, starting from `state` as it is.
inline void continue_training(TrainState& state, const Dataset& data,
                              const EpochCallback& on_epoch = {},
                              std::optional<std::uint64_t> stop_after_epoch = std::nullopt) {
  const AugmentPolicy policy = make_policy(state.config, data);
  if (data.size() < state.sizes.batch) throw DataError("dataset smaller than one batch");
  const std::uint64_t last = std::min<std::uint64_t>(
      state.config.max_epochs, stop_after_epoch.value_or(state.config.max_epochs));
  while (state.epoch < last && !state.converged) {
    EpochReport r = train_epoch(state, data, policy);
    if (on_epoch) on_epoch(r, state);
  }
}

inline TrainState train(const TrainConfig& config, const Dataset& data,
                        const EpochCallback& on_epoch = {}) {
  TrainState state = make_initial_state(config, data);
  continue_training(state, data, on_epoch);
  return state;
}

}  // namespace tcc
