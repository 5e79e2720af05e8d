#pragma once

// The full twin-contrast objective for one batch, built on a tape.
//
// Every random quantity (augmented views, Gumbel noise) is drawn up front
// into StepDraws, so the objective is a deterministic function of the online
// parameters. Training and gradient checking share this code path.

#include <cstddef>
#include <optional>
#include <vector>

#include "tcc/autodiff.hpp"
#include "tcc/cluster.hpp"
#include "tcc/encoder.hpp"
#include "tcc/instance.hpp"

namespace tcc {

struct ObjectiveOptions {
  double alpha = 0.5;
  double tau = 1.0;
  double lambda = 0.8;
  bool use_cluster_queue = true;
  bool hard_assign_aggregate = false;
};

struct StepDraws {
  DenseArray online_view;    ///< B x d_x, consumed by the online encoder
  DenseArray momentum_view;  ///< B x d_x, consumed by the momentum encoder
  /// Un-augmented batch; when set, both branches aggregate clusters from it.
  std::optional<DenseArray> cluster_input;
  std::vector<DenseArray> online_noise;    ///< one B x K Gumbel draw per sample
  std::vector<DenseArray> momentum_noise;  ///< independent draws for the targets
};

/// Everything the momentum encoder contributes to a step. All constants.
struct MomentumTargets {
  DenseArray reps;                     ///< K x d_m cluster representations r^
  std::vector<DenseArray> embeddings;  ///< per Gumbel sample, B x d_m
  DenseArray enqueue_embeddings;       ///< B x d_m, normalized mean over samples
};

/// One-hot rows of argmax(pi); clusters that receive no datum keep their soft column.
inline DenseArray hard_assignment_weights(const DenseArray& pi) {
  DenseArray w(pi.rows(), pi.cols());
  std::vector<std::size_t> count(pi.cols(), 0);
  for (std::size_t i = 0; i < pi.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < pi.cols(); ++k)
      if (pi(i, k) > pi(i, best)) best = k;
    w(i, best) = 1.0;
    ++count[best];
  }
  for (std::size_t k = 0; k < pi.cols(); ++k)
    if (count[k] == 0)
      for (std::size_t i = 0; i < pi.rows(); ++i) w(i, k) = pi(i, k);
  return w;
}

inline MomentumTargets momentum_targets(const Encoder& momentum, const StepDraws& draws,
                                        const ObjectiveOptions& opt) {
  Tape tape;
  EncoderGraph g = bind_frozen(tape, momentum);
  Var features = encode(g, tape.constant(draws.momentum_view));
  Var logits = assignment_logits(g, features);
  Var pi = softmax_rows(logits);

  MomentumTargets out;
  Var cf = features, cpi = pi;
  if (draws.cluster_input) {
    cf = encode(g, tape.constant(*draws.cluster_input));
    cpi = assign(g, cf);
  }
  Var weights = opt.hard_assign_aggregate ? tape.constant(hard_assignment_weights(cpi.value())) : cpi;
  out.reps = aggregate_all(cf, weights).value();

  Var log_pi = log_softmax_rows(logits);
  DenseArray sum(features.rows(), features.cols());
  for (const DenseArray& noise : draws.momentum_noise) {
    Var c = gumbel_softmax(log_pi, noise, opt.lambda);
    DenseArray e = instance_embed(g, features, c).value();
    detail::add_into(sum, e);
    out.embeddings.push_back(std::move(e));
  }
  if (out.embeddings.size() == 1) {
    out.enqueue_embeddings = out.embeddings.front();
  } else {
    out.enqueue_embeddings = l2_normalize_rows(tape.constant(sum)).value();
  }
  return out;
}

/// alpha * L1 + (1 - alpha) * L2.
inline Var combined_loss(Var l1, Var l2, double alpha) {
  return scale(l1, alpha) + scale(l2, 1.0 - alpha);
}

struct Objective {
  Var total;
  Var l1;
  InstanceLossTerms instance;
  Var assignments;  ///< online pi for the batch, B x K
};

inline Objective build_objective(Tape& tape, Encoder& online, const MomentumTargets& targets,
                                 const ClusterQueue& cluster_queue,
                                 const InstanceQueue& instance_queue, const StepDraws& draws,
                                 const ObjectiveOptions& opt) {
  EncoderGraph g = bind_trainable(tape, online);
  Var features = encode(g, tape.constant(draws.online_view));
  Var logits = assignment_logits(g, features);
  Var pi = softmax_rows(logits);

  Var cf = features, cpi = pi;
  if (draws.cluster_input) {
    cf = encode(g, tape.constant(*draws.cluster_input));
    cpi = assign(g, cf);
  }
  Var weights = opt.hard_assign_aggregate ? tape.constant(hard_assignment_weights(cpi.value())) : cpi;
  Var reps = aggregate_all(cf, weights);

  Objective obj;
  obj.assignments = pi;
  obj.l1 = opt.use_cluster_queue ? cluster_loss(reps, targets.reps, cluster_queue, opt.tau)
                                 : cluster_loss_in_batch(reps, targets.reps, opt.tau);
  obj.instance = instance_loss(g, features, logits, draws.online_noise, targets.embeddings,
                               instance_queue, opt.tau, opt.lambda);
  obj.total = combined_loss(obj.l1, obj.instance.loss, opt.alpha);
  return obj;
}

}  // namespace tcc
