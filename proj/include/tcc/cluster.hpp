#pragma once

// Cluster-level representations and contrast.
//
// A cluster representation is the assignment-weighted sum of batch features,
// normalized to the unit sphere. Summation makes it a deep-sets style
// permutation-invariant function of the batch, and because softmax weights
// are strictly positive every datum contributes a little to every cluster.

#include <cstddef>
#include <span>
#include <vector>

#include "tcc/autodiff.hpp"
#include "tcc/queue.hpp"

namespace tcc {

struct ClusterRepresentation {
  std::vector<double> r;
  std::size_t cluster_id = 0;
};

/// Memory bank of past momentum cluster representations.
///
/// Representations are always pushed as a full block in cluster order 0..K-1
/// and the capacity is a multiple of K, so slot l always holds cluster l mod K.
class ClusterQueue {
 public:
  ClusterQueue() = default;
  ClusterQueue(std::size_t capacity, std::size_t clusters, std::size_t dim)
      : queue_(capacity, dim), clusters_(clusters) {
    if (clusters == 0) throw EmptyModel("ClusterQueue: zero clusters");
    if (capacity % clusters != 0) {
      throw ConfigError("ClusterQueue: capacity " + std::to_string(capacity) +
                        " is not a multiple of K=" + std::to_string(clusters));
    }
  }

  std::size_t clusters() const noexcept { return clusters_; }
  std::size_t capacity() const noexcept { return queue_.capacity(); }
  std::size_t size() const noexcept { return queue_.size(); }
  std::size_t dim() const noexcept { return queue_.dim(); }
  bool empty() const noexcept { return queue_.empty(); }

  /// Appends r_hat_0..r_hat_{K-1} (one row each, in cluster order).
  void push_clusters(const DenseArray& reps) {
    if (reps.rows() != clusters_) {
      throw CountMismatch("push_clusters: got " + std::to_string(reps.rows()) +
                          " representations for K=" + std::to_string(clusters_));
    }
    queue_.push_rows(reps);
  }

  /// Cluster represented by slot l.
  std::size_t cluster_of_slot(std::size_t l) const noexcept { return l % clusters_; }

  /// Slots excluded from cluster k's negatives: those holding cluster k.
  std::vector<std::size_t> excluded_slots(std::size_t k) const {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < capacity(); ++l)
      if (cluster_of_slot(l) == k) out.push_back(l);
    return out;
  }

  std::span<const double> slot(std::size_t l) const { return queue_.slot(l); }
  DenseArray contents() const { return queue_.contents(); }
  VectorQueue& raw() noexcept { return queue_; }
  const VectorQueue& raw() const noexcept { return queue_; }

  friend bool operator==(const ClusterQueue&, const ClusterQueue&) = default;

 private:
  VectorQueue queue_;
  std::size_t clusters_ = 0;
};

/// Representations of all K clusters: rows of normalize(Pi^T F), (K x d_m).
/// `features` is (B x d_m), `assignments` is (B x K).
inline Var aggregate_all(Var features, Var assignments) {
  if (features.rows() == 0) throw ShapeMismatch("aggregate: empty batch");
  if (features.rows() != assignments.rows()) {
    throw ShapeMismatch("aggregate: " + std::to_string(features.rows()) + " features vs " +
                        std::to_string(assignments.rows()) + " assignments");
  }
  return l2_normalize_rows(matmul(transpose(assignments), features));
}

/// Representation of cluster k alone, (1 x d_m).
inline Var aggregate(Var features, Var assignments, std::size_t k) {
  if (k >= assignments.cols()) throw ShapeMismatch("aggregate: cluster index out of range");
  if (features.rows() != assignments.rows()) throw ShapeMismatch("aggregate: batch misaligned");
  DenseArray selector(assignments.cols(), 1);
  selector(k, 0) = 1.0;
  Var weights = matmul(assignments, features.tape()->constant(std::move(selector)));
  return l2_normalize_rows(matmul(transpose(weights), features));
}

inline std::vector<ClusterRepresentation> to_representations(const DenseArray& reps) {
  std::vector<ClusterRepresentation> out;
  for (std::size_t k = 0; k < reps.rows(); ++k)
    out.push_back({{reps.row(k).begin(), reps.row(k).end()}, k});
  return out;
}

/// Cluster-level InfoNCE against the memory bank:
///   mean_k [ -log exp(r^_k.r_k/tau) / (exp(r^_k.r_k/tau) + sum_{l mod K != k} exp(p_l.r_k/tau)) ]
/// `reps` are online (K x d), `momentum_reps` are constants. Returns a scalar.
inline Var cluster_loss(Var reps, const DenseArray& momentum_reps, const ClusterQueue& queue,
                        double tau) {
  if (!(tau > 0.0)) throw InvalidTemperature("cluster_loss: tau must be positive");
  const std::size_t K = reps.rows();
  if (K == 0) throw EmptyModel("cluster_loss: no clusters");
  if (!momentum_reps.same_shape(reps.value())) throw ShapeMismatch("cluster_loss: r_hat shape");
  if (!queue.empty() && (queue.clusters() != K || queue.dim() != reps.cols())) {
    throw ShapeMismatch("cluster_loss: queue does not match representations");
  }
  Tape& t = *reps.tape();
  Var pos = scale(row_dot(reps, t.constant(momentum_reps)), 1.0 / tau);
  if (queue.empty()) {
    // Only the positive term: -log(e^s / e^s) = 0, kept on the graph for uniformity.
    return mean_all(log_sum_exp_rows(pos) - pos);
  }
  Var neg = scale(matmul_nt(reps, t.constant(queue.contents())), 1.0 / tau);
  Var logits = concat_cols(pos, neg);
  const std::size_t n = logits.cols();
  std::vector<char> keep(K * n, 1);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t l = 0; l < queue.size(); ++l)
      if (queue.cluster_of_slot(l) == k) keep[k * n + 1 + l] = 0;
  return mean_all(log_sum_exp_rows(logits, &keep) - pos);
}

/// Queue-free variant: the other K-1 momentum representations are the negatives.
inline Var cluster_loss_in_batch(Var reps, const DenseArray& momentum_reps, double tau) {
  if (!(tau > 0.0)) throw InvalidTemperature("cluster_loss: tau must be positive");
  if (reps.rows() == 0) throw EmptyModel("cluster_loss: no clusters");
  Tape& t = *reps.tape();
  Var r_hat = t.constant(momentum_reps);
  Var pos = scale(row_dot(reps, r_hat), 1.0 / tau);
  Var all = scale(matmul_nt(reps, r_hat), 1.0 / tau);
  return mean_all(log_sum_exp_rows(all) - pos);
}

}  // namespace tcc
