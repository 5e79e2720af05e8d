#pragma once

// Finite-difference verification of the three training losses on a small,
// fully seeded problem: a fresh encoder, an 8-point two-moons batch, partly
// filled queues and one set of frozen draws.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tcc/autodiff.hpp"
#include "tcc/data.hpp"
#include "tcc/objective.hpp"
#include "tcc/rng.hpp"
#include "tcc/trainer.hpp"

namespace tcc {

struct GradCheckOptions {
  std::size_t clusters = 2;
  std::size_t batch = 8;
  std::size_t gumbel_samples = 1;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t feature_dim = 16;
  double alpha = 0.5;
  double tau = 1.0;
  double lambda = 0.8;
  double eps = 1e-5;
  double tolerance = 1e-3;
  std::uint64_t seed = 0;
  std::optional<Op> fault;  ///< corrupt this op's backward rule (negative control)
  double fault_factor = 1.5;
};

struct LossCheck {
  std::string loss;  ///< "cluster", "instance" or "total"
  GradientCheckReport report;
  bool passed = false;
};

namespace detail {

inline DenseArray random_unit_rows(std::size_t rows, std::size_t cols, CounterRng& rng) {
  DenseArray a(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double n = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      a(i, j) = rng.normal();
      n += a(i, j) * a(i, j);
    }
    n = std::sqrt(n);
    for (std::size_t j = 0; j < cols; ++j) a(i, j) /= n;
  }
  return a;
}

}  // namespace detail

inline std::vector<LossCheck> run_gradient_checks(const GradCheckOptions& o) {
  TrainConfig c;
  c.clusters = o.clusters;
  c.hidden = o.hidden;
  c.feature_dim = o.feature_dim;
  c.gumbel_samples = o.gumbel_samples;
  c.alpha = o.alpha;
  c.tau = o.tau;
  c.lambda = o.lambda;
  c.seed = o.seed;
  c.validate();

  const Dataset data = two_moons(o.batch, 0.05, o.seed);
  Encoder online = Encoder::initialize(c.encoder_config(data.dim()), o.seed);
  Encoder momentum = Encoder::initialize(c.encoder_config(data.dim()), o.seed + 0x9e37);

  CounterRng rng = make_stream(o.seed, Stream::kGradCheck, 1);
  ClusterQueue cq(4 * o.clusters, o.clusters, o.feature_dim);
  cq.push_clusters(detail::random_unit_rows(o.clusters, o.feature_dim, rng));
  cq.push_clusters(detail::random_unit_rows(o.clusters, o.feature_dim, rng));
  InstanceQueue iq(2 * o.batch, o.feature_dim);
  push_instances(iq, detail::random_unit_rows(o.batch + 3, o.feature_dim, rng));

  const AugmentPolicy policy = make_policy(c, data);
  const StepDraws draws = draw_step(c, policy, data.x, 0);
  const ObjectiveOptions opt = objective_options(c);
  const MomentumTargets targets = momentum_targets(momentum, draws, opt);

  std::vector<LossCheck> out;
  for (const char* which : {"cluster", "instance", "total"}) {
    auto build = [&](Tape& tape) {
      if (o.fault) tape.set_gradient_fault(*o.fault, o.fault_factor);
      Objective obj = build_objective(tape, online, targets, cq, iq, draws, opt);
      const std::string w = which;
      if (w == "cluster") return obj.l1;
      if (w == "instance") return obj.instance.loss;
      return obj.total;
    };
    LossCheck lc;
    lc.loss = which;
    lc.report = check_gradient(online.params(), build, o.eps, 100000, o.seed);
    lc.passed = lc.report.max_relative_error < o.tolerance;
    out.push_back(std::move(lc));
  }
  return out;
}

}  // namespace tcc
