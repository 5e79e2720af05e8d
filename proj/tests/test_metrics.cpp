#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tcc/metrics.hpp"
#include "tcc/rng.hpp"

using namespace tcc;

namespace {

std::vector<int> random_labels(std::size_t n, std::size_t K, CounterRng& rng) {
  std::vector<int> out(n);
  for (int& v : out) v = static_cast<int>(rng.below(K));
  return out;
}

double brute_force_acc(const std::vector<int>& pred, const std::vector<int>& truth, std::size_t K) {
  std::vector<int> perm(K);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += perm[pred[i]] == truth[i];
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pred.size());
}

double choose2(double n) { return n * (n - 1) / 2; }

/// Pair enumeration: a = same/same, plus same-pred and same-true totals.
double ari_by_pairs(const std::vector<int>& p, const std::vector<int>& t) {
  double both = 0, same_p = 0, same_t = 0;
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      both += p[i] == p[j] && t[i] == t[j];
      same_p += p[i] == p[j];
      same_t += t[i] == t[j];
    }
  }
  const double pairs = choose2(static_cast<double>(n));
  const double expected = same_p * same_t / pairs;
  return (both - expected) / (0.5 * (same_p + same_t) - expected);
}

}  // namespace

TEST(Acc, RelabeledCopyScoresOne) {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2, 2};
  const std::vector<int> pred{2, 2, 0, 0, 1, 1, 1};
  EXPECT_EQ(acc(pred, truth), 1.0);
  EXPECT_EQ(nmi(pred, truth), 1.0);
  EXPECT_EQ(ari(pred, truth), 1.0);
}

TEST(Acc, ConstantPredictionHalf) {
  const std::vector<int> truth{0, 0, 1, 1}, pred{1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(acc(pred, truth), 0.5);
}

TEST(Acc, HungarianMatchesBruteForce) {
  CounterRng rng = make_stream(1, Stream::kGradCheck);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t K = 2 + rng.below(5);
    const std::size_t n = 5 + rng.below(60);
    const auto truth = random_labels(n, K, rng);
    auto pred = random_labels(n, K, rng);
    for (std::size_t i = 0; i < n; ++i)
      if (rng.uniform() < 0.5) pred[i] = (truth[i] + 1) % static_cast<int>(K);
    ASSERT_DOUBLE_EQ(acc(pred, truth), brute_force_acc(pred, truth, K)) << "trial " << trial;
  }
}

TEST(Acc, UnequalLabelCounts) {
  const std::vector<int> truth{0, 0, 0, 1, 1, 1}, pred{0, 0, 1, 2, 2, 3};
  EXPECT_DOUBLE_EQ(acc(pred, truth), 4.0 / 6.0);
}

TEST(Metrics, LengthMismatchThrows) {
  const std::vector<int> a{0, 1}, b{0};
  EXPECT_THROW(acc(a, b), LengthMismatch);
  EXPECT_THROW(nmi(a, b), LengthMismatch);
  EXPECT_THROW(ari(a, b), LengthMismatch);
}

TEST(Metrics, InvariantUnderRelabeling) {
  CounterRng rng = make_stream(2, Stream::kGradCheck);
  const auto truth = random_labels(300, 4, rng);
  auto pred = truth;
  for (auto& v : pred)
    if (rng.uniform() < 0.3) v = static_cast<int>(rng.below(4));
  const std::vector<int> relabel{3, 0, 2, 1};
  auto pred2 = pred, truth2 = truth;
  for (auto& v : pred2) v = relabel[v];
  for (auto& v : truth2) v = relabel[(v + 1) % 4];
  EXPECT_NEAR(acc(pred, truth), acc(pred2, truth2), 1e-15);
  EXPECT_NEAR(nmi(pred, truth), nmi(pred2, truth2), 1e-12);
  EXPECT_NEAR(ari(pred, truth), ari(pred2, truth2), 1e-12);
}

TEST(Ari, MatchesPairEnumeration) {
  const std::vector<int> truth{0, 0, 0, 1, 1, 1}, pred{0, 0, 1, 1, 2, 2};
  EXPECT_NEAR(ari(pred, truth), ari_by_pairs(pred, truth), 1e-15);
  CounterRng rng = make_stream(3, Stream::kGradCheck);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = random_labels(6, 3, rng), p = random_labels(6, 3, rng);
    const double by_pairs = ari_by_pairs(p, t);
    if (!std::isfinite(by_pairs)) continue;
    EXPECT_NEAR(ari(p, t), by_pairs, 1e-12);
  }
}

TEST(Ari, ConstantPredictionIsZero) {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2}, pred(6, 0);
  EXPECT_NEAR(ari(pred, truth), 0.0, 1e-15);
  EXPECT_EQ(nmi(pred, truth), 0.0);
}

TEST(Nmi, IdenticalIsExactlyOne) {
  CounterRng rng = make_stream(4, Stream::kGradCheck);
  const auto t = random_labels(1000, 7, rng);
  EXPECT_EQ(nmi(t, t), 1.0);
  EXPECT_EQ(ari(t, t), 1.0);
}

TEST(Nmi, IndependentPartitionsNearZero) {
  CounterRng rng = make_stream(5, Stream::kGradCheck);
  const auto a = random_labels(10000, 5, rng), b = random_labels(10000, 5, rng);
  EXPECT_LT(nmi(a, b), 0.05);
  EXPECT_LT(std::abs(ari(a, b)), 0.01);
}

TEST(Nmi, DirectFormula) {
  const std::vector<int> p{0, 0, 1, 1, 1}, t{0, 1, 1, 1, 0};
  // Contingency [[1,1],[1,2]]; marginals (2,3) and (2,3).
  const double n = 5;
  const double h = -(0.4 * std::log(0.4) + 0.6 * std::log(0.6));
  const double mi = (1 / n) * std::log(1 * n / (2 * 2)) + (1 / n) * std::log(1 * n / (2 * 3)) +
                    (1 / n) * std::log(1 * n / (3 * 2)) + (2 / n) * std::log(2 * n / (3 * 3));
  EXPECT_NEAR(nmi(p, t), mi / h, 1e-14);
}

TEST(DecDiagnostic, OneHotAndUniformAreZero) {
  const DenseArray onehot = DenseArray::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
  EXPECT_NEAR(dec_diagnostic(onehot), 0.0, 1e-15);
  EXPECT_NEAR(dec_diagnostic(DenseArray(5, 4, 0.25)), 0.0, 1e-15);
}

TEST(DecDiagnostic, TwoPointHandEvaluation) {
  const DenseArray pi = DenseArray::from_rows({{0.9, 0.1}, {0.6, 0.4}});
  const double f0 = 1.5, f1 = 0.5;
  double total = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const double a = pi(i, 0) * pi(i, 0) / f0, b = pi(i, 1) * pi(i, 1) / f1;
    const double t0 = a / (a + b), t1 = b / (a + b);
    total += t0 * std::log(t0 / pi(i, 0)) + t1 * std::log(t1 / pi(i, 1));
  }
  EXPECT_NEAR(dec_diagnostic(pi), total / 2, 1e-15);
  EXPECT_GT(dec_diagnostic(pi), 0.0);
}

TEST(Histogram, CountsAndEntropy) {
  const std::vector<int> labels{0, 1, 1, 3, 3, 3};
  const auto h = label_histogram(labels, 4);
  EXPECT_EQ(h, (std::vector<std::size_t>{1, 2, 0, 3}));
  const double e = -(1.0 / 6 * std::log(1.0 / 6) + 2.0 / 6 * std::log(2.0 / 6) + 0.5 * std::log(0.5));
  EXPECT_NEAR(histogram_entropy(h), e, 1e-15);
}
