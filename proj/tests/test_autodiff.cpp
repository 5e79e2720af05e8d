#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <functional>

#include "test_util.hpp"
#include "tcc/autodiff.hpp"

using namespace tcc;
using tcc::testing::contract;
using tcc::testing::random_array;
using tcc::testing::random_positive;

namespace {

constexpr double kOpTolerance = 1e-4;

/// Checks d(contract(op(inputs)))/d(inputs) against central differences.
double op_error(std::vector<DenseArray> inputs,
                const std::function<Var(Tape&, std::vector<Var>&)>& op, std::uint64_t seed) {
  ParameterStore store;
  for (std::size_t i = 0; i < inputs.size(); ++i) store.add("in" + std::to_string(i), inputs[i]);
  auto build = [&](Tape& t) {
    std::vector<Var> v;
    for (std::size_t i = 0; i < inputs.size(); ++i) v.push_back(t.parameter(store, "in" + std::to_string(i)));
    return contract(op(t, v), seed);
  };
  return check_gradient(store, build, 1e-5).max_relative_error;
}

}  // namespace

TEST(Matmul, IdentityAndAnnihilator) {
  Tape t;
  Var id = t.constant(DenseArray::from_rows({{1, 0}, {0, 1}}));
  Var b = t.constant(DenseArray::from_rows({{2}, {3}}));
  EXPECT_EQ(matmul(id, b).value(), DenseArray::from_rows({{2}, {3}}));
  Var z = t.constant(DenseArray(2, 2));
  EXPECT_EQ(matmul(z, b).value(), DenseArray(2, 1));
}

TEST(Matmul, ShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(matmul(t.constant(DenseArray(2, 3)), t.constant(DenseArray(2, 3))), ShapeMismatch);
  EXPECT_THROW(matmul_nt(t.constant(DenseArray(2, 3)), t.constant(DenseArray(2, 2))), ShapeMismatch);
}

TEST(Matmul, GemmMatchesNaiveProductForAllTransposes) {
  const DenseArray a = random_array(3, 4, 1), b = random_array(4, 5, 2);
  DenseArray naive(3, 5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 4; ++k) naive(i, j) += a(i, k) * b(k, j);
  DenseArray at(4, 3), bt(5, 4);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) at(k, i) = a(i, k);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t j = 0; j < 5; ++j) bt(j, k) = b(k, j);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      DenseArray c(3, 5);
      kernel::gemm(ta ? at : a, ta, tb ? bt : b, tb, c, false);
      for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], naive[i], 1e-12);
    }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const double err = op_error({random_array(3, 3, s), random_array(3, 3, s + 50)},
                                [](Tape&, std::vector<Var>& v) { return matmul(v[0], v[1]); }, s);
    EXPECT_LT(err, kOpTolerance) << "seed " << s;
  }
}

TEST(Ops, EveryDifferentiableOpMatchesFiniteDifferences) {
  using Build = std::function<Var(Tape&, std::vector<Var>&)>;
  struct Case {
    const char* name;
    std::function<std::vector<DenseArray>(std::uint64_t)> inputs;
    Build op;
  };
  const std::vector<Case> cases = {
      {"matmul_nt", [](auto s) { return std::vector{random_array(3, 4, s), random_array(5, 4, s + 9)}; },
       [](Tape&, auto& v) { return matmul_nt(v[0], v[1]); }},
      {"transpose", [](auto s) { return std::vector{random_array(3, 4, s)}; },
       [](Tape&, auto& v) { return transpose(v[0]); }},
      {"add", [](auto s) { return std::vector{random_array(3, 4, s), random_array(3, 4, s + 9)}; },
       [](Tape&, auto& v) { return v[0] + v[1]; }},
      {"sub", [](auto s) { return std::vector{random_array(3, 4, s), random_array(3, 4, s + 9)}; },
       [](Tape&, auto& v) { return v[0] - v[1]; }},
      {"mul", [](auto s) { return std::vector{random_array(3, 4, s), random_array(3, 4, s + 9)}; },
       [](Tape&, auto& v) { return v[0] * v[1]; }},
      {"mul_same", [](auto s) { return std::vector{random_array(3, 4, s)}; },
       [](Tape&, auto& v) { return v[0] * v[0]; }},
      {"scale", [](auto s) { return std::vector{random_array(3, 4, s)}; },
       [](Tape&, auto& v) { return -2.5 * v[0]; }},
      {"add_bias", [](auto s) { return std::vector{random_array(3, 4, s), random_array(1, 4, s + 9)}; },
       [](Tape&, auto& v) { return add_bias(v[0], v[1]); }},
      {"relu", [](auto s) { return std::vector{random_array(3, 4, s)}; },
       [](Tape&, auto& v) { return relu(v[0]); }},
      {"log", [](auto s) { return std::vector{random_positive(3, 4, s)}; },
       [](Tape&, auto& v) { return log(v[0]); }},
      {"softmax", [](auto s) { return std::vector{random_array(4, 5, s, 2.0)}; },
       [](Tape&, auto& v) { return softmax_rows(v[0]); }},
      {"log_softmax", [](auto s) { return std::vector{random_array(4, 5, s, 2.0)}; },
       [](Tape&, auto& v) { return log_softmax_rows(v[0]); }},
      {"l2_normalize", [](auto s) { return std::vector{random_array(4, 5, s)}; },
       [](Tape&, auto& v) { return l2_normalize_rows(v[0]); }},
      {"log_sum_exp", [](auto s) { return std::vector{random_array(4, 5, s, 3.0)}; },
       [](Tape&, auto& v) { return log_sum_exp_rows(v[0]); }},
      {"log_sum_exp_masked", [](auto s) { return std::vector{random_array(2, 3, s, 3.0)}; },
       [](Tape&, auto& v) {
         static const std::vector<char> keep{1, 0, 1, 0, 1, 1};
         return log_sum_exp_rows(v[0], &keep);
       }},
      {"sum_rows", [](auto s) { return std::vector{random_array(3, 4, s)}; },
       [](Tape&, auto& v) { return sum_rows(v[0]); }},
      {"sum_all", [](auto s) { return std::vector{random_array(3, 4, s)}; },
       [](Tape&, auto& v) { return sum_all(v[0]); }},
      {"mean_all", [](auto s) { return std::vector{random_array(3, 4, s)}; },
       [](Tape&, auto& v) { return mean_all(v[0]); }},
      {"concat_cols", [](auto s) { return std::vector{random_array(3, 2, s), random_array(3, 4, s + 9)}; },
       [](Tape&, auto& v) { return concat_cols(v[0], v[1]); }},
      {"row_dot", [](auto s) { return std::vector{random_array(3, 4, s), random_array(3, 4, s + 9)}; },
       [](Tape&, auto& v) { return row_dot(v[0], v[1]); }},
  };
  for (const auto& c : cases) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const double err = op_error(c.inputs(s), c.op, s);
      EXPECT_LT(err, kOpTolerance) << c.name << " seed " << s;
    }
  }
}

TEST(Softmax, SymmetricAndStable) {
  Tape t;
  DenseArray p = softmax_rows(t.constant(DenseArray::row_vector({0.0, 0.0}))).value();
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
  DenseArray q = softmax_rows(t.constant(DenseArray::row_vector({1000.0, 0.0}))).value();
  EXPECT_TRUE(q.all_finite());
  EXPECT_NEAR(q[0], 1.0, 1e-15);
  EXPECT_NEAR(q[1], 0.0, 1e-15);
}

TEST(Softmax, RowsLieOnTheSimplex) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Tape t;
    const DenseArray p = softmax_rows(t.constant(random_array(6, 5, s, 3.0))).value();
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double sum = 0.0;
      for (double v : p.row(i)) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, RejectsNonFiniteInput) {
  Tape t;
  DenseArray x = DenseArray::row_vector({1.0, 2.0});
  x(0, 0) = INFINITY;
  EXPECT_THROW(t.constant(x), NonFiniteInput);
  Var overflow = scale(t.constant(DenseArray::row_vector({1e308, 1.0})), 10.0);
  EXPECT_THROW(softmax_rows(overflow), NonFiniteInput);
}

TEST(Normalize, ThreeFourFiveAndIdempotence) {
  Tape t;
  DenseArray y = l2_normalize_rows(t.constant(DenseArray::row_vector({3.0, 4.0}))).value();
  EXPECT_DOUBLE_EQ(y[0], 0.6);
  EXPECT_DOUBLE_EQ(y[1], 0.8);
  DenseArray z = l2_normalize_rows(t.constant(y)).value();
  EXPECT_NEAR(z[0], 0.6, 1e-15);
  EXPECT_NEAR(z[1], 0.8, 1e-15);
}

TEST(Normalize, UnitNormOnRandomRows) {
  Tape t;
  const DenseArray y = l2_normalize_rows(t.constant(random_array(20, 7, 3, 100.0))).value();
  for (std::size_t i = 0; i < y.rows(); ++i) EXPECT_NEAR(l2_norm(y.row(i)), 1.0, 1e-9);
}

TEST(Normalize, DegenerateRowThrows) {
  Tape t;
  EXPECT_THROW(l2_normalize_rows(t.constant(DenseArray(1, 3))), DegenerateNorm);
  EXPECT_THROW(l2_normalize_rows(t.constant(DenseArray::row_vector({1e-13, 0.0}))), DegenerateNorm);
}

TEST(LogSumExp, ClosedForms) {
  Tape t;
  EXPECT_DOUBLE_EQ(log_sum_exp(t.constant(DenseArray::row_vector({0.0, 0.0}))).item(), std::log(2.0));
  EXPECT_DOUBLE_EQ(log_sum_exp(t.constant(DenseArray::row_vector({-3.25}))).item(), -3.25);
  const double big = log_sum_exp(t.constant(DenseArray::row_vector({700.0, 700.0}))).item();
  EXPECT_TRUE(std::isfinite(big));
  EXPECT_DOUBLE_EQ(big, 700.0 + std::log(2.0));
}

TEST(LogSumExp, MaskDropsEntries) {
  Tape t;
  const std::vector<char> keep{1, 0, 1};
  const double v = log_sum_exp_rows(t.constant(DenseArray::row_vector({1.0, 50.0, 2.0})), &keep).item();
  EXPECT_NEAR(v, std::log(std::exp(1.0) + std::exp(2.0)), 1e-14);
}

TEST(Backward, PolynomialAndConstantLoss) {
  ParameterStore store;
  store.add("x", DenseArray::scalar(3.0));
  {
    Tape t;
    Var x = t.parameter(store, "x");
    t.backward(x * x);
  }
  EXPECT_DOUBLE_EQ(store.at("x").grad.item(), 6.0);

  store.zero_grad();
  {
    Tape t;
    t.parameter(store, "x");
    Var c = t.constant(DenseArray::scalar(5.0));
    t.backward(c);
  }
  EXPECT_EQ(store.at("x").grad.item(), 0.0);
}

TEST(Backward, GradientsAccumulateAcrossTapes) {
  ParameterStore store;
  store.add("x", DenseArray::scalar(2.0));
  for (int i = 0; i < 2; ++i) {
    Tape t;
    Var x = t.parameter(store, "x");
    t.backward(3.0 * x);
  }
  EXPECT_DOUBLE_EQ(store.at("x").grad.item(), 6.0);
}

TEST(Backward, ConstantsNeverReceiveGradient) {
  ParameterStore store;
  store.add("w", DenseArray::row_vector({1.0, 2.0}));
  Tape t;
  Var w = t.parameter(store, "w");
  Var c = t.constant(DenseArray::row_vector({3.0, 4.0}));
  Var loss = sum_all(w * c);
  t.backward(loss);
  EXPECT_FALSE(t.requires_grad(c.id()));
  EXPECT_EQ(c.grad().size(), 0u);
  EXPECT_EQ(store.at("w").grad, DenseArray::row_vector({3.0, 4.0}));
}

TEST(Backward, RejectsNonScalarAndRepeatedCalls) {
  ParameterStore store;
  store.add("w", DenseArray::row_vector({1.0, 2.0}));
  Tape t;
  Var w = t.parameter(store, "w");
  EXPECT_THROW(t.backward(w), NonScalarLoss);
  Var loss = sum_all(w);
  t.backward(loss);
  EXPECT_THROW(t.backward(loss), DoubleBackward);
}

TEST(Backward, DeterministicEvaluation) {
  auto run = [] {
    ParameterStore store;
    store.add("a", random_array(4, 4, 5));
    Tape t;
    Var a = t.parameter(store, "a");
    Var loss = sum_all(log_softmax_rows(matmul(a, a)));
    t.backward(loss);
    return std::make_pair(loss.item(), store.at("a").grad);
  };
  const auto [l1, g1] = run();
  const auto [l2, g2] = run();
  EXPECT_EQ(std::memcmp(&l1, &l2, sizeof l1), 0);
  EXPECT_EQ(g1, g2);
}

TEST(CheckGradient, RejectsBadEpsilon) {
  ParameterStore store;
  store.add("x", DenseArray::scalar(1.0));
  auto build = [&](Tape& t) { return t.parameter(store, "x"); };
  EXPECT_THROW(check_gradient(store, build, 0.0), Error);
  EXPECT_THROW(check_gradient(store, build, 0.1), Error);
}

TEST(CheckGradient, SubsamplesLargeStores) {
  ParameterStore store;
  store.add("x", random_array(30, 30, 1));
  auto build = [&](Tape& t) { return sum_all(t.parameter(store, "x") * t.parameter(store, "x")); };
  const auto r = check_gradient(store, build, 1e-5, 100, 3);
  EXPECT_EQ(r.entries_checked, 100u);
  EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(CheckGradient, FaultInjectionIsDetected) {
  for (Op op : {Op::kMatmul, Op::kSoftmax, Op::kNormalize}) {
    ParameterStore store;
    store.add("a", random_array(4, 3, 2));
    store.add("b", random_array(3, 3, 3));
    auto build = [&](Tape& t) {
      t.set_gradient_fault(op, 1.5);
      Var x = matmul(t.parameter(store, "a"), t.parameter(store, "b"));
      return contract(l2_normalize_rows(softmax_rows(x)), 9);
    };
    EXPECT_GT(check_gradient(store, build).max_relative_error, 0.1) << static_cast<int>(op);
  }
}

TEST(ParameterStore, RejectsDuplicatesAndUnknownNames) {
  ParameterStore store;
  store.add("w", DenseArray(2, 2));
  EXPECT_THROW(store.add("w", DenseArray(1, 1)), Error);
  EXPECT_THROW(store.at("missing"), Error);
  EXPECT_EQ(store.total_entries(), 4u);
}
