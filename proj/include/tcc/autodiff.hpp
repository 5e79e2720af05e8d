#pragma once

// Tape-based reverse-mode differentiation over dense 2-D arrays.
//
// A Tape is rebuilt for every loss evaluation. Leaves are either constants
// (never receive gradient) or parameters bound from a ParameterStore; after
// Tape::backward the gradient of each bound parameter is added to the
// store's accumulator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "tcc/array.hpp"
#include "tcc/error.hpp"
#include "tcc/rng.hpp"

namespace tcc {

/// Norms at or below this raise DegenerateNorm in l2_normalize_rows.
inline constexpr double kNormEpsilon = 1e-12;

enum class Op {
  kConstant,
  kParameter,
  kMatmul,
  kMatmulNT,
  kLog,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddBias,
  kRelu,
  kSoftmax,
  kLogSoftmax,
  kNormalize,
  kLogSumExp,
  kSumRows,
  kSumAll,
  kConcatCols,
  kCount_,
};

// ---------------------------------------------------------------------------
// Parameters

struct Parameter {
  DenseArray value;
  DenseArray grad;
  DenseArray first_moment;
  DenseArray second_moment;
};

/// Named trainable arrays plus their Adam state. Iteration order is insertion order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, DenseArray value) {
    if (contains(name)) throw Error("ParameterStore: duplicate parameter '" + name + "'");
    require_finite(value, "ParameterStore::add");
    Parameter p;
    p.grad = DenseArray(value.rows(), value.cols());
    p.first_moment = DenseArray(value.rows(), value.cols());
    p.second_moment = DenseArray(value.rows(), value.cols());
    p.value = std::move(value);
    entries_.emplace_back(name, std::move(p));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const auto& e) { return e.first == name; });
  }

  Parameter& at(const std::string& name) {
    for (auto& e : entries_)
      if (e.first == name) return e.second;
    throw Error("ParameterStore: unknown parameter '" + name + "'");
  }
  const Parameter& at(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t total_entries() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.grad.fill(0.0);
  }

  /// Number of optimizer steps taken so far (Adam bias correction).
  std::uint64_t step = 0;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    if (a.entries_.size() != b.entries_.size() || a.step != b.step) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& [na, pa] = a.entries_[i];
      const auto& [nb, pb] = b.entries_[i];
      if (na != nb || pa.value != pb.value || pa.first_moment != pb.first_moment ||
          pa.second_moment != pb.second_moment)
        return false;
    }
    return true;
  }

 private:
  std::vector<std::pair<std::string, Parameter>> entries_;
};

// ---------------------------------------------------------------------------
// Dense kernels

namespace kernel {

/// C (+)= op(A) * op(B) where op is optional transposition.
inline void gemm(const DenseArray& a, bool ta, const DenseArray& b, bool tb, DenseArray& c,
                 bool accumulate) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (k != kb) {
    throw ShapeMismatch("matmul: inner dimensions differ (" + a.shape_string() + " vs " +
                        b.shape_string() + ")");
  }
  if (!accumulate || c.rows() != m || c.cols() != n) {
    if (accumulate && (c.rows() != m || c.cols() != n))
      throw ShapeMismatch("gemm: accumulator shape");
    c = DenseArray(m, n);
  }
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.data().data();
  const std::size_t lda = a.cols();
  const std::size_t ldb = b.cols();
  if (!tb) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = ta ? A[p * lda + i] : A[i * lda + p];
        if (aip == 0.0) continue;
        const double* brow = B + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = B + j * ldb;
        double s = 0.0;
        if (!ta) {
          const double* arow = A + i * lda;
          for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        } else {
          for (std::size_t p = 0; p < k; ++p) s += A[p * lda + i] * brow[p];
        }
        crow[j] += s;
      }
    }
  }
}

inline void require_same_shape(const DenseArray& a, const DenseArray& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(op) + ": shapes differ (" + a.shape_string() + " vs " +
                        b.shape_string() + ")");
  }
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Tape

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const DenseArray& value() const;
  const DenseArray& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() { fault_.fill(1.0); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(DenseArray value) {
    require_finite(value, "constant");
    return push(std::move(value), Op::kConstant, {}, nullptr, false);
  }

  /// Binds a stored parameter as a differentiable leaf.
  Var parameter(ParameterStore& store, const std::string& name) {
    Parameter& p = store.at(name);
    require_finite(p.value, "parameter");
    Var v = push(p.value, Op::kParameter, {}, nullptr, true);
    bindings_.push_back({v.id(), &p});
    return v;
  }

  const DenseArray& value(std::size_t id) const { return nodes_[id].value; }
  const DenseArray& grad(std::size_t id) const {
    static const DenseArray kEmpty;
    return nodes_[id].has_grad ? nodes_[id].grad : kEmpty;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Op op(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Adds parameter gradients into their stores.
  void backward(Var loss) {
    if (loss.tape() != this) throw Error("backward: variable belongs to another tape");
    if (backward_done_) throw DoubleBackward("backward called twice on the same tape");
    const DenseArray& lv = nodes_[loss.id()].value;
    if (lv.size() != 1) throw NonScalarLoss("backward: loss has shape " + lv.shape_string());
    if (!lv.all_finite()) throw NonFiniteLoss("backward: loss is not finite");
    backward_done_ = true;
    grad_ref(loss.id())[0] = 1.0;
    // Node ids are a topological order by construction.
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, id);
    }
    for (const auto& b : bindings_) {
      const Node& n = nodes_[b.node];
      if (!n.has_grad) continue;
      auto dst = b.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }

  /// Scales the gradient an op sends to its inputs. Used only as a negative
  /// control for gradient checking; default factor is 1.
  void set_gradient_fault(Op op, double factor) { fault_[static_cast<std::size_t>(op)] = factor; }
  double fault(Op op) const { return fault_[static_cast<std::size_t>(op)]; }

  // Internal API used by the op implementations below.
  Var push(DenseArray value, Op op, std::vector<std::size_t> parents, Backward fn,
           bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.parents = std::move(parents);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  DenseArray& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = DenseArray(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  const DenseArray& node_grad(std::size_t id) const { return nodes_[id].grad; }

  /// Which side of zero every ReLU input lies on, in tape order.
  std::vector<bool> relu_pattern() const {
    std::vector<bool> out;
    for (const Node& n : nodes_) {
      if (n.op != Op::kRelu) continue;
      for (double v : nodes_[n.parents.front()].value.data()) out.push_back(v > 0.0);
    }
    return out;
  }

 private:
  struct Node {
    DenseArray value;
    DenseArray grad;
    Op op = Op::kConstant;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
  };
  struct Binding {
    std::size_t node;
    Parameter* param;
  };

  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;
  std::array<double, static_cast<std::size_t>(Op::kCount_)> fault_{};
  bool backward_done_ = false;
};

inline const DenseArray& Var::value() const { return tape_->value(id_); }
inline const DenseArray& Var::grad() const { return tape_->grad(id_); }

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b) {
  if (!a.valid() || a.tape() != b.tape()) throw Error("operands live on different tapes");
  return *a.tape();
}

inline void add_into(DenseArray& dst, const DenseArray& src, double scale = 1.0) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

/// Matrix product a (m x k) * b (k x n).
inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  DenseArray out;
  kernel::gemm(a.value(), false, b.value(), false, out, false);
  const std::size_t ia = a.id(), ib = b.id();
  const bool rg = t.requires_grad(ia) || t.requires_grad(ib);
  return t.push(std::move(out), Op::kMatmul, {ia, ib},
                [ia, ib](Tape& tp, std::size_t self) {
                  const double f = tp.fault(Op::kMatmul);
                  DenseArray scaled;
                  const DenseArray* gp = &tp.node_grad(self);
                  if (f != 1.0) {
                    scaled = *gp;
                    for (double& v : scaled.data()) v *= f;
                    gp = &scaled;
                  }
                  const DenseArray& g = *gp;
                  if (tp.requires_grad(ia))
                    kernel::gemm(g, false, tp.value(ib), true, tp.grad_ref(ia), true);
                  if (tp.requires_grad(ib))
                    kernel::gemm(tp.value(ia), true, g, false, tp.grad_ref(ib), true);
                },
                rg);
}

/// a (m x k) times the transpose of b (n x k), giving m x n.
inline Var matmul_nt(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  DenseArray out;
  kernel::gemm(a.value(), false, b.value(), true, out, false);
  const std::size_t ia = a.id(), ib = b.id();
  const bool rg = t.requires_grad(ia) || t.requires_grad(ib);
  return t.push(std::move(out), Op::kMatmulNT, {ia, ib},
                [ia, ib](Tape& tp, std::size_t self) {
                  const DenseArray& g = tp.node_grad(self);
                  if (tp.requires_grad(ia))
                    kernel::gemm(g, false, tp.value(ib), false, tp.grad_ref(ia), true);
                  if (tp.requires_grad(ib))
                    kernel::gemm(g, true, tp.value(ia), false, tp.grad_ref(ib), true);
                },
                rg);
}

inline Var transpose(Var a) {
  Tape& t = *a.tape();
  const DenseArray& av = a.value();
  DenseArray out(av.cols(), av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
  const std::size_t ia = a.id();
  return t.push(std::move(out), Op::kTranspose, {ia},
                [ia](Tape& tp, std::size_t self) {
                  const DenseArray& g = tp.node_grad(self);
                  DenseArray& ga = tp.grad_ref(ia);
                  for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
                },
                t.requires_grad(ia));
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  kernel::require_same_shape(a.value(), b.value(), "add");
  DenseArray out = a.value();
  detail::add_into(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), Op::kAdd, {ia, ib},
                [ia, ib](Tape& tp, std::size_t self) {
                  const DenseArray& g = tp.node_grad(self);
                  if (tp.requires_grad(ia)) detail::add_into(tp.grad_ref(ia), g);
                  if (tp.requires_grad(ib)) detail::add_into(tp.grad_ref(ib), g);
                },
                t.requires_grad(ia) || t.requires_grad(ib));
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  kernel::require_same_shape(a.value(), b.value(), "sub");
  DenseArray out = a.value();
  detail::add_into(out, b.value(), -1.0);
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), Op::kSub, {ia, ib},
                [ia, ib](Tape& tp, std::size_t self) {
                  const DenseArray& g = tp.node_grad(self);
                  if (tp.requires_grad(ia)) detail::add_into(tp.grad_ref(ia), g);
                  if (tp.requires_grad(ib)) detail::add_into(tp.grad_ref(ib), g, -1.0);
                },
                t.requires_grad(ia) || t.requires_grad(ib));
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  kernel::require_same_shape(a.value(), b.value(), "mul");
  DenseArray out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), Op::kMul, {ia, ib},
                [ia, ib](Tape& tp, std::size_t self) {
                  auto g = tp.node_grad(self).data();
                  if (tp.requires_grad(ia)) {
                    auto ga = tp.grad_ref(ia).data();
                    auto vb = tp.value(ib).data();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
                  }
                  if (tp.requires_grad(ib)) {
                    auto gb = tp.grad_ref(ib).data();
                    auto va = tp.value(ia).data();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
                  }
                },
                t.requires_grad(ia) || t.requires_grad(ib));
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape();
  DenseArray out = a.value();
  for (double& v : out.data()) v *= s;
  const std::size_t ia = a.id();
  return t.push(std::move(out), Op::kScale, {ia},
                [ia, s](Tape& tp, std::size_t self) {
                  detail::add_into(tp.grad_ref(ia), tp.node_grad(self), s);
                },
                t.requires_grad(ia));
}

/// Adds a 1 x n bias row to every row of an m x n array.
inline Var add_bias(Var a, Var bias) {
  Tape& t = detail::same_tape(a, bias);
  const DenseArray& av = a.value();
  const DenseArray& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ShapeMismatch("add_bias: bias " + bv.shape_string() + " for input " +
                        av.shape_string());
  }
  DenseArray out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bv[j];
  }
  const std::size_t ia = a.id(), ib = bias.id();
  return t.push(std::move(out), Op::kAddBias, {ia, ib},
                [ia, ib](Tape& tp, std::size_t self) {
                  const DenseArray& g = tp.node_grad(self);
                  if (tp.requires_grad(ia)) detail::add_into(tp.grad_ref(ia), g);
                  if (tp.requires_grad(ib)) {
                    DenseArray& gb = tp.grad_ref(ib);
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      auto r = g.row(i);
                      for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
                    }
                  }
                },
                t.requires_grad(ia) || t.requires_grad(ib));
}

inline Var relu(Var a) {
  Tape& t = *a.tape();
  DenseArray out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return t.push(std::move(out), Op::kRelu, {ia},
                [ia](Tape& tp, std::size_t self) {
                  auto g = tp.node_grad(self).data();
                  auto x = tp.value(ia).data();
                  auto ga = tp.grad_ref(ia).data();
                  for (std::size_t i = 0; i < g.size(); ++i)
                    if (x[i] > 0.0) ga[i] += g[i];
                },
                t.requires_grad(ia));
}

/// Elementwise natural log; inputs must be strictly positive.
inline Var log(Var a) {
  Tape& t = *a.tape();
  DenseArray out = a.value();
  for (double& v : out.data()) {
    if (!(v > 0.0)) throw NonFiniteInput("log: non-positive input");
    v = std::log(v);
  }
  const std::size_t ia = a.id();
  return t.push(std::move(out), Op::kLog, {ia},
                [ia](Tape& tp, std::size_t self) {
                  auto g = tp.node_grad(self).data();
                  auto x = tp.value(ia).data();
                  auto ga = tp.grad_ref(ia).data();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
                },
                t.requires_grad(ia));
}

/// Row-wise softmax with max subtraction.
inline Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  const DenseArray& x = a.value();
  require_finite(x, "softmax");
  DenseArray out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    auto yi = out.row(i);
    const double mx = *std::max_element(xi.begin(), xi.end());
    double s = 0.0;
    for (std::size_t j = 0; j < xi.size(); ++j) s += (yi[j] = std::exp(xi[j] - mx));
    for (double& v : yi) v /= s;
  }
  const std::size_t ia = a.id();
  return t.push(std::move(out), Op::kSoftmax, {ia},
                [ia](Tape& tp, std::size_t self) {
                  const DenseArray& g = tp.node_grad(self);
                  const DenseArray& y = tp.value(self);
                  DenseArray& ga = tp.grad_ref(ia);
                  const double f = tp.fault(Op::kSoftmax);
                  for (std::size_t i = 0; i < y.rows(); ++i) {
                    auto yi = y.row(i);
                    auto gi = g.row(i);
                    auto gai = ga.row(i);
                    const double gy = dot(gi, yi);
                    for (std::size_t j = 0; j < yi.size(); ++j)
                      gai[j] += f * yi[j] * (gi[j] - gy);
                  }
                },
                t.requires_grad(ia));
}

/// Row-wise log-softmax, x - logsumexp(x).
inline Var log_softmax_rows(Var a) {
  Tape& t = *a.tape();
  const DenseArray& x = a.value();
  require_finite(x, "log_softmax");
  DenseArray out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    auto yi = out.row(i);
    const double mx = *std::max_element(xi.begin(), xi.end());
    double s = 0.0;
    for (double v : xi) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < xi.size(); ++j) yi[j] = xi[j] - lse;
  }
  const std::size_t ia = a.id();
  return t.push(std::move(out), Op::kLogSoftmax, {ia},
                [ia](Tape& tp, std::size_t self) {
                  const DenseArray& g = tp.node_grad(self);
                  const DenseArray& y = tp.value(self);
                  DenseArray& ga = tp.grad_ref(ia);
                  for (std::size_t i = 0; i < y.rows(); ++i) {
                    auto yi = y.row(i);
                    auto gi = g.row(i);
                    auto gai = ga.row(i);
                    double gs = 0.0;
                    for (double v : gi) gs += v;
                    for (std::size_t j = 0; j < yi.size(); ++j)
                      gai[j] += gi[j] - std::exp(yi[j]) * gs;
                  }
                },
                t.requires_grad(ia));
}

/// Scales every row to unit L2 norm. Throws DegenerateNorm for rows with norm <= kNormEpsilon.
inline Var l2_normalize_rows(Var a) {
  Tape& t = *a.tape();
  const DenseArray& x = a.value();
  DenseArray out(x.rows(), x.cols());
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double n = l2_norm(x.row(i));
    if (!(n > kNormEpsilon)) {
      throw DegenerateNorm("l2_normalize: row " + std::to_string(i) + " has norm " +
                           std::to_string(n));
    }
    norms[i] = n;
    auto yi = out.row(i);
    auto xi = x.row(i);
    for (std::size_t j = 0; j < xi.size(); ++j) yi[j] = xi[j] / n;
  }
  const std::size_t ia = a.id();
  return t.push(std::move(out), Op::kNormalize, {ia},
                [ia, norms = std::move(norms)](Tape& tp, std::size_t self) {
                  const DenseArray& g = tp.node_grad(self);
                  const DenseArray& y = tp.value(self);
                  DenseArray& ga = tp.grad_ref(ia);
                  const double f = tp.fault(Op::kNormalize);
                  for (std::size_t i = 0; i < y.rows(); ++i) {
                    auto yi = y.row(i);
                    auto gi = g.row(i);
                    auto gai = ga.row(i);
                    const double gy = dot(gi, yi);
                    for (std::size_t j = 0; j < yi.size(); ++j)
                      gai[j] += f * (gi[j] - yi[j] * gy) / norms[i];
                  }
                },
                t.requires_grad(ia));
}

/// Row-wise log-sum-exp, producing an m x 1 column. An optional keep mask
/// (row-major, same shape as the input, nonzero = include) drops entries from
/// the sum; every row must keep at least one entry.
inline Var log_sum_exp_rows(Var a, const std::vector<char>* keep = nullptr) {
  Tape& t = *a.tape();
  const DenseArray& x = a.value();
  require_finite(x, "log_sum_exp");
  if (keep && keep->size() != x.size()) throw ShapeMismatch("log_sum_exp: mask size");
  DenseArray out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < xi.size(); ++j)
      if (!keep || (*keep)[i * x.cols() + j]) mx = std::max(mx, xi[j]);
    if (!std::isfinite(mx)) throw ShapeMismatch("log_sum_exp: row with no entries");
    double s = 0.0;
    for (std::size_t j = 0; j < xi.size(); ++j)
      if (!keep || (*keep)[i * x.cols() + j]) s += std::exp(xi[j] - mx);
    out(i, 0) = mx + std::log(s);
  }
  std::vector<char> mask = keep ? *keep : std::vector<char>{};
  const std::size_t ia = a.id();
  return t.push(std::move(out), Op::kLogSumExp, {ia},
                [ia, mask = std::move(mask)](Tape& tp, std::size_t self) {
                  const DenseArray& g = tp.node_grad(self);
                  const DenseArray& y = tp.value(self);
                  const DenseArray& xv = tp.value(ia);
                  DenseArray& ga = tp.grad_ref(ia);
                  const std::size_t n = xv.cols();
                  for (std::size_t i = 0; i < xv.rows(); ++i) {
                    for (std::size_t j = 0; j < n; ++j) {
                      if (!mask.empty() && !mask[i * n + j]) continue;
                      ga(i, j) += g(i, 0) * std::exp(xv(i, j) - y(i, 0));
                    }
                  }
                },
                t.requires_grad(ia));
}

/// Sums each row: m x n -> m x 1.
inline Var sum_rows(Var a) {
  Tape& t = *a.tape();
  const DenseArray& x = a.value();
  DenseArray out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v;
    out(i, 0) = s;
  }
  const std::size_t ia = a.id();
  return t.push(std::move(out), Op::kSumRows, {ia},
                [ia](Tape& tp, std::size_t self) {
                  const DenseArray& g = tp.node_grad(self);
                  DenseArray& ga = tp.grad_ref(ia);
                  for (std::size_t i = 0; i < ga.rows(); ++i)
                    for (double& v : ga.row(i)) v += g(i, 0);
                },
                t.requires_grad(ia));
}

inline Var sum_all(Var a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return t.push(DenseArray::scalar(s), Op::kSumAll, {ia},
                [ia](Tape& tp, std::size_t self) {
                  const double g = tp.node_grad(self)[0];
                  for (double& v : tp.grad_ref(ia).data()) v += g;
                },
                t.requires_grad(ia));
}

inline Var mean_all(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum_all(a), 1.0 / n);
}

/// Horizontal concatenation [a | b] of arrays with equal row counts.
inline Var concat_cols(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const DenseArray& av = a.value();
  const DenseArray& bv = b.value();
  if (av.rows() != bv.rows()) throw ShapeMismatch("concat_cols: row counts differ");
  DenseArray out(av.rows(), av.cols() + bv.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    auto o = out.row(i);
    std::copy(av.row(i).begin(), av.row(i).end(), o.begin());
    std::copy(bv.row(i).begin(), bv.row(i).end(), o.begin() + av.cols());
  }
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t na = av.cols();
  return t.push(std::move(out), Op::kConcatCols, {ia, ib},
                [ia, ib, na](Tape& tp, std::size_t self) {
                  const DenseArray& g = tp.node_grad(self);
                  for (std::size_t i = 0; i < g.rows(); ++i) {
                    auto gi = g.row(i);
                    if (tp.requires_grad(ia)) {
                      auto d = tp.grad_ref(ia).row(i);
                      for (std::size_t j = 0; j < d.size(); ++j) d[j] += gi[j];
                    }
                    if (tp.requires_grad(ib)) {
                      auto d = tp.grad_ref(ib).row(i);
                      for (std::size_t j = 0; j < d.size(); ++j) d[j] += gi[na + j];
                    }
                  }
                },
                t.requires_grad(ia) || t.requires_grad(ib));
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

/// Row-wise dot products of two m x n arrays -> m x 1.
inline Var row_dot(Var a, Var b) { return sum_rows(mul(a, b)); }

// Single-vector spellings; a vector is a 1 x n row.
inline Var softmax(Var x) { return softmax_rows(x); }
inline Var l2_normalize(Var x) { return l2_normalize_rows(x); }
inline Var log_sum_exp(Var x) { return log_sum_exp_rows(x); }

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t entries_checked = 0;
  std::size_t entries_at_kinks = 0;  ///< skipped: the +-eps probe crossed a ReLU kink
};

/// Relative error with an absolute floor so exact-zero gradients compare sanely.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares Tape gradients of `build` against central differences over every
/// entry of `store` (or a seeded random subset of `max_entries` entries).
/// `build` must bind the store's parameters through Tape::parameter.
///
/// A central difference is meaningless where the loss is not differentiable,
/// so an entry whose probes move any ReLU input across zero is retried with
/// eps / 100 and, if it still crosses, counted in entries_at_kinks instead.
inline GradientCheckReport check_gradient(ParameterStore& store,
                                          const std::function<Var(Tape&)>& build,
                                          double eps = 1e-5, std::size_t max_entries = 10000,
                                          std::uint64_t seed = 0) {
  if (!(eps > 0.0 && eps < 1e-2)) throw Error("check_gradient: eps must lie in (0, 1e-2)");
  store.zero_grad();
  std::vector<bool> base_pattern;
  {
    Tape tape;
    Var loss = build(tape);
    base_pattern = tape.relu_pattern();
    tape.backward(loss);
  }
  struct Entry {
    Parameter* param;
    const std::string* name;
    std::size_t index;
  };
  std::vector<Entry> entries;
  for (auto& [name, p] : store)
    for (std::size_t i = 0; i < p.value.size(); ++i) entries.push_back({&p, &name, i});
  if (entries.size() > max_entries) {
    CounterRng rng = make_stream(seed, Stream::kGradCheck);
    for (std::size_t i = 0; i < max_entries; ++i) {
      const std::size_t j = i + rng.below(entries.size() - i);
      std::swap(entries[i], entries[j]);
    }
    entries.resize(max_entries);
  }
  bool crossed = false;
  auto eval = [&] {
    Tape tape;
    const double v = build(tape).item();
    crossed = crossed || tape.relu_pattern() != base_pattern;
    return v;
  };
  GradientCheckReport report;
  for (const auto& e : entries) {
    double& x = e.param->value[e.index];
    const double saved = x;
    double numeric = 0.0;
    for (double h : {eps, eps / 100.0}) {
      crossed = false;
      x = saved + h;
      const double fp = eval();
      x = saved - h;
      const double fm = eval();
      x = saved;
      numeric = (fp - fm) / (2.0 * h);
      if (!crossed) break;
    }
    if (crossed) {
      ++report.entries_at_kinks;
      continue;
    }
    const double analytic = e.param->grad[e.index];
    const double err = relative_error(analytic, numeric);
    if (err > report.max_relative_error || report.entries_checked == 0) {
      report.max_relative_error = err;
      report.worst_parameter = *e.name;
      report.worst_index = e.index;
      report.analytic_at_worst = analytic;
      report.numeric_at_worst = numeric;
    }
    ++report.entries_checked;
  }
  return report;
}

}  // namespace tcc
