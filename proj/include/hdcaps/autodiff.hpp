#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass. Each node owns its
// value, a lazily allocated gradient and a closure that pushes the node's
// gradient into its parents. The tape is templated on the scalar so the same
// network code runs in double (training) and long double (finite-difference
// reference evaluations).
//
// Non-differentiable decisions (ReLU masks, nearest-neighbour choices, KL
// clamps) are folded into a branch signature. Two forward passes with equal
// signatures evaluated the same smooth piece of the function.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hdcaps::ad {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Mat<S>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  S scalar() const { return value()(0, 0); }
};

template <typename S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Mat<S> value) { return push(std::move(value), false, nullptr); }
  Var<S> leaf(Mat<S> value) { return push(std::move(value), true, nullptr); }

  // Records an operation; the closure is dropped when no parent needs a gradient.
  Var<S> record(Mat<S> value, std::initializer_list<Var<S>> parents, Backward backward) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || nodes_[p.id].needs_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Mat<S>& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  // Gradient of the last backward() target with respect to node `id`.
  const Mat<S>& grad(int id) const {
    const Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      zero_cache_ = Mat<S>::Zero(n.value.rows(), n.value.cols());
      return zero_cache_;
    }
    return n.grad;
  }

  // Mutable gradient accumulator, allocated on first touch.
  Mat<S>& grad_acc(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var<S> target) {
    if (target.rows() != 1 || target.cols() != 1) {
      throw std::invalid_argument("backward: target must be a 1x1 scalar node");
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    grad_acc(target.id)(0, 0) = S(1);
    for (int id = target.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, id);
    }
  }

  void note_branch(std::uint64_t decision) {
    signature_ ^= decision + 0x9e3779b97f4a7c15ULL + (signature_ << 6) + (signature_ >> 2);
  }
  std::uint64_t branch_signature() const { return signature_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool needs_grad = false;
    Backward backward;
  };

  Var<S> push(Mat<S> value, bool needs, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat<S>(), needs, std::move(backward)});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::uint64_t signature_ = 0;
  mutable Mat<S> zero_cache_;
};

// Maps named double-precision parameter matrices onto tape leaves of scalar S.
// Leaves are created on first use and keyed by the parameter's address. An
// optional single-entry perturbation (applied after the cast to S) supports
// finite-difference probes without rounding the step through double.
template <typename S>
class Binder {
 public:
  Binder(Tape<S>& tape, bool track_gradients) : tape_(tape), track_(track_gradients) {}

  Var<S> operator()(const Eigen::MatrixXd& param) {
    auto it = vars_.find(&param);
    if (it != vars_.end()) return it->second;
    Mat<S> v = param.template cast<S>();
    if (&param == perturb_target_) v(perturb_row_, perturb_col_) += perturb_delta_;
    Var<S> var = track_ ? tape_.leaf(std::move(v)) : tape_.constant(std::move(v));
    vars_.emplace(&param, var);
    return var;
  }

  void perturb(const Eigen::MatrixXd& param, Eigen::Index row, Eigen::Index col, S delta) {
    perturb_target_ = &param;
    perturb_row_ = row;
    perturb_col_ = col;
    perturb_delta_ = delta;
  }

  // Gradient for a bound parameter; zero if it never entered the graph.
  Eigen::MatrixXd gradient(const Eigen::MatrixXd& param) const {
    auto it = vars_.find(&param);
    if (it == vars_.end()) return Eigen::MatrixXd::Zero(param.rows(), param.cols());
    return tape_.grad(it->second.id).template cast<double>();
  }

  Tape<S>& tape() { return tape_; }

 private:
  Tape<S>& tape_;
  bool track_;
  std::unordered_map<const Eigen::MatrixXd*, Var<S>> vars_;
  const Eigen::MatrixXd* perturb_target_ = nullptr;
  Eigen::Index perturb_row_ = 0;
  Eigen::Index perturb_col_ = 0;
  S perturb_delta_ = S(0);
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// Squared Euclidean distances between rows, brute force, ties to lowest index.
template <typename S>
void nearest_rows(const Mat<S>& from, const Mat<S>& to, std::vector<int>& index, Eigen::Matrix<S, Eigen::Dynamic, 1>& dist) {
  index.assign(static_cast<std::size_t>(from.rows()), 0);
  dist.resize(from.rows());
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    S best = std::numeric_limits<S>::infinity();
    int best_j = 0;
    for (Eigen::Index j = 0; j < to.rows(); ++j) {
      S d = (from.row(i) - to.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        best_j = static_cast<int>(j);
      }
    }
    index[static_cast<std::size_t>(i)] = best_j;
    dist(i) = best;
  }
}

}  // namespace detail

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Mat<S> out = a.value() * b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (t.needs_grad(a.id)) t.grad_acc(a.id).noalias() += g * t.value(b.id).transpose();
    if (t.needs_grad(b.id)) t.grad_acc(b.id).noalias() += t.value(a.id).transpose() * g;
  });
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Mat<S> out = a.value() + b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<S>& t, int self) {
    if (t.needs_grad(a.id)) t.grad_acc(a.id) += t.grad(self);
    if (t.needs_grad(b.id)) t.grad_acc(b.id) += t.grad(self);
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Mat<S> out = a.value() - b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<S>& t, int self) {
    if (t.needs_grad(a.id)) t.grad_acc(a.id) += t.grad(self);
    if (t.needs_grad(b.id)) t.grad_acc(b.id) -= t.grad(self);
  });
}

// a + 1·row, broadcasting a 1×n row over every row of a.
template <typename S>
Var<S> add_row(Var<S> a, Var<S> row) {
  detail::require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias shape mismatch");
  Mat<S> out = a.value().rowwise() + row.value().row(0);
  return a.tape->record(std::move(out), {a, row}, [a, row](Tape<S>& t, int self) {
    if (t.needs_grad(a.id)) t.grad_acc(a.id) += t.grad(self);
    if (t.needs_grad(row.id)) t.grad_acc(row.id) += t.grad(self).colwise().sum();
  });
}

template <typename S>
Var<S> affine(Var<S> x, Var<S> weight, Var<S> bias) {
  return add_row(matmul(x, weight), bias);
}

template <typename S>
Var<S> relu(Var<S> a) {
  Mat<S> out = a.value().cwiseMax(S(0));
  Tape<S>& tape = *a.tape;
  std::uint64_t mask = 1469598103934665603ULL;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    mask = (mask ^ static_cast<std::uint64_t>(a.value().data()[i] > S(0))) * 1099511628211ULL;
  }
  tape.note_branch(mask);
  return tape.record(std::move(out), {a}, [a](Tape<S>& t, int self) {
    const Mat<S>& x = t.value(a.id);
    t.grad_acc(a.id) += (x.array() > S(0)).select(t.grad(self), Mat<S>::Zero(x.rows(), x.cols()));
  });
}

namespace detail {

template <typename S>
Mat<S> softmax_rows_value(const Mat<S>& x) {
  Mat<S> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S shift = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - shift).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace detail

// Softmax along each row.
template <typename S>
Var<S> softmax_rows(Var<S> a) {
  Mat<S> out = detail::softmax_rows_value(a.value());
  return a.tape->record(std::move(out), {a}, [a](Tape<S>& t, int self) {
    const Mat<S>& y = t.value(self);
    const Mat<S>& g = t.grad(self);
    Eigen::Matrix<S, Eigen::Dynamic, 1> dot = (g.array() * y.array()).rowwise().sum();
    t.grad_acc(a.id).array() += y.array() * (g.colwise() - dot).array();
  });
}

// Softmax down each column (over points when rows are points).
template <typename S>
Var<S> softmax_cols(Var<S> a) {
  Mat<S> out = detail::softmax_rows_value<S>(a.value().transpose()).transpose();
  return a.tape->record(std::move(out), {a}, [a](Tape<S>& t, int self) {
    const Mat<S>& y = t.value(self);
    const Mat<S>& g = t.grad(self);
    Eigen::Matrix<S, 1, Eigen::Dynamic> dot = (g.array() * y.array()).colwise().sum();
    t.grad_acc(a.id).array() += y.array() * (g.rowwise() - dot).array();
  });
}

// Attention-weighted standardization of each column:
// (f - mu_w) / sqrt(var_w + eps), weights an X×1 column of nonnegative reals.
template <typename S>
Var<S> acn(Var<S> features, Var<S> weights, double eps) {
  detail::require(weights.cols() == 1 && weights.rows() == features.rows(), "acn: weights must be an X-vector");
  const Mat<S>& f = features.value();
  const S total = weights.value().sum();
  if (!(total > S(0)) || (weights.value().array() < S(0)).any()) {
    throw std::invalid_argument("acn: weights must be nonnegative with positive sum");
  }
  const Eigen::Matrix<S, Eigen::Dynamic, 1> w = weights.value().col(0) / total;
  const Eigen::Matrix<S, 1, Eigen::Dynamic> mu = w.transpose() * f;
  const Mat<S> d = f.rowwise() - mu;
  const Eigen::Matrix<S, 1, Eigen::Dynamic> var = w.transpose() * d.cwiseAbs2();
  const Eigen::Matrix<S, 1, Eigen::Dynamic> inv = (var.array() + S(eps)).rsqrt().matrix();
  Mat<S> out = d * inv.asDiagonal();
  return features.tape->record(std::move(out), {features, weights},
                               [features, weights, w, d, inv, total](Tape<S>& t, int self) {
    const Mat<S>& gy = t.grad(self);
    // var -> inv = (var+eps)^(-1/2): d inv / d var = -inv^3 / 2
    Eigen::Matrix<S, 1, Eigen::Dynamic> g_inv = (gy.array() * d.array()).colwise().sum().matrix();
    Eigen::Matrix<S, 1, Eigen::Dynamic> g_var = (g_inv.array() * inv.array().cube() * S(-0.5)).matrix();
    Mat<S> g_d = gy * inv.asDiagonal();
    g_d += (w * g_var).cwiseProduct(d) * S(2);
    Eigen::Matrix<S, 1, Eigen::Dynamic> g_mu = -g_d.colwise().sum();
    if (t.needs_grad(features.id)) t.grad_acc(features.id) += g_d + w * g_mu;
    if (t.needs_grad(weights.id)) {
      const Mat<S>& f0 = t.value(features.id);
      Eigen::Matrix<S, Eigen::Dynamic, 1> g_w = d.cwiseAbs2() * g_var.transpose() + f0 * g_mu.transpose();
      const S proj = g_w.dot(w);
      t.grad_acc(weights.id).col(0) += (g_w.array() - proj).matrix() / total;
    }
  });
}

// Row k of the result = sum_p A(p,k) V(p,:) / (sum_p A(p,k) + eps).
template <typename S>
Var<S> weighted_mean(Var<S> attention, Var<S> values, double eps) {
  detail::require(attention.rows() == values.rows(), "weighted_mean: row counts differ");
  const Mat<S>& a = attention.value();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> denom = (a.colwise().sum().transpose().array() + S(eps)).matrix();
  Mat<S> out = denom.cwiseInverse().asDiagonal() * (a.transpose() * values.value());
  return attention.tape->record(std::move(out), {attention, values}, [attention, values, denom](Tape<S>& t, int self) {
    const Mat<S> g_scaled = denom.cwiseInverse().asDiagonal() * t.grad(self);  // K×D
    if (t.needs_grad(values.id)) t.grad_acc(values.id).noalias() += t.value(attention.id) * g_scaled;
    if (t.needs_grad(attention.id)) {
      Eigen::Matrix<S, 1, Eigen::Dynamic> corr = (g_scaled.array() * t.value(self).array()).rowwise().sum().transpose();
      Mat<S> ga = t.value(values.id) * g_scaled.transpose();
      ga.rowwise() -= corr;
      t.grad_acc(attention.id) += ga;
    }
  });
}

namespace detail {

// Scale factor s(n) = n^2 / ((1+n^2)(n+eps)) and s'(n)/n for the squash map.
template <typename S>
std::pair<S, S> squash_factor(S n, double eps) {
  const S n2 = n * n;
  const S den = (S(1) + n2) * (n + S(eps));
  const S s = n2 / den;
  const S ds_over_n = (S(2) * den - n * (S(2) * n * (n + S(eps)) + (S(1) + n2))) / (den * den);
  return {s, ds_over_n};
}

}  // namespace detail

// Squash nonlinearity applied independently to consecutive column groups.
template <typename S>
Var<S> squash_groups(Var<S> a, int group_size, double eps) {
  detail::require(group_size >= 1 && a.cols() % group_size == 0, "squash_groups: width not a multiple of group size");
  const Mat<S>& x = a.value();
  Mat<S> out(x.rows(), x.cols());
  const Eigen::Index groups = x.cols() / group_size;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index g = 0; g < groups; ++g) {
      auto v = x.row(r).segment(g * group_size, group_size);
      const S s = detail::squash_factor<S>(v.norm(), eps).first;
      out.row(r).segment(g * group_size, group_size) = s * v;
    }
  }
  return a.tape->record(std::move(out), {a}, [a, group_size, eps](Tape<S>& t, int self) {
    const Mat<S>& xv = t.value(a.id);
    const Mat<S>& gy = t.grad(self);
    Mat<S>& gx = t.grad_acc(a.id);
    const Eigen::Index groups = xv.cols() / group_size;
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      for (Eigen::Index g = 0; g < groups; ++g) {
        auto v = xv.row(r).segment(g * group_size, group_size);
        auto gv = gy.row(r).segment(g * group_size, group_size);
        const auto [s, ds_over_n] = detail::squash_factor<S>(v.norm(), eps);
        gx.row(r).segment(g * group_size, group_size) += s * gv + (gv.dot(v) * ds_over_n) * v;
      }
    }
  });
}

template <typename S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  detail::require(a.rows() == b.rows(), "concat_cols: row counts differ");
  Mat<S> out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index split = a.cols();
  return a.tape->record(std::move(out), {a, b}, [a, b, split](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    if (t.needs_grad(a.id)) t.grad_acc(a.id) += g.leftCols(split);
    if (t.needs_grad(b.id)) t.grad_acc(b.id) += g.rightCols(g.cols() - split);
  });
}

// K×(m·D) → (K·m)×D; output row k·m + j is segment j of input row k.
template <typename S>
Var<S> split_rows(Var<S> a, int parts) {
  detail::require(parts >= 1 && a.cols() % parts == 0, "split_rows: width not divisible");
  const Eigen::Index width = a.cols() / parts;
  const Mat<S>& x = a.value();
  Mat<S> out(x.rows() * parts, width);
  for (Eigen::Index k = 0; k < x.rows(); ++k)
    for (int j = 0; j < parts; ++j) out.row(k * parts + j) = x.row(k).segment(j * width, width);
  return a.tape->record(std::move(out), {a}, [a, parts, width](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    Mat<S>& gx = t.grad_acc(a.id);
    for (Eigen::Index k = 0; k < gx.rows(); ++k)
      for (int j = 0; j < parts; ++j) gx.row(k).segment(j * width, width) += g.row(k * parts + j);
  });
}

// Each row repeated `times` times consecutively.
template <typename S>
Var<S> repeat_rows(Var<S> a, int times) {
  detail::require(times >= 1, "repeat_rows: times must be positive");
  const Mat<S>& x = a.value();
  Mat<S> out(x.rows() * times, x.cols());
  for (Eigen::Index k = 0; k < x.rows(); ++k)
    for (int j = 0; j < times; ++j) out.row(k * times + j) = x.row(k);
  return a.tape->record(std::move(out), {a}, [a, times](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    Mat<S>& gx = t.grad_acc(a.id);
    for (Eigen::Index k = 0; k < gx.rows(); ++k)
      for (int j = 0; j < times; ++j) gx.row(k) += g.row(k * times + j);
  });
}

// (1/rows) Σ_r ‖a_r − b_r‖².
template <typename S>
Var<S> mean_row_sq_dist(Var<S> a, Var<S> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols() && a.rows() > 0, "mean_row_sq_dist: shape mismatch");
  Mat<S> out(1, 1);
  out(0, 0) = (a.value() - b.value()).squaredNorm() / S(a.rows());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<S>& t, int self) {
    const S g = t.grad(self)(0, 0) * S(2) / S(t.value(a.id).rows());
    Mat<S> diff = t.value(a.id) - t.value(b.id);
    if (t.needs_grad(a.id)) t.grad_acc(a.id) += g * diff;
    if (t.needs_grad(b.id)) t.grad_acc(b.id) -= g * diff;
  });
}

// Symmetric chamfer distance with per-set averaging of squared nearest distances.
template <typename S>
Var<S> chamfer(Var<S> p, Var<S> q) {
  detail::require(p.cols() == q.cols(), "chamfer: dimension mismatch");
  detail::require(p.rows() > 0 && q.rows() > 0, "chamfer: empty point set");
  std::vector<int> p_to_q;
  std::vector<int> q_to_p;
  Eigen::Matrix<S, Eigen::Dynamic, 1> dp;
  Eigen::Matrix<S, Eigen::Dynamic, 1> dq;
  detail::nearest_rows<S>(p.value(), q.value(), p_to_q, dp);
  detail::nearest_rows<S>(q.value(), p.value(), q_to_p, dq);
  Tape<S>& tape = *p.tape;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int i : p_to_q) h = (h ^ static_cast<std::uint64_t>(i)) * 1099511628211ULL;
  for (int i : q_to_p) h = (h ^ static_cast<std::uint64_t>(i + 7919)) * 1099511628211ULL;
  tape.note_branch(h);
  Mat<S> out(1, 1);
  out(0, 0) = dp.mean() + dq.mean();
  return tape.record(std::move(out), {p, q}, [p, q, p_to_q = std::move(p_to_q), q_to_p = std::move(q_to_p)](Tape<S>& t, int self) {
    const S g = t.grad(self)(0, 0);
    const Mat<S>& pv = t.value(p.id);
    const Mat<S>& qv = t.value(q.id);
    const S cp = S(2) * g / S(pv.rows());
    const S cq = S(2) * g / S(qv.rows());
    const bool gp = t.needs_grad(p.id);
    const bool gq = t.needs_grad(q.id);
    for (Eigen::Index i = 0; i < pv.rows(); ++i) {
      const auto j = p_to_q[static_cast<std::size_t>(i)];
      Eigen::Matrix<S, 1, Eigen::Dynamic> diff = pv.row(i) - qv.row(j);
      if (gp) t.grad_acc(p.id).row(i) += cp * diff;
      if (gq) t.grad_acc(q.id).row(j) -= cp * diff;
    }
    for (Eigen::Index j = 0; j < qv.rows(); ++j) {
      const auto i = q_to_p[static_cast<std::size_t>(j)];
      Eigen::Matrix<S, 1, Eigen::Dynamic> diff = qv.row(j) - pv.row(i);
      if (gq) t.grad_acc(q.id).row(j) += cq * diff;
      if (gp) t.grad_acc(p.id).row(i) -= cq * diff;
    }
  });
}

// Mean over rows of KL(a_r ‖ b_r) after clamping at `floor` and renormalizing.
template <typename S>
Var<S> kl_rows(Var<S> a, Var<S> b, double floor) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols() && a.rows() > 0, "kl_rows: shape mismatch");
  Tape<S>& tape = *a.tape;
  auto clamp_norm = [&tape, floor](Var<S> x) {
    const Mat<S>& v = x.value();
    std::uint64_t h = 0x84222325cbf29ce4ULL;
    for (Eigen::Index i = 0; i < v.size(); ++i) h = (h ^ static_cast<std::uint64_t>(v.data()[i] > S(floor))) * 1099511628211ULL;
    tape.note_branch(h);
    Mat<S> c = v.cwiseMax(S(floor));
    Eigen::Matrix<S, Eigen::Dynamic, 1> sums = c.rowwise().sum();
    Mat<S> out = sums.cwiseInverse().asDiagonal() * c;
    return tape.record(std::move(out), {x}, [x, floor](Tape<S>& t, int self) {
      const Mat<S>& raw = t.value(x.id);
      const Mat<S>& y = t.value(self);
      const Mat<S>& g = t.grad(self);
      Mat<S> cl = raw.cwiseMax(S(floor));
      Eigen::Matrix<S, Eigen::Dynamic, 1> sums = cl.rowwise().sum();
      Eigen::Matrix<S, Eigen::Dynamic, 1> dot = (g.array() * y.array()).rowwise().sum();
      Mat<S> gc = sums.cwiseInverse().asDiagonal() * Mat<S>(g.colwise() - dot);
      t.grad_acc(x.id) += (raw.array() > S(floor)).select(gc, Mat<S>::Zero(raw.rows(), raw.cols()));
    });
  };
  Var<S> pa = clamp_norm(a);
  Var<S> pb = clamp_norm(b);
  const Mat<S>& av = pa.value();
  const Mat<S>& bv = pb.value();
  Mat<S> out(1, 1);
  out(0, 0) = (av.array() * (av.array().log() - bv.array().log())).sum() / S(av.rows());
  return tape.record(std::move(out), {pa, pb}, [pa, pb](Tape<S>& t, int self) {
    const Mat<S>& av = t.value(pa.id);
    const Mat<S>& bv = t.value(pb.id);
    const S g = t.grad(self)(0, 0) / S(av.rows());
    if (t.needs_grad(pa.id)) t.grad_acc(pa.id).array() += g * ((av.array().log() - bv.array().log()) + S(1));
    if (t.needs_grad(pb.id)) t.grad_acc(pb.id).array() -= g * (av.array() / bv.array());
  });
}

// Σ_i coeffs[i] · terms[i] over 1×1 nodes.
template <typename S>
Var<S> weighted_sum(const std::vector<Var<S>>& terms, const std::vector<double>& coeffs) {
  detail::require(!terms.empty() && terms.size() == coeffs.size(), "weighted_sum: size mismatch");
  Tape<S>& tape = *terms.front().tape;
  Mat<S> out = Mat<S>::Zero(1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    detail::require(terms[i].rows() == 1 && terms[i].cols() == 1, "weighted_sum: terms must be scalars");
    out(0, 0) += S(coeffs[i]) * terms[i].scalar();
  }
  // record() takes a fixed parent list; anchor on any gradient-carrying term
  // and route gradients by the captured ids.
  Var<S> anchor = terms.front();
  for (const auto& v : terms)
    if (tape.needs_grad(v.id)) anchor = v;
  return tape.record(std::move(out), {anchor}, [terms, coeffs](Tape<S>& t, int self) {
    const S g = t.grad(self)(0, 0);
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (t.needs_grad(terms[i].id)) t.grad_acc(terms[i].id)(0, 0) += g * S(coeffs[i]);
  });
}

}  // namespace hdcaps::ad
