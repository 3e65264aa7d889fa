#pragma once

// Dense double-precision tensors with reverse-mode autodiff on an explicit
// single-use tape. Row-major storage throughout; matrix products are backed
// by Eigen, everything else is plain loops.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "coverclip/errors.hpp"
#include "coverclip/rng.hpp"

namespace coverclip {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += "x";
  }
  return out + "]";
}

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;

  std::size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data.assign(numel(n->shape), 0.0);
    return Tensor(n);
  }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node_->data.begin(), t.node_->data.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  static Tensor from_data(std::vector<int> shape, std::vector<double> data) {
    if (numel(shape) != data.size())
      throw ShapeError("from_data: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return Tensor(n);
  }

  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    Tensor t = zeros(std::move(shape));
    for (double& v : t.node_->data) v = rng.normal(0.0, stddev);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->data.size(); }

  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& mutable_data() { return node_->data; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  void zero_grad() { node_->grad.clear(); }

  double value() const {
    if (size() != 1)
      throw ContractError("value() on non-scalar tensor " + shape_str(node_->shape));
    return node_->data[0];
  }

  Tensor clone() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->data = node_->data;
    n->requires_grad = node_->requires_grad;
    return Tensor(n);
  }

  std::shared_ptr<TensorNode> node() const { return node_; }

  static std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeError("non-positive dimension in " + shape_str(shape));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Single-use reverse-mode tape. Ops append their backward closures in forward
// order; backward() walks them in exact reverse order once, then the graph is
// dead until clear().
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  class Scope {
   public:
    explicit Scope(Graph& g) : prev_(current_) { current_ = &g; }
    ~Scope() { current_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph* prev_;
  };

  static Graph* current() { return current_; }

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  std::size_t num_ops() const { return ops_.size(); }

  void backward(const Tensor& loss) {
    if (consumed_) throw ContractError("backward called twice on the same graph");
    if (loss.size() != 1)
      throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    consumed_ = true;
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (std::size_t i = ops_.size(); i-- > 0;) {
      ops_[i]();
      ops_[i] = nullptr;  // release saved activations as we go
    }
  }

  bool consumed() const { return consumed_; }

  void clear() {
    ops_.clear();
    consumed_ = false;
  }

 private:
  static inline thread_local Graph* current_ = nullptr;
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

namespace detail {

inline bool recording(std::initializer_list<const Tensor*> inputs) {
  if (Graph::current() == nullptr) return false;
  for (const Tensor* t : inputs)
    if ((*t).requires_grad()) return true;
  return false;
}

inline Tensor make_output(std::vector<int> shape, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(requires_grad);
  return t;
}

// Output grad may never have been touched if the loss did not depend on it.
inline bool has_out_grad(const std::shared_ptr<TensorNode>& n) { return !n->grad.empty(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and arithmetic ops
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  bool rec = detail::recording({&a, &b});
  Tensor out = detail::make_output(a.shape(), rec);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] + b.data()[i];
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Graph::current()->record([an, bn, on] {
      if (!detail::has_out_grad(on)) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  bool rec = detail::recording({&a, &b});
  Tensor out = detail::make_output(a.shape(), rec);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] * b.data()[i];
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Graph::current()->record([an, bn, on] {
      if (!detail::has_out_grad(on)) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->data[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  bool rec = detail::recording({&a});
  Tensor out = detail::make_output(a.shape(), rec);
  for (std::size_t i = 0; i < a.size(); ++i) out.mutable_data()[i] = a.data()[i] * c;
  if (rec) {
    auto an = a.node(), on = out.node();
    Graph::current()->record([an, on, c] {
      if (!detail::has_out_grad(on) || !an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * c;
    });
  }
  return out;
}

// out = x * s[0] with s a 1-element tensor (used for the learned logit scale).
inline Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("mul_scalar_tensor: scale must be a 1-element tensor");
  bool rec = detail::recording({&x, &s});
  Tensor out = detail::make_output(x.shape(), rec);
  const double sv = s.data()[0];
  for (std::size_t i = 0; i < x.size(); ++i) out.mutable_data()[i] = x.data()[i] * sv;
  if (rec) {
    auto xn = x.node(), sn = s.node(), on = out.node();
    Graph::current()->record([xn, sn, on] {
      if (!detail::has_out_grad(on)) return;
      const double sv = sn->data[0];
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * sv;
      }
      if (sn->requires_grad) {
        sn->ensure_grad();
        double acc = 0.0;
        for (std::size_t i = 0; i < on->grad.size(); ++i) acc += on->grad[i] * xn->data[i];
        sn->grad[0] += acc;
      }
    });
  }
  return out;
}

// s = min(exp(p), cap) for a 1-element tensor; gradient is zero when clamped.
inline Tensor exp_clamped(const Tensor& p, double cap) {
  if (p.size() != 1) throw ShapeError("exp_clamped: expects a 1-element tensor");
  bool rec = detail::recording({&p});
  Tensor out = detail::make_output({1}, rec);
  const double e = std::exp(p.data()[0]);
  const bool clamped = e > cap;
  out.mutable_data()[0] = clamped ? cap : e;
  if (rec) {
    auto pn = p.node(), on = out.node();
    Graph::current()->record([pn, on, e, clamped] {
      if (!detail::has_out_grad(on) || !pn->requires_grad) return;
      if (clamped) return;
      pn->ensure_grad();
      pn->grad[0] += on->grad[0] * e;
    });
  }
  return out;
}

inline Tensor sum(const Tensor& x) {
  bool rec = detail::recording({&x});
  Tensor out = detail::make_output({1}, rec);
  out.mutable_data()[0] = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  if (rec) {
    auto xn = x.node(), on = out.node();
    Graph::current()->record([xn, on] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      for (double& g : xn->grad) g += on->grad[0];
    });
  }
  return out;
}

// total = sum_i weights[i] * scalars[i]
inline Tensor weighted_sum(const std::vector<std::pair<double, Tensor>>& terms) {
  bool any_grad = false;
  double v = 0.0;
  for (const auto& [w, t] : terms) {
    if (t.size() != 1) throw ShapeError("weighted_sum: all terms must be scalars");
    v += w * t.data()[0];
    any_grad = any_grad || t.requires_grad();
  }
  bool rec = Graph::current() != nullptr && any_grad;
  Tensor out = detail::make_output({1}, rec);
  out.mutable_data()[0] = v;
  if (rec) {
    std::vector<std::pair<double, std::shared_ptr<TensorNode>>> nodes;
    nodes.reserve(terms.size());
    for (const auto& [w, t] : terms) nodes.emplace_back(w, t.node());
    auto on = out.node();
    Graph::current()->record([nodes, on] {
      if (!detail::has_out_grad(on)) return;
      for (const auto& [w, n] : nodes) {
        if (!n->requires_grad) continue;
        n->ensure_grad();
        n->grad[0] += w * on->grad[0];
      }
    });
  }
  return out;
}

inline Tensor gelu(const Tensor& x) {
  bool rec = detail::recording({&x});
  Tensor out = detail::make_output(x.shape(), rec);
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.mutable_data()[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  if (rec) {
    auto xn = x.node(), on = out.node();
    Graph::current()->record([xn, on] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      constexpr double inv_sqrt2 = 0.7071067811865475244;
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const double v = xn->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        xn->grad[i] += on->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
                     bool trans_b = false, double alpha = 1.0) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ShapeError("matmul: expects 2-d tensors, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const int m = trans_a ? a.dim(1) : a.dim(0);
  const int ka = trans_a ? a.dim(0) : a.dim(1);
  const int kb = trans_b ? b.dim(1) : b.dim(0);
  const int n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb)
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                     (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                     (trans_b ? "^T" : ""));
  bool rec = detail::recording({&a, &b});
  Tensor out = detail::make_output({m, n}, rec);

  ECMap am(a.data().data(), a.dim(0), a.dim(1));
  ECMap bm(b.data().data(), b.dim(0), b.dim(1));
  EMap om(out.mutable_data().data(), m, n);
  if (!trans_a && !trans_b)
    om.noalias() = alpha * (am * bm);
  else if (trans_a && !trans_b)
    om.noalias() = alpha * (am.transpose() * bm);
  else if (!trans_a && trans_b)
    om.noalias() = alpha * (am * bm.transpose());
  else
    om.noalias() = alpha * (am.transpose() * bm.transpose());

  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Graph::current()->record([an, bn, on, trans_a, trans_b, alpha, m, n] {
      if (!detail::has_out_grad(on)) return;
      ECMap go(on->grad.data(), m, n);
      ECMap am(an->data.data(), an->shape[0], an->shape[1]);
      ECMap bm(bn->data.data(), bn->shape[0], bn->shape[1]);
      if (an->requires_grad) {
        an->ensure_grad();
        EMap ga(an->grad.data(), an->shape[0], an->shape[1]);
        if (!trans_a && !trans_b)
          ga.noalias() += alpha * (go * bm.transpose());
        else if (trans_a && !trans_b)
          ga.noalias() += alpha * (bm * go.transpose());
        else if (!trans_a && trans_b)
          ga.noalias() += alpha * (go * bm);
        else
          ga.noalias() += alpha * (bm.transpose() * go.transpose());
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        EMap gb(bn->grad.data(), bn->shape[0], bn->shape[1]);
        if (!trans_a && !trans_b)
          gb.noalias() += alpha * (am.transpose() * go);
        else if (trans_a && !trans_b)
          gb.noalias() += alpha * (am * go);
        else if (!trans_a && trans_b)
          gb.noalias() += alpha * (go.transpose() * am);
        else
          gb.noalias() += alpha * (go.transpose() * am.transpose());
      }
    });
  }
  return out;
}

// Batched matmul over the leading dimension: [B,m,k] x [B,k,n] -> [B,m,n].
inline Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false, double alpha = 1.0) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0))
    throw ShapeError("bmm: expects matching 3-d tensors, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const int B = a.dim(0);
  const int m = a.dim(1);
  const int k = a.dim(2);
  const int kb = trans_b ? b.dim(2) : b.dim(1);
  const int n = trans_b ? b.dim(1) : b.dim(2);
  if (k != kb)
    throw ShapeError("bmm: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + (trans_b ? "^T" : ""));
  bool rec = detail::recording({&a, &b});
  Tensor out = detail::make_output({B, m, n}, rec);
  const std::size_t sa = static_cast<std::size_t>(m) * k;
  const std::size_t sb = static_cast<std::size_t>(b.dim(1)) * b.dim(2);
  const std::size_t so = static_cast<std::size_t>(m) * n;
  for (int i = 0; i < B; ++i) {
    ECMap am(a.data().data() + i * sa, m, k);
    ECMap bm(b.data().data() + i * sb, b.dim(1), b.dim(2));
    EMap om(out.mutable_data().data() + i * so, m, n);
    if (trans_b)
      om.noalias() = alpha * (am * bm.transpose());
    else
      om.noalias() = alpha * (am * bm);
  }
  if (rec) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Graph::current()->record([an, bn, on, trans_b, alpha, B, m, k, n, sa, sb, so] {
      if (!detail::has_out_grad(on)) return;
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (int i = 0; i < B; ++i) {
        ECMap go(on->grad.data() + i * so, m, n);
        ECMap am(an->data.data() + i * sa, m, k);
        ECMap bm(bn->data.data() + i * sb, bn->shape[1], bn->shape[2]);
        if (an->requires_grad) {
          EMap ga(an->grad.data() + i * sa, m, k);
          if (trans_b)
            ga.noalias() += alpha * (go * bm);
          else
            ga.noalias() += alpha * (go * bm.transpose());
        }
        if (bn->requires_grad) {
          EMap gb(bn->grad.data() + i * sb, bn->shape[1], bn->shape[2]);
          if (trans_b)
            gb.noalias() += alpha * (go.transpose() * am);
          else
            gb.noalias() += alpha * (am.transpose() * go);
        }
      }
    });
  }
  return out;
}

// y = x W + b over the last axis; x: [...,in], W: [in,out], b: [out] or undefined.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.ndim() != 2) throw ShapeError("affine: weight must be 2-d");
  const int in = w.dim(0);
  const int out_dim = w.dim(1);
  if (x.dim(x.ndim() - 1) != in)
    throw ShapeError("affine: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != out_dim))
    throw ShapeError("affine: bias must be [out]");
  const int rows = static_cast<int>(x.size()) / in;

  bool rec = b.defined() ? detail::recording({&x, &w, &b}) : detail::recording({&x, &w});
  std::vector<int> out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor out = detail::make_output(out_shape, rec);

  ECMap xm(x.data().data(), rows, in);
  ECMap wm(w.data().data(), in, out_dim);
  EMap om(out.mutable_data().data(), rows, out_dim);
  om.noalias() = xm * wm;
  if (b.defined()) {
    Eigen::Map<const Eigen::RowVectorXd> bv(b.data().data(), out_dim);
    om.rowwise() += bv;
  }

  if (rec) {
    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = b.defined() ? b.node() : nullptr;
    Graph::current()->record([xn, wn, bn, on, rows, in, out_dim] {
      if (!detail::has_out_grad(on)) return;
      ECMap go(on->grad.data(), rows, out_dim);
      if (xn->requires_grad) {
        xn->ensure_grad();
        EMap gx(xn->grad.data(), rows, in);
        ECMap wm(wn->data.data(), in, out_dim);
        gx.noalias() += go * wm.transpose();
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        EMap gw(wn->grad.data(), in, out_dim);
        ECMap xm(xn->data.data(), rows, in);
        gw.noalias() += xm.transpose() * go;
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        Eigen::Map<Eigen::RowVectorXd> gb(bn->grad.data(), out_dim);
        gb.noalias() += go.colwise().sum();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and activation over the last axis
// ---------------------------------------------------------------------------

inline Tensor softmax_lastdim(const Tensor& x) {
  if (x.ndim() < 1) throw ShapeError("softmax: needs at least 1-d input");
  const int n = x.dim(x.ndim() - 1);
  const int rows = static_cast<int>(x.size()) / n;
  bool rec = detail::recording({&x});
  Tensor out = detail::make_output(x.shape(), rec);
  for (int r = 0; r < rows; ++r) {
    const double* xp = x.data().data() + static_cast<std::size_t>(r) * n;
    double* op = out.mutable_data().data() + static_cast<std::size_t>(r) * n;
    double mx = xp[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, xp[i]);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) {
      op[i] = std::exp(xp[i] - mx);
      denom += op[i];
    }
    for (int i = 0; i < n; ++i) op[i] /= denom;
  }
  if (rec) {
    auto xn = x.node(), on = out.node();
    Graph::current()->record([xn, on, rows, n] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      for (int r = 0; r < rows; ++r) {
        const double* y = on->data.data() + static_cast<std::size_t>(r) * n;
        const double* gy = on->grad.data() + static_cast<std::size_t>(r) * n;
        double* gx = xn->grad.data() + static_cast<std::size_t>(r) * n;
        double dot = 0.0;
        for (int i = 0; i < n; ++i) dot += gy[i] * y[i];
        for (int i = 0; i < n; ++i) gx[i] += y[i] * (gy[i] - dot);
      }
    });
  }
  return out;
}

// Softmax over attention scores [b*h, Lq, Lk] with an optional per-batch key
// validity mask [b, Lk] (1 = attend, 0 = padding).
inline Tensor masked_softmax_scores(const Tensor& scores, const std::vector<std::uint8_t>& key_valid,
                                    int batch, int heads) {
  if (scores.ndim() != 3) throw ShapeError("masked_softmax_scores: expects [b*h, Lq, Lk]");
  const int bh = scores.dim(0);
  const int lq = scores.dim(1);
  const int lk = scores.dim(2);
  if (bh != batch * heads) throw ShapeError("masked_softmax_scores: b*h mismatch");
  if (key_valid.size() != static_cast<std::size_t>(batch) * lk)
    throw ShapeError("masked_softmax_scores: mask size mismatch");
  bool rec = detail::recording({&scores});
  Tensor out = detail::make_output(scores.shape(), rec);
  for (int g = 0; g < bh; ++g) {
    const std::uint8_t* mask = key_valid.data() + static_cast<std::size_t>(g / heads) * lk;
    for (int q = 0; q < lq; ++q) {
      const std::size_t off = (static_cast<std::size_t>(g) * lq + q) * lk;
      const double* xp = scores.data().data() + off;
      double* op = out.mutable_data().data() + off;
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < lk; ++i)
        if (mask[i]) mx = std::max(mx, xp[i]);
      double denom = 0.0;
      for (int i = 0; i < lk; ++i) {
        op[i] = mask[i] ? std::exp(xp[i] - mx) : 0.0;
        denom += op[i];
      }
      for (int i = 0; i < lk; ++i) op[i] /= denom;
    }
  }
  if (rec) {
    auto xn = scores.node(), on = out.node();
    const int rows = bh * lq;
    Graph::current()->record([xn, on, rows, lk] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      for (int r = 0; r < rows; ++r) {
        const double* y = on->data.data() + static_cast<std::size_t>(r) * lk;
        const double* gy = on->grad.data() + static_cast<std::size_t>(r) * lk;
        double* gx = xn->grad.data() + static_cast<std::size_t>(r) * lk;
        double dot = 0.0;
        for (int i = 0; i < lk; ++i) dot += gy[i] * y[i];
        for (int i = 0; i < lk; ++i) gx[i] += y[i] * (gy[i] - dot);
      }
    });
  }
  return out;
}

inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        double eps = 1e-5) {
  const int d = x.dim(x.ndim() - 1);
  if (gamma.size() != static_cast<std::size_t>(d) || beta.size() != static_cast<std::size_t>(d))
    throw ShapeError("layernorm: gamma/beta must be [d]");
  if (eps <= 0.0) throw ConfigError("layernorm: eps must be positive");
  const int rows = static_cast<int>(x.size()) / d;
  bool rec = detail::recording({&x, &gamma, &beta});
  Tensor out = detail::make_output(x.shape(), rec);

  // Saved for backward: normalized values and inverse std per row.
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (int r = 0; r < rows; ++r) {
    const double* xp = x.data().data() + static_cast<std::size_t>(r) * d;
    double* op = out.mutable_data().data() + static_cast<std::size_t>(r) * d;
    double* hp = xhat->data() + static_cast<std::size_t>(r) * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += xp[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      const double c = xp[i] - mean;
      var += c * c;
    }
    var /= d;
    const double istd = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = istd;
    for (int i = 0; i < d; ++i) {
      hp[i] = (xp[i] - mean) * istd;
      op[i] = gamma.data()[i] * hp[i] + beta.data()[i];
    }
  }
  if (rec) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    Graph::current()->record([xn, gn, bn, on, xhat, inv_std, rows, d] {
      if (!detail::has_out_grad(on)) return;
      if (gn->requires_grad) gn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      if (xn->requires_grad) xn->ensure_grad();
      for (int r = 0; r < rows; ++r) {
        const double* gy = on->grad.data() + static_cast<std::size_t>(r) * d;
        const double* hp = xhat->data() + static_cast<std::size_t>(r) * d;
        if (gn->requires_grad || bn->requires_grad) {
          for (int i = 0; i < d; ++i) {
            if (gn->requires_grad) gn->grad[i] += gy[i] * hp[i];
            if (bn->requires_grad) bn->grad[i] += gy[i];
          }
        }
        if (xn->requires_grad) {
          double* gx = xn->grad.data() + static_cast<std::size_t>(r) * d;
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (int i = 0; i < d; ++i) {
            const double dh = gy[i] * gn->data[i];
            mean_dh += dh;
            mean_dh_h += dh * hp[i];
          }
          mean_dh /= d;
          mean_dh_h /= d;
          const double istd = (*inv_std)[r];
          for (int i = 0; i < d; ++i) {
            const double dh = gy[i] * gn->data[i];
            gx[i] += istd * (dh - mean_dh - hp[i] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

// Rows scaled to unit Euclidean norm; zero rows fall back to an eps floor.
inline Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12) {
  const int d = x.dim(x.ndim() - 1);
  const int rows = static_cast<int>(x.size()) / d;
  bool rec = detail::recording({&x});
  Tensor out = detail::make_output(x.shape(), rec);
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (int r = 0; r < rows; ++r) {
    const double* xp = x.data().data() + static_cast<std::size_t>(r) * d;
    double* op = out.mutable_data().data() + static_cast<std::size_t>(r) * d;
    double sq = 0.0;
    for (int i = 0; i < d; ++i) sq += xp[i] * xp[i];
    const double norm = std::max(std::sqrt(sq), eps);
    (*norms)[r] = norm;
    for (int i = 0; i < d; ++i) op[i] = xp[i] / norm;
  }
  if (rec) {
    auto xn = x.node(), on = out.node();
    Graph::current()->record([xn, on, norms, rows, d] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      for (int r = 0; r < rows; ++r) {
        const double* y = on->data.data() + static_cast<std::size_t>(r) * d;
        const double* gy = on->grad.data() + static_cast<std::size_t>(r) * d;
        double* gx = xn->grad.data() + static_cast<std::size_t>(r) * d;
        double dot = 0.0;
        for (int i = 0; i < d; ++i) dot += gy[i] * y[i];
        const double inv_n = 1.0 / (*norms)[r];
        for (int i = 0; i < d; ++i) gx[i] += inv_n * (gy[i] - y[i] * dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean over rows of -log softmax(logits)[target], via log-sum-exp.
inline Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const int> targets) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy_from_logits: expects [b, n]");
  const int b = logits.dim(0);
  const int n = logits.dim(1);
  if (targets.size() != static_cast<std::size_t>(b))
    throw ShapeError("cross_entropy_from_logits: one target per row required");
  for (int r = 0; r < b; ++r)
    if (targets[r] < 0 || targets[r] >= n)
      throw IndexError("cross_entropy_from_logits: target " + std::to_string(targets[r]) +
                       " out of range [0," + std::to_string(n) + ") at row " + std::to_string(r));
  bool rec = detail::recording({&logits});
  Tensor out = detail::make_output({1}, rec);
  double total = 0.0;
  for (int r = 0; r < b; ++r) {
    const double* xp = logits.data().data() + static_cast<std::size_t>(r) * n;
    double mx = xp[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, xp[i]);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) denom += std::exp(xp[i] - mx);
    total += mx + std::log(denom) - xp[targets[r]];
  }
  out.mutable_data()[0] = total / b;
  if (rec) {
    auto xn = logits.node(), on = out.node();
    std::vector<int> tgt(targets.begin(), targets.end());
    Graph::current()->record([xn, on, tgt, b, n] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      const double g = on->grad[0] / b;
      for (int r = 0; r < b; ++r) {
        const double* xp = xn->data.data() + static_cast<std::size_t>(r) * n;
        double* gx = xn->grad.data() + static_cast<std::size_t>(r) * n;
        double mx = xp[0];
        for (int i = 1; i < n; ++i) mx = std::max(mx, xp[i]);
        double denom = 0.0;
        for (int i = 0; i < n; ++i) denom += std::exp(xp[i] - mx);
        for (int i = 0; i < n; ++i) {
          const double p = std::exp(xp[i] - mx) / denom;
          gx[i] += g * (p - (i == tgt[r] ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

// Mean binary cross-entropy with logits, numerically stable formulation.
inline Tensor bce_with_logits(const Tensor& logits, std::span<const std::uint8_t> labels) {
  if (logits.ndim() != 1) throw ShapeError("bce_with_logits: expects [b]");
  const int b = logits.dim(0);
  if (labels.size() != static_cast<std::size_t>(b))
    throw ShapeError("bce_with_logits: one label per logit required");
  bool rec = detail::recording({&logits});
  Tensor out = detail::make_output({1}, rec);
  double total = 0.0;
  for (int r = 0; r < b; ++r) {
    const double z = logits.data()[r];
    const double y = labels[r] ? 1.0 : 0.0;
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  out.mutable_data()[0] = total / b;
  if (rec) {
    auto xn = logits.node(), on = out.node();
    std::vector<std::uint8_t> lab(labels.begin(), labels.end());
    Graph::current()->record([xn, on, lab, b] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      const double g = on->grad[0] / b;
      for (int r = 0; r < b; ++r) {
        const double z = xn->data[r];
        const double sig = 1.0 / (1.0 + std::exp(-z));
        xn->grad[r] += g * (sig - (lab[r] ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops (gathers, reshapes, token plumbing)
// ---------------------------------------------------------------------------

inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, int batch,
                               int seq_len) {
  if (table.ndim() != 2) throw ShapeError("embedding_lookup: table must be [V, d]");
  const int v = table.dim(0);
  const int d = table.dim(1);
  if (ids.size() != static_cast<std::size_t>(batch) * seq_len)
    throw ShapeError("embedding_lookup: ids size mismatch");
  for (int id : ids)
    if (id < 0 || id >= v)
      throw IndexError("embedding_lookup: token id " + std::to_string(id) +
                       " out of range [0," + std::to_string(v) + ")");
  bool rec = detail::recording({&table});
  Tensor out = detail::make_output({batch, seq_len, d}, rec);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.mutable_data().data() + i * d);
  if (rec) {
    auto tn = table.node(), on = out.node();
    Graph::current()->record([tn, on, ids, d] {
      if (!detail::has_out_grad(on) || !tn->requires_grad) return;
      tn->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* gy = on->grad.data() + i * d;
        double* gt = tn->grad.data() + static_cast<std::size_t>(ids[i]) * d;
        for (int j = 0; j < d; ++j) gt[j] += gy[j];
      }
    });
  }
  return out;
}

// [b,L,d] + [L,d] broadcast over the batch.
inline Tensor add_position(const Tensor& x, const Tensor& pos) {
  if (x.ndim() != 3 || pos.ndim() != 2 || x.dim(1) != pos.dim(0) || x.dim(2) != pos.dim(1))
    throw ShapeError("add_position: " + shape_str(x.shape()) + " + " + shape_str(pos.shape()));
  const int b = x.dim(0);
  const std::size_t ld = pos.size();
  bool rec = detail::recording({&x, &pos});
  Tensor out = detail::make_output(x.shape(), rec);
  for (int i = 0; i < b; ++i)
    for (std::size_t j = 0; j < ld; ++j)
      out.mutable_data()[i * ld + j] = x.data()[i * ld + j] + pos.data()[j];
  if (rec) {
    auto xn = x.node(), pn = pos.node(), on = out.node();
    Graph::current()->record([xn, pn, on, b, ld] {
      if (!detail::has_out_grad(on)) return;
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
      }
      if (pn->requires_grad) {
        pn->ensure_grad();
        for (int i = 0; i < b; ++i)
          for (std::size_t j = 0; j < ld; ++j) pn->grad[j] += on->grad[i * ld + j];
      }
    });
  }
  return out;
}

// Prepend one learned token to every sequence: ([d], [b,P,d]) -> [b,1+P,d].
inline Tensor prepend_token(const Tensor& tok, const Tensor& x) {
  if (tok.ndim() != 1 || x.ndim() != 3 || tok.dim(0) != x.dim(2))
    throw ShapeError("prepend_token: ([d],[b,P,d]) expected");
  const int b = x.dim(0), p = x.dim(1), d = x.dim(2);
  bool rec = detail::recording({&tok, &x});
  Tensor out = detail::make_output({b, p + 1, d}, rec);
  for (int i = 0; i < b; ++i) {
    double* op = out.mutable_data().data() + static_cast<std::size_t>(i) * (p + 1) * d;
    std::copy_n(tok.data().data(), d, op);
    std::copy_n(x.data().data() + static_cast<std::size_t>(i) * p * d, static_cast<std::size_t>(p) * d,
                op + d);
  }
  if (rec) {
    auto tn = tok.node(), xn = x.node(), on = out.node();
    Graph::current()->record([tn, xn, on, b, p, d] {
      if (!detail::has_out_grad(on)) return;
      if (tn->requires_grad) tn->ensure_grad();
      if (xn->requires_grad) xn->ensure_grad();
      for (int i = 0; i < b; ++i) {
        const double* gy = on->grad.data() + static_cast<std::size_t>(i) * (p + 1) * d;
        if (tn->requires_grad)
          for (int j = 0; j < d; ++j) tn->grad[j] += gy[j];
        if (xn->requires_grad) {
          double* gx = xn->grad.data() + static_cast<std::size_t>(i) * p * d;
          for (std::size_t j = 0; j < static_cast<std::size_t>(p) * d; ++j) gx[j] += gy[d + j];
        }
      }
    });
  }
  return out;
}

// [b,L,d] -> [b,d], one token per sequence.
inline Tensor select_token(const Tensor& x, int index) {
  if (x.ndim() != 3) throw ShapeError("select_token: expects [b,L,d]");
  const int b = x.dim(0), l = x.dim(1), d = x.dim(2);
  if (index < 0 || index >= l) throw IndexError("select_token: index out of range");
  bool rec = detail::recording({&x});
  Tensor out = detail::make_output({b, d}, rec);
  for (int i = 0; i < b; ++i)
    std::copy_n(x.data().data() + (static_cast<std::size_t>(i) * l + index) * d, d,
                out.mutable_data().data() + static_cast<std::size_t>(i) * d);
  if (rec) {
    auto xn = x.node(), on = out.node();
    Graph::current()->record([xn, on, b, l, d, index] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      for (int i = 0; i < b; ++i) {
        const double* gy = on->grad.data() + static_cast<std::size_t>(i) * d;
        double* gx = xn->grad.data() + (static_cast<std::size_t>(i) * l + index) * d;
        for (int j = 0; j < d; ++j) gx[j] += gy[j];
      }
    });
  }
  return out;
}

// [b,L,d] -> [b,d] mean over tokens.
inline Tensor mean_tokens(const Tensor& x) {
  if (x.ndim() != 3) throw ShapeError("mean_tokens: expects [b,L,d]");
  const int b = x.dim(0), l = x.dim(1), d = x.dim(2);
  bool rec = detail::recording({&x});
  Tensor out = detail::make_output({b, d}, rec);
  for (int i = 0; i < b; ++i) {
    double* op = out.mutable_data().data() + static_cast<std::size_t>(i) * d;
    for (int t = 0; t < l; ++t) {
      const double* xp = x.data().data() + (static_cast<std::size_t>(i) * l + t) * d;
      for (int j = 0; j < d; ++j) op[j] += xp[j];
    }
    for (int j = 0; j < d; ++j) op[j] /= l;
  }
  if (rec) {
    auto xn = x.node(), on = out.node();
    Graph::current()->record([xn, on, b, l, d] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      for (int i = 0; i < b; ++i) {
        const double* gy = on->grad.data() + static_cast<std::size_t>(i) * d;
        for (int t = 0; t < l; ++t) {
          double* gx = xn->grad.data() + (static_cast<std::size_t>(i) * l + t) * d;
          for (int j = 0; j < d; ++j) gx[j] += gy[j] / l;
        }
      }
    });
  }
  return out;
}

// [b,L,d] -> [b*h, L, d/h]
inline Tensor split_heads(const Tensor& x, int heads) {
  if (x.ndim() != 3) throw ShapeError("split_heads: expects [b,L,d]");
  const int b = x.dim(0), l = x.dim(1), d = x.dim(2);
  if (d % heads != 0)
    throw ConfigError("split_heads: d_model " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  const int dh = d / heads;
  bool rec = detail::recording({&x});
  Tensor out = detail::make_output({b * heads, l, dh}, rec);
  for (int i = 0; i < b; ++i)
    for (int h = 0; h < heads; ++h)
      for (int t = 0; t < l; ++t)
        std::copy_n(x.data().data() + ((static_cast<std::size_t>(i) * l + t) * d + h * dh), dh,
                    out.mutable_data().data() +
                        ((static_cast<std::size_t>(i) * heads + h) * l + t) * dh);
  if (rec) {
    auto xn = x.node(), on = out.node();
    Graph::current()->record([xn, on, b, l, d, heads, dh] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      for (int i = 0; i < b; ++i)
        for (int h = 0; h < heads; ++h)
          for (int t = 0; t < l; ++t) {
            const double* gy = on->grad.data() +
                               ((static_cast<std::size_t>(i) * heads + h) * l + t) * dh;
            double* gx = xn->grad.data() + ((static_cast<std::size_t>(i) * l + t) * d + h * dh);
            for (int j = 0; j < dh; ++j) gx[j] += gy[j];
          }
    });
  }
  return out;
}

// [b*h, L, dh] -> [b, L, h*dh]
inline Tensor merge_heads(const Tensor& x, int heads) {
  if (x.ndim() != 3 || x.dim(0) % heads != 0) throw ShapeError("merge_heads: expects [b*h,L,dh]");
  const int b = x.dim(0) / heads, l = x.dim(1), dh = x.dim(2);
  const int d = heads * dh;
  bool rec = detail::recording({&x});
  Tensor out = detail::make_output({b, l, d}, rec);
  for (int i = 0; i < b; ++i)
    for (int h = 0; h < heads; ++h)
      for (int t = 0; t < l; ++t)
        std::copy_n(x.data().data() + ((static_cast<std::size_t>(i) * heads + h) * l + t) * dh, dh,
                    out.mutable_data().data() + ((static_cast<std::size_t>(i) * l + t) * d + h * dh));
  if (rec) {
    auto xn = x.node(), on = out.node();
    Graph::current()->record([xn, on, b, l, d, heads, dh] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      for (int i = 0; i < b; ++i)
        for (int h = 0; h < heads; ++h)
          for (int t = 0; t < l; ++t) {
            const double* gy =
                on->grad.data() + ((static_cast<std::size_t>(i) * l + t) * d + h * dh);
            double* gx =
                xn->grad.data() + ((static_cast<std::size_t>(i) * heads + h) * l + t) * dh;
            for (int j = 0; j < dh; ++j) gx[j] += gy[j];
          }
    });
  }
  return out;
}

// [b,H,W,3] -> [b, (H/ps)*(W/ps), ps*ps*3] patch flattening.
inline Tensor extract_patches(const Tensor& img, int patch) {
  if (img.ndim() != 4 || img.dim(3) != 3) throw ShapeError("extract_patches: expects [b,H,W,3]");
  const int b = img.dim(0), hh = img.dim(1), ww = img.dim(2);
  if (hh % patch != 0 || ww % patch != 0)
    throw ConfigError("extract_patches: resolution not divisible by patch size");
  const int ph = hh / patch, pw = ww / patch;
  const int pvec = patch * patch * 3;
  bool rec = detail::recording({&img});
  Tensor out = detail::make_output({b, ph * pw, pvec}, rec);
  auto src_index = [hh, ww](int i, int y, int x, int c) {
    return ((static_cast<std::size_t>(i) * hh + y) * ww + x) * 3 + c;
  };
  for (int i = 0; i < b; ++i)
    for (int py = 0; py < ph; ++py)
      for (int px = 0; px < pw; ++px) {
        double* op = out.mutable_data().data() +
                     ((static_cast<std::size_t>(i) * ph + py) * pw + px) * pvec;
        int k = 0;
        for (int y = 0; y < patch; ++y)
          for (int x = 0; x < patch; ++x)
            for (int c = 0; c < 3; ++c)
              op[k++] = img.data()[src_index(i, py * patch + y, px * patch + x, c)];
      }
  if (rec) {
    auto xn = img.node(), on = out.node();
    Graph::current()->record([xn, on, b, hh, ww, patch, ph, pw, pvec, src_index] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      for (int i = 0; i < b; ++i)
        for (int py = 0; py < ph; ++py)
          for (int px = 0; px < pw; ++px) {
            const double* gy = on->grad.data() +
                               ((static_cast<std::size_t>(i) * ph + py) * pw + px) * pvec;
            int k = 0;
            for (int y = 0; y < patch; ++y)
              for (int x = 0; x < patch; ++x)
                for (int c = 0; c < 3; ++c)
                  xn->grad[src_index(i, py * patch + y, px * patch + x, c)] += gy[k++];
          }
    });
  }
  return out;
}

inline Tensor transpose2d(const Tensor& x) {
  if (x.ndim() != 2) throw ShapeError("transpose2d: expects a 2-d tensor");
  const int m = x.dim(0), n = x.dim(1);
  bool rec = detail::recording({&x});
  Tensor out = detail::make_output({n, m}, rec);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.mutable_data()[static_cast<std::size_t>(j) * m + i] =
          x.data()[static_cast<std::size_t>(i) * n + j];
  if (rec) {
    auto xn = x.node(), on = out.node();
    Graph::current()->record([xn, on, m, n] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          xn->grad[static_cast<std::size_t>(i) * n + j] +=
              on->grad[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

// Same flat data under a new shape (copying, with pass-through gradients).
inline Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
  if (Tensor::numel(new_shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape) +
                     " changes element count");
  bool rec = detail::recording({&x});
  Tensor out = detail::make_output(std::move(new_shape), rec);
  out.mutable_data() = x.data();
  if (rec) {
    auto xn = x.node(), on = out.node();
    Graph::current()->record([xn, on] {
      if (!detail::has_out_grad(on) || !xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

// Fraction of parameters whose gradient is populated and nonzero.
inline double nonzero_grad_fraction(const std::vector<Tensor>& params) {
  std::size_t total = 0, nonzero = 0;
  for (const Tensor& p : params) {
    total += p.size();
    if (!p.has_grad()) continue;
    for (double g : p.grad())
      if (g != 0.0) ++nonzero;
  }
  return total == 0 ? 0.0 : static_cast<double>(nonzero) / static_cast<double>(total);
}

}  // namespace coverclip
