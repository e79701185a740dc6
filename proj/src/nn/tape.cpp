#include "nuiworld/nn/tape.hpp"

#include <cmath>

#include "nuiworld/nn/params.hpp"

namespace nuiworld::nn {

template <class T>
size_t Tape<T>::idx(Var v) const {
  require(v.id >= 0 && static_cast<size_t>(v.id) < nodes_.size(), ErrorKind::InvalidArgument, "invalid tape variable");
  return static_cast<size_t>(v.id);
}

template <class T>
Var Tape<T>::push(Mat<T> value, bool needs_grad, std::function<void(Tape&, Node&)> backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

template <class T>
Mat<T>& Tape<T>::grad_ref(Var v) {
  Node& n = nodes_[idx(v)];
  if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <class T>
Mat<T> Tape<T>::grad(Var v) const {
  const Node& n = nodes_[idx(v)];
  if (n.grad.size() == 0) return Mat<T>::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <class T>
T Tape<T>::scalar(Var v) const {
  const auto& m = value(v);
  require(m.rows() == 1 && m.cols() == 1, ErrorKind::InvalidArgument, "value is not a scalar");
  return m(0, 0);
}

template <class T>
void Tape<T>::require_same_shape(Var a, Var b, const char* op) const {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), ErrorKind::InvalidArgument,
          std::string(op) + ": shape mismatch");
}

template <class T>
void Tape<T>::backward(Var loss) {
  require(value(loss).size() == 1, ErrorKind::InvalidArgument, "backward needs a scalar loss");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_ref(loss).setConstant(T(1));
  for (int64_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.needs_grad && n.backward && n.grad.size() != 0) n.backward(*this, n);
  }
}

template <class T>
void Tape<T>::clear() {
  nodes_.clear();
  param_nodes_.clear();
  peak_attention_ = 0;
}

template <class T>
Var Tape<T>::constant(Mat<T> value) {
  return push(std::move(value), false, nullptr);
}

template <class T>
Var Tape<T>::input(Mat<T> value) {
  return push(std::move(value), true, [](Tape&, Node&) {});
}

template <class T>
Var Tape<T>::param(ParameterStore<T>& store, const std::string& name) {
  const auto key = std::make_pair(static_cast<const void*>(&store), name);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return it->second;
  Parameter<T>* p = &store.get(name);
  const Var v = push(p->value, true, [p](Tape&, Node& n) {
    if (p->grad.size() == 0) p->grad = Mat<T>::Zero(p->value.rows(), p->value.cols());
    p->grad += n.grad;
  });
  param_nodes_.emplace(key, v);
  return v;
}

template <class T>
Var Tape<T>::add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return push(value(a) + value(b), needs(a) || needs(b), [a, b](Tape& t, Node& n) {
    if (t.needs(a)) t.grad_ref(a) += n.grad;
    if (t.needs(b)) t.grad_ref(b) += n.grad;
  });
}

template <class T>
Var Tape<T>::sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return push(value(a) - value(b), needs(a) || needs(b), [a, b](Tape& t, Node& n) {
    if (t.needs(a)) t.grad_ref(a) += n.grad;
    if (t.needs(b)) t.grad_ref(b) -= n.grad;
  });
}

template <class T>
Var Tape<T>::mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  return push(value(a).cwiseProduct(value(b)), needs(a) || needs(b), [a, b](Tape& t, Node& n) {
    if (t.needs(a)) t.grad_ref(a) += n.grad.cwiseProduct(t.value(b));
    if (t.needs(b)) t.grad_ref(b) += n.grad.cwiseProduct(t.value(a));
  });
}

template <class T>
Var Tape<T>::scale(Var a, T s) {
  return push(value(a) * s, needs(a), [a, s](Tape& t, Node& n) { t.grad_ref(a) += n.grad * s; });
}

template <class T>
Var Tape<T>::add_scalar(Var a, T s) {
  return push(value(a).array() + s, needs(a), [a](Tape& t, Node& n) { t.grad_ref(a) += n.grad; });
}

template <class T>
Var Tape<T>::add_row(Var a, Var row) {
  require(rows(row) == 1 && cols(row) == cols(a), ErrorKind::InvalidArgument, "add_row: shape mismatch");
  Mat<T> out = value(a);
  out.rowwise() += value(row).row(0);
  return push(std::move(out), needs(a) || needs(row), [a, row](Tape& t, Node& n) {
    if (t.needs(a)) t.grad_ref(a) += n.grad;
    if (t.needs(row)) t.grad_ref(row) += n.grad.colwise().sum();
  });
}

template <class T>
Var Tape<T>::mul_row(Var a, Var row) {
  require(rows(row) == 1 && cols(row) == cols(a), ErrorKind::InvalidArgument, "mul_row: shape mismatch");
  Mat<T> out = value(a);
  out.array().rowwise() *= value(row).row(0).array();
  return push(std::move(out), needs(a) || needs(row), [a, row](Tape& t, Node& n) {
    if (t.needs(a)) {
      Mat<T> g = n.grad;
      g.array().rowwise() *= t.value(row).row(0).array();
      t.grad_ref(a) += g;
    }
    if (t.needs(row)) t.grad_ref(row) += n.grad.cwiseProduct(t.value(a)).colwise().sum();
  });
}

template <class T>
Var Tape<T>::matmul(Var a, Var b) {
  require(cols(a) == rows(b), ErrorKind::InvalidArgument, "matmul: inner dimensions differ");
  Mat<T> out = value(a) * value(b);
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, Node& n) {
    if (t.needs(a)) t.grad_ref(a).noalias() += n.grad * t.value(b).transpose();
    if (t.needs(b)) t.grad_ref(b).noalias() += t.value(a).transpose() * n.grad;
  });
}

template <class T>
Var Tape<T>::linear(Var x, Var w, Var b) {
  require(cols(x) == rows(w), ErrorKind::InvalidArgument, "linear: input width does not match weight");
  Mat<T> out = value(x) * value(w);
  if (b.valid()) {
    require(rows(b) == 1 && cols(b) == cols(w), ErrorKind::InvalidArgument, "linear: bias shape mismatch");
    out.rowwise() += value(b).row(0);
  }
  const bool ng = needs(x) || needs(w) || (b.valid() && needs(b));
  return push(std::move(out), ng, [x, w, b](Tape& t, Node& n) {
    if (t.needs(x)) t.grad_ref(x).noalias() += n.grad * t.value(w).transpose();
    if (t.needs(w)) t.grad_ref(w).noalias() += t.value(x).transpose() * n.grad;
    if (b.valid() && t.needs(b)) t.grad_ref(b) += n.grad.colwise().sum();
  });
}

template <class T>
Var Tape<T>::layer_norm(Var x, T eps) {
  const Mat<T>& xv = value(x);
  const Eigen::Index n = xv.rows(), m = xv.cols();
  Mat<T> y(n, m);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = xv.row(i).mean();
    const T var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = T(1) / std::sqrt(var + eps);
    y.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Mat<T> yc = y;
  return push(std::move(y), needs(x), [x, yc = std::move(yc), inv_std](Tape& t, Node& nd) {
    Mat<T>& gx = t.grad_ref(x);
    const Mat<T>& g = nd.grad;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const T mg = g.row(i).mean();
      const T mgy = g.row(i).cwiseProduct(yc.row(i)).mean();
      gx.row(i).array() += inv_std(i) * (g.row(i).array() - mg - yc.row(i).array() * mgy);
    }
  });
}

namespace {

template <class T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)

}  // namespace

template <class T>
Var Tape<T>::gelu(Var x) {
  const Mat<T>& xv = value(x);
  Mat<T> y = xv.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::tanh(kGeluC<T> * (v + T(0.044715) * v * v * v))); });
  return push(std::move(y), needs(x), [x](Tape& t, Node& n) {
    const Mat<T>& xv = t.value(x);
    Mat<T> d = xv.unaryExpr([](T v) {
      const T th = std::tanh(kGeluC<T> * (v + T(0.044715) * v * v * v));
      return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * kGeluC<T> * (T(1) + T(3 * 0.044715) * v * v);
    });
    t.grad_ref(x) += n.grad.cwiseProduct(d);
  });
}

template <class T>
Var Tape<T>::silu(Var x) {
  Mat<T> y = value(x).unaryExpr([](T v) { return v / (T(1) + std::exp(-v)); });
  return push(std::move(y), needs(x), [x](Tape& t, Node& n) {
    Mat<T> d = t.value(x).unaryExpr([](T v) {
      const T s = T(1) / (T(1) + std::exp(-v));
      return s * (T(1) + v * (T(1) - s));
    });
    t.grad_ref(x) += n.grad.cwiseProduct(d);
  });
}

template <class T>
Var Tape<T>::relu(Var x) {
  Mat<T> y = value(x).cwiseMax(T(0));
  return push(std::move(y), needs(x), [x](Tape& t, Node& n) {
    t.grad_ref(x) += n.grad.cwiseProduct(t.value(x).unaryExpr([](T v) { return v > T(0) ? T(1) : T(0); }));
  });
}

template <class T>
Var Tape<T>::sigmoid(Var x) {
  Mat<T> y = value(x).unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  Mat<T> yc = y;
  return push(std::move(y), needs(x), [x, yc = std::move(yc)](Tape& t, Node& n) {
    t.grad_ref(x).array() += n.grad.array() * yc.array() * (T(1) - yc.array());
  });
}

template <class T>
Var Tape<T>::exp(Var x) {
  Mat<T> y = value(x).array().exp().matrix();
  Mat<T> yc = y;
  return push(std::move(y), needs(x), [x, yc = std::move(yc)](Tape& t, Node& n) {
    t.grad_ref(x) += n.grad.cwiseProduct(yc);
  });
}

template <class T>
Var Tape<T>::square(Var x) {
  return push(value(x).array().square().matrix(), needs(x), [x](Tape& t, Node& n) {
    t.grad_ref(x) += T(2) * n.grad.cwiseProduct(t.value(x));
  });
}

template <class T>
Var Tape<T>::clamp(Var x, T lo, T hi) {
  Mat<T> y = value(x).cwiseMax(lo).cwiseMin(hi);
  return push(std::move(y), needs(x), [x, lo, hi](Tape& t, Node& n) {
    t.grad_ref(x) += n.grad.cwiseProduct(t.value(x).unaryExpr([lo, hi](T v) { return v > lo && v < hi ? T(1) : T(0); }));
  });
}

template <class T>
Var Tape<T>::mul_const(Var a, const Mat<T>& c) {
  require(c.rows() == value(a).rows() && c.cols() == value(a).cols(), ErrorKind::InvalidArgument,
          "mul_const: shape mismatch");
  return push(value(a).cwiseProduct(c), needs(a), [a, c](Tape& t, Node& n) { t.grad_ref(a) += n.grad.cwiseProduct(c); });
}

template <class T>
Var Tape<T>::attention(Var q, Var k, Var v, int heads, int group) {
  const Mat<T>& Q = value(q);
  const Mat<T>& K = value(k);
  const Mat<T>& Vv = value(v);
  const int d = static_cast<int>(Q.cols());
  require(heads >= 1 && d % heads == 0, ErrorKind::InvalidArgument, "attention: width not divisible by head count");
  require(K.rows() >= 1, ErrorKind::InvalidArgument, "attention: no keys");
  require(K.cols() == d && Vv.cols() == d && K.rows() == Vv.rows(), ErrorKind::InvalidArgument,
          "attention: key/value shape mismatch");
  if (group > 0)
    require(Q.rows() == K.rows() && Q.rows() % group == 0, ErrorKind::InvalidArgument,
            "attention: grouped rows must split evenly");
  const int dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const Eigen::Index gq = group > 0 ? group : Q.rows(), gk = group > 0 ? group : K.rows();
  const Eigen::Index groups = group > 0 ? Q.rows() / group : 1;
  peak_attention_ = std::max<int64_t>(peak_attention_, static_cast<int64_t>(heads) * gq * gk);

  // Softmax weights per (group, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<Mat<T>>>(static_cast<size_t>(groups * heads));
  Mat<T> out(Q.rows(), d);
  for (Eigen::Index gi = 0; gi < groups; ++gi)
    for (int h = 0; h < heads; ++h) {
      const auto qb = Q.block(gi * gq, h * dh, gq, dh);
      const auto kb = K.block(gi * gk, h * dh, gk, dh);
      Mat<T> s = (qb * kb.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < gq; ++i) {
        const T mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }
      out.block(gi * gq, h * dh, gq, dh).noalias() = s * Vv.block(gi * gk, h * dh, gk, dh);
      (*probs)[static_cast<size_t>(gi * heads + h)] = std::move(s);
    }
  const bool ng = needs(q) || needs(k) || needs(v);
  return push(std::move(out), ng, [q, k, v, heads, dh, inv_sqrt, gq, gk, groups, probs](Tape& t, Node& n) {
    const Mat<T>& Q = t.value(q);
    const Mat<T>& K = t.value(k);
    const Mat<T>& Vv = t.value(v);
    for (Eigen::Index gi = 0; gi < groups; ++gi)
      for (int h = 0; h < heads; ++h) {
        const Mat<T>& P = (*probs)[static_cast<size_t>(gi * heads + h)];
        const auto dO = n.grad.block(gi * gq, h * dh, gq, dh);
        if (t.needs(v)) t.grad_ref(v).block(gi * gk, h * dh, gk, dh).noalias() += P.transpose() * dO;
        if (!t.needs(q) && !t.needs(k)) continue;
        Mat<T> dP = dO * Vv.block(gi * gk, h * dh, gk, dh).transpose();
        const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = dP.cwiseProduct(P).rowwise().sum();
        Mat<T> dS = P.cwiseProduct(dP.colwise() - rs);
        dS *= inv_sqrt;
        if (t.needs(q)) t.grad_ref(q).block(gi * gq, h * dh, gq, dh).noalias() += dS * K.block(gi * gk, h * dh, gk, dh);
        if (t.needs(k))
          t.grad_ref(k).block(gi * gk, h * dh, gk, dh).noalias() += dS.transpose() * Q.block(gi * gq, h * dh, gq, dh);
      }
  });
}

template <class T>
Var Tape<T>::concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::InvalidArgument, "concat_cols: nothing to join");
  const Eigen::Index n = value(parts[0]).rows();
  Eigen::Index total = 0;
  bool ng = false;
  for (Var p : parts) {
    require(value(p).rows() == n, ErrorKind::InvalidArgument, "concat_cols: row counts differ");
    total += value(p).cols();
    ng = ng || needs(p);
  }
  Mat<T> out(n, total);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  return push(std::move(out), ng, [parts](Tape& t, Node& nd) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      const Eigen::Index w = t.value(p).cols();
      if (t.needs(p)) t.grad_ref(p) += nd.grad.middleCols(at, w);
      at += w;
    }
  });
}

template <class T>
Var Tape<T>::concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::InvalidArgument, "concat_rows: nothing to join");
  const Eigen::Index m = value(parts[0]).cols();
  Eigen::Index total = 0;
  bool ng = false;
  for (Var p : parts) {
    require(value(p).cols() == m, ErrorKind::InvalidArgument, "concat_rows: column counts differ");
    total += value(p).rows();
    ng = ng || needs(p);
  }
  Mat<T> out(total, m);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  return push(std::move(out), ng, [parts](Tape& t, Node& nd) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      const Eigen::Index h = t.value(p).rows();
      if (t.needs(p)) t.grad_ref(p) += nd.grad.middleRows(at, h);
      at += h;
    }
  });
}

template <class T>
Var Tape<T>::slice_cols(Var a, int start, int count) {
  require(start >= 0 && count >= 0 && start + count <= cols(a), ErrorKind::InvalidArgument, "slice_cols: out of range");
  return push(value(a).middleCols(start, count), needs(a), [a, start, count](Tape& t, Node& n) {
    t.grad_ref(a).middleCols(start, count) += n.grad;
  });
}

template <class T>
Var Tape<T>::slice_rows(Var a, int start, int count) {
  require(start >= 0 && count >= 0 && start + count <= rows(a), ErrorKind::InvalidArgument, "slice_rows: out of range");
  return push(value(a).middleRows(start, count), needs(a), [a, start, count](Tape& t, Node& n) {
    t.grad_ref(a).middleRows(start, count) += n.grad;
  });
}

template <class T>
Var Tape<T>::reshape(Var a, int r, int c) {
  require(static_cast<Eigen::Index>(r) * c == value(a).size(), ErrorKind::InvalidArgument,
          "reshape: element count changes");
  Mat<T> out = Eigen::Map<const Mat<T>>(value(a).data(), r, c);
  return push(std::move(out), needs(a), [a](Tape& t, Node& n) {
    Mat<T>& g = t.grad_ref(a);
    Eigen::Map<Mat<T>>(g.data(), n.grad.rows(), n.grad.cols()) += n.grad;
  });
}

template <class T>
Var Tape<T>::sum(Var a) {
  Mat<T> out(1, 1);
  out(0, 0) = value(a).sum();
  return push(std::move(out), needs(a), [a](Tape& t, Node& n) { t.grad_ref(a).array() += n.grad(0, 0); });
}

template <class T>
Var Tape<T>::mean(Var a) {
  const T inv = T(1) / static_cast<T>(value(a).size());
  Mat<T> out(1, 1);
  out(0, 0) = value(a).sum() * inv;
  return push(std::move(out), needs(a), [a, inv](Tape& t, Node& n) { t.grad_ref(a).array() += n.grad(0, 0) * inv; });
}

template <class T>
Var Tape<T>::row_mean(Var a) {
  const T inv = T(1) / static_cast<T>(rows(a));
  Mat<T> out = value(a).colwise().sum() * inv;
  return push(std::move(out), needs(a), [a, inv](Tape& t, Node& n) {
    t.grad_ref(a).rowwise() += n.grad.row(0) * inv;
  });
}

template <class T>
Var Tape<T>::repeat_rows(Var row, int n) {
  require(rows(row) == 1 && n >= 1, ErrorKind::InvalidArgument, "repeat_rows: needs a single row");
  Mat<T> out = value(row).replicate(n, 1);
  return push(std::move(out), needs(row), [row](Tape& t, Node& nd) { t.grad_ref(row) += nd.grad.colwise().sum(); });
}

template <class T>
Var Tape<T>::mse(Var pred, const Mat<T>& target) {
  require(target.rows() == value(pred).rows() && target.cols() == value(pred).cols(), ErrorKind::InvalidArgument,
          "mse: shape mismatch");
  const T inv = T(1) / static_cast<T>(target.size());
  Mat<T> diff = value(pred) - target;
  Mat<T> out(1, 1);
  out(0, 0) = diff.squaredNorm() * inv;
  return push(std::move(out), needs(pred), [pred, diff = std::move(diff), inv](Tape& t, Node& n) {
    t.grad_ref(pred) += diff * (T(2) * inv * n.grad(0, 0));
  });
}

template <class T>
Var Tape<T>::bce_with_logits(Var logits, const Mat<T>& labels) {
  const Mat<T>& x = value(logits);
  require(labels.rows() == x.rows() && labels.cols() == x.cols(), ErrorKind::InvalidArgument,
          "bce_with_logits: shape mismatch");
  const T inv = T(1) / static_cast<T>(x.size());
  T total = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    total += std::max(v, T(0)) - v * labels.data()[i] + std::log1p(std::exp(-std::abs(v)));
  }
  Mat<T> out(1, 1);
  out(0, 0) = total * inv;
  return push(std::move(out), needs(logits), [logits, labels, inv](Tape& t, Node& n) {
    Mat<T> s = t.value(logits).unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
    t.grad_ref(logits) += (s - labels) * (inv * n.grad(0, 0));
  });
}

template class Tape<float>;
template class Tape<double>;

}  // namespace nuiworld::nn
