#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nuiworld/common.hpp"

namespace nuiworld::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
class ParameterStore;

/// Handle to a node on a tape.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff over row-major matrices. Every value is 2-d;
/// token sets are rows, channels are columns. Nodes are appended in
/// evaluation order and backward() walks them in reverse.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat<T> value);
  /// Leaf whose gradient is kept (inputs under gradient checks).
  Var input(Mat<T> value);
  /// Leaf bound to a named parameter; backward accumulates into the
  /// store's gradient. The value is copied on first use and repeated
  /// requests reuse that node.
  Var param(ParameterStore<T>& store, const std::string& name);

  const Mat<T>& value(Var v) const { return nodes_[idx(v)].value; }
  /// Gradient of the last backward() target; zeros if none flowed.
  Mat<T> grad(Var v) const;
  int rows(Var v) const { return static_cast<int>(value(v).rows()); }
  int cols(Var v) const { return static_cast<int>(value(v).cols()); }
  T scalar(Var v) const;

  void backward(Var loss);
  void clear();
  size_t size() const { return nodes_.size(); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T s);
  Var add_scalar(Var a, T s);
  /// a (n x m) plus a 1 x m row broadcast over rows.
  Var add_row(Var a, Var row);
  Var mul_row(Var a, Var row);
  Var matmul(Var a, Var b);
  /// x W + b; b may be an invalid Var.
  Var linear(Var x, Var w, Var b);
  /// Row-wise normalization to zero mean, unit variance (no affine).
  Var layer_norm(Var x, T eps = T(1e-6));
  Var gelu(Var x);
  Var silu(Var x);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var exp(Var x);
  Var square(Var x);
  /// Gradient passes only where lo < x < hi.
  Var clamp(Var x, T lo, T hi);
  Var mul_const(Var a, const Mat<T>& c);
  /// Multi-head scaled dot-product attention: q (Tq x d), k and v (Tk x d).
  /// With group > 0, q and k hold independent sequences of `group` rows
  /// each and attention stays within a sequence.
  Var attention(Var q, Var k, Var v, int heads, int group = 0);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_cols(Var a, int start, int count);
  Var slice_rows(Var a, int start, int count);
  /// Reinterprets row-major storage with a new shape.
  Var reshape(Var a, int rows, int cols);
  Var sum(Var a);
  Var mean(Var a);
  Var row_mean(Var a);
  Var repeat_rows(Var row, int n);
  Var mse(Var pred, const Mat<T>& target);
  /// Mean binary cross-entropy of logits against {0,1} labels.
  Var bce_with_logits(Var logits, const Mat<T>& labels);

  /// Largest attention score matrix (heads x Tq x Tk elements) built so far.
  int64_t peak_attention_elements() const { return peak_attention_; }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool needs_grad = false;
    std::function<void(Tape&, Node&)> backward;
  };

  size_t idx(Var v) const;
  Var push(Mat<T> value, bool needs_grad, std::function<void(Tape&, Node&)> backward);
  bool needs(Var v) const { return nodes_[idx(v)].needs_grad; }
  Mat<T>& grad_ref(Var v);
  void require_same_shape(Var a, Var b, const char* op) const;

  std::vector<Node> nodes_;
  std::map<std::pair<const void*, std::string>, Var> param_nodes_;
  int64_t peak_attention_ = 0;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace nuiworld::nn
