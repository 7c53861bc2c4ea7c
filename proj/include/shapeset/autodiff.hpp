#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace shapeset::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Handle to a node on a tape. Only meaningful with the tape that made it.
struct Var {
  std::int32_t id = -1;
};

/// Reverse-mode tape over dense row-major matrices. Nodes are appended in
/// evaluation order, which is a valid topological order; `backward` walks it
/// in reverse. One tape per execution context.
template <typename T>
class Tape {
 public:
  using Mat = Matrix<T>;
  using BackwardFn = std::function<void(Tape&, std::int32_t self)>;

  Var constant(Mat value);
  Var variable(Mat value);

  const Mat& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  /// Gradient accumulated into `v`; zeros if nothing flowed there.
  Mat grad(Var v) const;

  /// Seeds d(root)/d(root) = 1 and propagates. `root` must be 1x1.
  void backward(Var root);

  /// Adds `g` into the gradient slot of `v` (no-op for constants).
  void accumulate(Var v, const Mat& g);
  const Mat& grad_ref(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Mat& value_ref(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  /// Appends an op result. Throws NumericalError if `value` is not finite.
  Var push(Mat value, bool requires_grad, BackwardFn backward, const char* op);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Primitive ops. Each records its own backward rule.
template <typename T> Var matmul(Tape<T>& t, Var a, Var b);
template <typename T> Var add(Tape<T>& t, Var a, Var b);
template <typename T> Var sub(Tape<T>& t, Var a, Var b);
template <typename T> Var mul(Tape<T>& t, Var a, Var b);
/// a (r x c) + row (1 x c) broadcast over rows.
template <typename T> Var add_row(Tape<T>& t, Var a, Var row);
template <typename T> Var scale(Tape<T>& t, Var a, T s);
template <typename T> Var add_scalar(Tape<T>& t, Var a, T s);
template <typename T> Var square(Tape<T>& t, Var a);
template <typename T> Var log(Tape<T>& t, Var a);
template <typename T> Var gelu(Tape<T>& t, Var a);
template <typename T> Var relu(Tape<T>& t, Var a);
template <typename T> Var softmax_rows(Tape<T>& t, Var a);
template <typename T> Var log_softmax_rows(Tape<T>& t, Var a);
/// Per-row normalization to zero mean and unit variance, no affine part.
template <typename T> Var layer_norm_rows(Tape<T>& t, Var a, T eps = T(1e-5));
template <typename T> Var concat_cols(Tape<T>& t, Var a, Var b);
template <typename T> Var slice_cols(Tape<T>& t, Var a, Eigen::Index start, Eigen::Index count);
/// Row i of the result is row i / times of `a`.
template <typename T> Var repeat_rows(Tape<T>& t, Var a, Eigen::Index times);
template <typename T> Var sum(Tape<T>& t, Var a);
template <typename T> Var mean(Tape<T>& t, Var a);

/// Multi-head scaled dot-product self-attention applied independently within
/// consecutive groups of `group` rows (one group per set). `key_mask`, when
/// nonempty, has one entry per row; zero keys are excluded unless a group
/// has no true key at all.
template <typename T>
Var grouped_attention(Tape<T>& t, Var q, Var k, Var v, Eigen::Index group, int heads,
                      std::span<const std::uint8_t> key_mask = {});

/// x W + b
template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
  return add_row(t, matmul(t, x, w), b);
}

}  // namespace shapeset::ad
