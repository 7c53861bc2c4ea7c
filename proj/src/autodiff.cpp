#include "shapeset/autodiff.hpp"

#include <cmath>
#include <string>

#include "shapeset/error.hpp"

namespace shapeset::ad {

namespace {

template <typename T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
  }
}

}  // namespace

template <typename T>
Var Tape<T>::constant(Mat value) {
  return push(std::move(value), false, nullptr, "constant");
}

template <typename T>
Var Tape<T>::variable(Mat value) {
  return push(std::move(value), true, nullptr, "variable");
}

template <typename T>
typename Tape<T>::Mat Tape<T>::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
void Tape<T>::accumulate(Var v, const Mat& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

template <typename T>
Var Tape<T>::push(Mat value, bool requires_grad, BackwardFn backward, const char* op) {
  if (!value.allFinite()) throw NumericalError(std::string("non-finite result in op '") + op + "'");
  nodes_.push_back(Node{std::move(value), Mat(), requires_grad, std::move(backward)});
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
void Tape<T>::backward(Var root) {
  Node& r = nodes_[static_cast<std::size_t>(root.id)];
  if (r.value.rows() != 1 || r.value.cols() != 1) throw ValidationError("backward: root must be a scalar");
  if (!r.requires_grad) return;
  r.grad = Mat::Ones(1, 1);
  for (std::int32_t id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && n.grad.size() != 0) n.backward(*this, id);
  }
}

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  if (va.cols() != vb.rows()) throw ValidationError("matmul: inner dimensions differ");
  typename Tape<T>::Mat out = va * vb;
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                [a, b](Tape<T>& tp, std::int32_t self) {
                  const auto& g = tp.grad_ref(self);
                  if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
                  if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
                },
                "matmul");
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  return t.push(t.value(a) + t.value(b), t.requires_grad(a) || t.requires_grad(b),
                [a, b](Tape<T>& tp, std::int32_t self) {
                  const auto& g = tp.grad_ref(self);
                  tp.accumulate(a, g);
                  tp.accumulate(b, g);
                },
                "add");
}

template <typename T>
Var sub(Tape<T>& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  return t.push(t.value(a) - t.value(b), t.requires_grad(a) || t.requires_grad(b),
                [a, b](Tape<T>& tp, std::int32_t self) {
                  const auto& g = tp.grad_ref(self);
                  tp.accumulate(a, g);
                  if (tp.requires_grad(b)) tp.accumulate(b, -g);
                },
                "sub");
}

template <typename T>
Var mul(Tape<T>& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "mul");
  return t.push(t.value(a).cwiseProduct(t.value(b)), t.requires_grad(a) || t.requires_grad(b),
                [a, b](Tape<T>& tp, std::int32_t self) {
                  const auto& g = tp.grad_ref(self);
                  if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
                  if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
                },
                "mul");
}

template <typename T>
Var add_row(Tape<T>& t, Var a, Var row) {
  const auto& va = t.value(a);
  const auto& vr = t.value(row);
  if (vr.rows() != 1 || vr.cols() != va.cols()) throw ValidationError("add_row: bias shape mismatch");
  typename Tape<T>::Mat out = va.rowwise() + vr.row(0);
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(row),
                [a, row](Tape<T>& tp, std::int32_t self) {
                  const auto& g = tp.grad_ref(self);
                  tp.accumulate(a, g);
                  if (tp.requires_grad(row)) tp.accumulate(row, g.colwise().sum());
                },
                "add_row");
}

template <typename T>
Var scale(Tape<T>& t, Var a, T s) {
  return t.push(t.value(a) * s, t.requires_grad(a),
                [a, s](Tape<T>& tp, std::int32_t self) { tp.accumulate(a, tp.grad_ref(self) * s); }, "scale");
}

template <typename T>
Var add_scalar(Tape<T>& t, Var a, T s) {
  return t.push(t.value(a).array() + s, t.requires_grad(a),
                [a](Tape<T>& tp, std::int32_t self) { tp.accumulate(a, tp.grad_ref(self)); }, "add_scalar");
}

template <typename T>
Var square(Tape<T>& t, Var a) {
  return t.push(t.value(a).cwiseAbs2(), t.requires_grad(a),
                [a](Tape<T>& tp, std::int32_t self) {
                  tp.accumulate(a, (tp.grad_ref(self).cwiseProduct(tp.value(a)) * T(2)).eval());
                },
                "square");
}

template <typename T>
Var log(Tape<T>& t, Var a) {
  if ((t.value(a).array() <= T(0)).any()) throw NumericalError("log of non-positive value");
  return t.push(t.value(a).array().log().matrix(), t.requires_grad(a),
                [a](Tape<T>& tp, std::int32_t self) {
                  tp.accumulate(a, tp.grad_ref(self).cwiseQuotient(tp.value(a)));
                },
                "log");
}

template <typename T>
Var gelu(Tape<T>& t, Var a) {
  static constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T kA = T(0.044715);
  const auto& x = t.value(a);
  typename Tape<T>::Mat th = (kC * (x.array() + kA * x.array().cube())).tanh().matrix();
  typename Tape<T>::Mat out = (T(0.5) * x.array() * (T(1) + th.array())).matrix();
  return t.push(std::move(out), t.requires_grad(a),
                [a, th = std::move(th)](Tape<T>& tp, std::int32_t self) {
                  const auto& xv = tp.value(a).array();
                  auto d = T(0.5) * (T(1) + th.array()) +
                           T(0.5) * xv * (T(1) - th.array().square()) * kC * (T(1) + T(3) * kA * xv.square());
                  tp.accumulate(a, (tp.grad_ref(self).array() * d).matrix());
                },
                "gelu");
}

template <typename T>
Var relu(Tape<T>& t, Var a) {
  return t.push(t.value(a).cwiseMax(T(0)), t.requires_grad(a),
                [a](Tape<T>& tp, std::int32_t self) {
                  tp.accumulate(a, (tp.grad_ref(self).array() * (tp.value(a).array() > T(0)).template cast<T>()).matrix());
                },
                "relu");
}

template <typename T>
Var softmax_rows(Tape<T>& t, Var a) {
  const auto& x = t.value(a);
  typename Tape<T>::Mat s = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
  s.array().colwise() /= s.rowwise().sum().array();
  return t.push(std::move(s), t.requires_grad(a),
                [a](Tape<T>& tp, std::int32_t self) {
                  const auto& g = tp.grad_ref(self);
                  const auto& s = tp.value_ref(self);
                  typename Tape<T>::Mat dot = g.cwiseProduct(s).rowwise().sum();
                  tp.accumulate(a, s.cwiseProduct((g.colwise() - dot.col(0))));
                },
                "softmax_rows");
}

template <typename T>
Var log_softmax_rows(Tape<T>& t, Var a) {
  const auto& x = t.value(a);
  typename Tape<T>::Mat shifted = x.colwise() - x.rowwise().maxCoeff();
  typename Tape<T>::Mat lse = shifted.array().exp().rowwise().sum().log().matrix();
  typename Tape<T>::Mat out = shifted.colwise() - lse.col(0);
  return t.push(std::move(out), t.requires_grad(a),
                [a](Tape<T>& tp, std::int32_t self) {
                  const auto& g = tp.grad_ref(self);
                  typename Tape<T>::Mat soft = tp.value_ref(self).array().exp().matrix();
                  typename Tape<T>::Mat gsum = g.rowwise().sum();
                  tp.accumulate(a, g - soft.cwiseProduct(gsum.col(0).replicate(1, soft.cols())));
                },
                "log_softmax_rows");
}

template <typename T>
Var layer_norm_rows(Tape<T>& t, Var a, T eps) {
  const auto& x = t.value(a);
  const auto cols = static_cast<T>(x.cols());
  Eigen::Matrix<T, Eigen::Dynamic, 1> mu = x.rowwise().mean();
  typename Tape<T>::Mat centered = x.colwise() - mu;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std =
      ((centered.cwiseAbs2().rowwise().sum() / cols).array() + eps).rsqrt().matrix();
  typename Tape<T>::Mat y = inv_std.asDiagonal() * centered;
  return t.push(std::move(y), t.requires_grad(a),
                [a, inv_std = std::move(inv_std)](Tape<T>& tp, std::int32_t self) {
                  const auto& g = tp.grad_ref(self);
                  const auto& y = tp.value_ref(self);
                  const auto n = static_cast<T>(y.cols());
                  Eigen::Matrix<T, Eigen::Dynamic, 1> g_mean = g.rowwise().sum() / n;
                  Eigen::Matrix<T, Eigen::Dynamic, 1> gy_mean = g.cwiseProduct(y).rowwise().sum() / n;
                  typename Tape<T>::Mat dx = g.colwise() - g_mean;
                  dx -= gy_mean.asDiagonal() * y;
                  tp.accumulate(a, inv_std.asDiagonal() * dx);
                },
                "layer_norm_rows");
}

template <typename T>
Var concat_cols(Tape<T>& t, Var a, Var b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  if (va.rows() != vb.rows()) throw ValidationError("concat_cols: row counts differ");
  typename Tape<T>::Mat out(va.rows(), va.cols() + vb.cols());
  out << va, vb;
  const Eigen::Index ca = va.cols(), cb = vb.cols();
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                [a, b, ca, cb](Tape<T>& tp, std::int32_t self) {
                  const auto& g = tp.grad_ref(self);
                  if (tp.requires_grad(a)) tp.accumulate(a, g.leftCols(ca));
                  if (tp.requires_grad(b)) tp.accumulate(b, g.rightCols(cb));
                },
                "concat_cols");
}

template <typename T>
Var slice_cols(Tape<T>& t, Var a, Eigen::Index start, Eigen::Index count) {
  const auto& va = t.value(a);
  if (start < 0 || count < 0 || start + count > va.cols()) throw ValidationError("slice_cols: range out of bounds");
  const Eigen::Index rows = va.rows(), cols = va.cols();
  return t.push(va.middleCols(start, count), t.requires_grad(a),
                [a, start, count, rows, cols](Tape<T>& tp, std::int32_t self) {
                  typename Tape<T>::Mat g = Tape<T>::Mat::Zero(rows, cols);
                  g.middleCols(start, count) = tp.grad_ref(self);
                  tp.accumulate(a, g);
                },
                "slice_cols");
}

template <typename T>
Var repeat_rows(Tape<T>& t, Var a, Eigen::Index times) {
  const auto& va = t.value(a);
  if (times < 1) throw ValidationError("repeat_rows: times must be positive");
  typename Tape<T>::Mat out(va.rows() * times, va.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = va.row(i / times);
  return t.push(std::move(out), t.requires_grad(a),
                [a, times](Tape<T>& tp, std::int32_t self) {
                  const auto& g = tp.grad_ref(self);
                  typename Tape<T>::Mat acc = Tape<T>::Mat::Zero(g.rows() / times, g.cols());
                  for (Eigen::Index i = 0; i < g.rows(); ++i) acc.row(i / times) += g.row(i);
                  tp.accumulate(a, acc);
                },
                "repeat_rows");
}

template <typename T>
Var sum(Tape<T>& t, Var a) {
  typename Tape<T>::Mat out(1, 1);
  out(0, 0) = t.value(a).sum();
  const Eigen::Index r = t.value(a).rows(), c = t.value(a).cols();
  return t.push(std::move(out), t.requires_grad(a),
                [a, r, c](Tape<T>& tp, std::int32_t self) {
                  tp.accumulate(a, Tape<T>::Mat::Constant(r, c, tp.grad_ref(self)(0, 0)));
                },
                "sum");
}

template <typename T>
Var mean(Tape<T>& t, Var a) {
  const auto n = static_cast<T>(t.value(a).size());
  return scale(t, sum(t, a), T(1) / n);
}

template <typename T>
Var grouped_attention(Tape<T>& t, Var q, Var k, Var v, Eigen::Index group, int heads, std::span<const std::uint8_t> key_mask) {
  using Mat = typename Tape<T>::Mat;
  const Mat& vq = t.value(q);
  const Mat& vk = t.value(k);
  const Mat& vv = t.value(v);
  require_same_shape(vq, vk, "attention");
  require_same_shape(vq, vv, "attention");
  const Eigen::Index rows = vq.rows(), d = vq.cols();
  if (group < 1 || rows % group != 0) throw ValidationError("attention: rows not divisible by group size");
  if (heads < 1 || d % heads != 0) throw ValidationError("attention: width not divisible by head count");
  if (!key_mask.empty() && static_cast<Eigen::Index>(key_mask.size()) != rows) {
    throw ValidationError("attention: key mask length mismatch");
  }
  const Eigen::Index groups = rows / group, dh = d / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));

  // Additive key bias per group: 0 for attendable keys, -inf-like otherwise.
  std::vector<Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(static_cast<std::size_t>(groups));
  for (Eigen::Index g = 0; g < groups; ++g) {
    auto& b = bias[static_cast<std::size_t>(g)];
    b = Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(group);
    if (key_mask.empty()) continue;
    bool any = false;
    for (Eigen::Index j = 0; j < group; ++j) any = any || key_mask[static_cast<std::size_t>(g * group + j)];
    if (!any) continue;
    for (Eigen::Index j = 0; j < group; ++j) {
      if (!key_mask[static_cast<std::size_t>(g * group + j)]) b[j] = T(-1e9);
    }
  }

  std::vector<Mat> probs(static_cast<std::size_t>(groups * heads));
  Mat out(rows, d);
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = vq.block(g * group, h * dh, group, dh);
      const auto kb = vk.block(g * group, h * dh, group, dh);
      const auto vb = vv.block(g * group, h * dh, group, dh);
      Mat s = (qb * kb.transpose()) * scale_factor;
      s.rowwise() += bias[static_cast<std::size_t>(g)];
      s = (s.colwise() - s.rowwise().maxCoeff()).array().exp().matrix();
      s.array().colwise() /= s.rowwise().sum().array();
      out.block(g * group, h * dh, group, dh).noalias() = s * vb;
      probs[static_cast<std::size_t>(g * heads + h)] = std::move(s);
    }
  }

  const bool needs = t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v);
  return t.push(
      std::move(out), needs,
      [q, k, v, group, heads, groups, dh, scale_factor, probs = std::move(probs)](Tape<T>& tp, std::int32_t self) {
        const Mat& g = tp.grad_ref(self);
        const Mat& vq = tp.value(q);
        const Mat& vk = tp.value(k);
        const Mat& vv = tp.value(v);
        Mat dq = Mat::Zero(vq.rows(), vq.cols());
        Mat dk = Mat::Zero(vq.rows(), vq.cols());
        Mat dv = Mat::Zero(vq.rows(), vq.cols());
        for (Eigen::Index gi = 0; gi < groups; ++gi) {
          for (int h = 0; h < heads; ++h) {
            const Mat& p = probs[static_cast<std::size_t>(gi * heads + h)];
            const auto go = g.block(gi * group, h * dh, group, dh);
            const auto qb = vq.block(gi * group, h * dh, group, dh);
            const auto kb = vk.block(gi * group, h * dh, group, dh);
            const auto vb = vv.block(gi * group, h * dh, group, dh);
            dv.block(gi * group, h * dh, group, dh).noalias() = p.transpose() * go;
            Mat dp = go * vb.transpose();
            Mat ds = p.cwiseProduct(dp.colwise() - dp.cwiseProduct(p).rowwise().sum());
            ds *= scale_factor;
            dq.block(gi * group, h * dh, group, dh).noalias() = ds * kb;
            dk.block(gi * group, h * dh, group, dh).noalias() = ds.transpose() * qb;
          }
        }
        tp.accumulate(q, dq);
        tp.accumulate(k, dk);
        tp.accumulate(v, dv);
      },
      "grouped_attention");
}

#define SHAPESET_INSTANTIATE(T)                                                                     \
  template class Tape<T>;                                                                           \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                       \
  template Var add<T>(Tape<T>&, Var, Var);                                                          \
  template Var sub<T>(Tape<T>&, Var, Var);                                                          \
  template Var mul<T>(Tape<T>&, Var, Var);                                                          \
  template Var add_row<T>(Tape<T>&, Var, Var);                                                      \
  template Var scale<T>(Tape<T>&, Var, T);                                                          \
  template Var add_scalar<T>(Tape<T>&, Var, T);                                                     \
  template Var square<T>(Tape<T>&, Var);                                                            \
  template Var log<T>(Tape<T>&, Var);                                                               \
  template Var gelu<T>(Tape<T>&, Var);                                                              \
  template Var relu<T>(Tape<T>&, Var);                                                              \
  template Var softmax_rows<T>(Tape<T>&, Var);                                                      \
  template Var log_softmax_rows<T>(Tape<T>&, Var);                                                  \
  template Var layer_norm_rows<T>(Tape<T>&, Var, T);                                                \
  template Var concat_cols<T>(Tape<T>&, Var, Var);                                                  \
  template Var slice_cols<T>(Tape<T>&, Var, Eigen::Index, Eigen::Index);                            \
  template Var repeat_rows<T>(Tape<T>&, Var, Eigen::Index);                                         \
  template Var sum<T>(Tape<T>&, Var);                                                               \
  template Var mean<T>(Tape<T>&, Var);                                                              \
  template Var grouped_attention<T>(Tape<T>&, Var, Var, Var, Eigen::Index, int, std::span<const std::uint8_t>);

SHAPESET_INSTANTIATE(float)
SHAPESET_INSTANTIATE(double)

#undef SHAPESET_INSTANTIATE

}  // namespace shapeset::ad
