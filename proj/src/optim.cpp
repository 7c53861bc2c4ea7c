#include "shapeset/optim.hpp"

#include <cmath>

#include "shapeset/error.hpp"

namespace shapeset {

Adam::Adam(AdamConfig config, const std::vector<Mat>& params) : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.push_back(Mat::Zero(p.rows(), p.cols()));
    v_.push_back(Mat::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(std::vector<Mat>& params, const std::vector<Mat>& grads, double learning_rate_scale) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw ValidationError("adam: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != m_[i].rows() || params[i].cols() != m_[i].cols() || grads[i].rows() != m_[i].rows() ||
        grads[i].cols() != m_[i].cols()) {
      throw ValidationError("adam: shape mismatch at tensor " + std::to_string(i));
    }
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = config_.learning_rate * learning_rate_scale;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = m_[i].array();
    auto v = v_[i].array();
    const auto g = grads[i].array();
    m = static_cast<float>(b1) * m + static_cast<float>(1.0 - b1) * g;
    v = static_cast<float>(b2) * v + static_cast<float>(1.0 - b2) * g.square();
    const auto m_hat = m / static_cast<float>(c1);
    const auto v_hat = v / static_cast<float>(c2);
    params[i].array() -= static_cast<float>(lr) * m_hat / (v_hat.sqrt() + static_cast<float>(config_.epsilon));
  }
}

double clip_grad_norm(std::vector<ad::Matrix<float>>& grads, double max_norm) {
  double total = 0.0;
  for (const auto& g : grads) total += g.cast<double>().squaredNorm();
  const double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0.0) {
    const auto s = static_cast<float>(max_norm / norm);
    for (auto& g : grads) g *= s;
  }
  return norm;
}

}  // namespace shapeset
