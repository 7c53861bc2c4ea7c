#pragma once

#include <cstdint>
#include <vector>

#include "shapeset/autodiff.hpp"

namespace shapeset {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over a list of parameter tensors.
class Adam {
 public:
  using Mat = ad::Matrix<float>;

  Adam() = default;
  Adam(AdamConfig config, const std::vector<Mat>& params);

  /// Applies one update in place. `learning_rate_scale` multiplies the base
  /// rate (for warmup schedules). Throws ValidationError on shape mismatch.
  void step(std::vector<Mat>& params, const std::vector<Mat>& grads, double learning_rate_scale = 1.0);

  std::int64_t step_count() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Mat>& first_moment() const { return m_; }
  const std::vector<Mat>& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  std::int64_t steps_ = 0;
};

/// Rescales grads in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
double clip_grad_norm(std::vector<ad::Matrix<float>>& grads, double max_norm);

}  // namespace shapeset
