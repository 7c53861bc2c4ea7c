#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "shapeset/rng.hpp"

namespace shapeset {

using SemanticsLatent = Eigen::VectorXd;

/// Equal-prior isotropic Gaussian mixture over part labels. Class m (the last
/// one) is the empty/padding class.
class LabelCodebook {
 public:
  LabelCodebook() = default;

  /// One mean per row. Throws ValidationError on duplicate means or sigma <= 0.
  LabelCodebook(Eigen::MatrixXd means, double sigma);

  /// Means 2*e_k in R^{m+1}, sigma 0.15.
  static LabelCodebook standard(int m, double sigma = 0.15);

  int class_count() const { return static_cast<int>(means_.rows()); }
  int dimension() const { return static_cast<int>(means_.cols()); }
  int padding_class() const { return class_count() - 1; }
  double sigma() const { return sigma_; }
  const Eigen::MatrixXd& means() const { return means_; }
  Eigen::VectorXd mean(int k) const;

  friend bool operator==(const LabelCodebook& a, const LabelCodebook& b) {
    return a.sigma_ == b.sigma_ && a.means_ == b.means_;
  }

 private:
  Eigen::MatrixXd means_;
  double sigma_ = 0.0;
};

/// Class mean, or mean + sigma * N(0, I) drawn from `rng` when noisy.
SemanticsLatent embed_label(const LabelCodebook& codebook, int k, bool noisy, Rng& rng);
SemanticsLatent embed_label(const LabelCodebook& codebook, int k, bool noisy, std::uint64_t seed);

struct Classification {
  int label = 0;
  Eigen::VectorXd probabilities;
};

/// Posterior softmax(-|z - mean_k|^2 / (2 sigma^2)); argmax ties go to the
/// lowest class id.
Classification classify(const LabelCodebook& codebook, const SemanticsLatent& z);

}  // namespace shapeset
