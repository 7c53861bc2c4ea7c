#include "shapeset/semantics.hpp"

#include <cmath>
#include <string>

#include "shapeset/error.hpp"

namespace shapeset {

LabelCodebook::LabelCodebook(Eigen::MatrixXd means, double sigma) : means_(std::move(means)), sigma_(sigma) {
  if (means_.rows() < 1 || means_.cols() < 1) throw ValidationError("codebook: no classes");
  if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) throw ValidationError("codebook: sigma must be positive");
  if (!means_.allFinite()) throw ValidationError("codebook: means must be finite");
  for (Eigen::Index i = 0; i < means_.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < means_.rows(); ++j) {
      if (means_.row(i) == means_.row(j)) throw ValidationError("codebook: class means must be distinct");
    }
  }
}

LabelCodebook LabelCodebook::standard(int m, double sigma) {
  if (m < 1) throw ValidationError("codebook: m must be positive");
  return LabelCodebook(2.0 * Eigen::MatrixXd::Identity(m + 1, m + 1), sigma);
}

Eigen::VectorXd LabelCodebook::mean(int k) const {
  if (k < 0 || k >= class_count()) {
    throw ValidationError("label class " + std::to_string(k) + " outside [0, " + std::to_string(class_count() - 1) + "]");
  }
  return means_.row(k).transpose();
}

SemanticsLatent embed_label(const LabelCodebook& codebook, int k, bool noisy, Rng& rng) {
  SemanticsLatent z = codebook.mean(k);
  if (noisy) {
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] += codebook.sigma() * rng.normal();
  }
  return z;
}

SemanticsLatent embed_label(const LabelCodebook& codebook, int k, bool noisy, std::uint64_t seed) {
  Rng rng(seed);
  return embed_label(codebook, k, noisy, rng);
}

Classification classify(const LabelCodebook& codebook, const SemanticsLatent& z) {
  if (z.size() != codebook.dimension()) {
    throw ValidationError("classify: semantics latent has " + std::to_string(z.size()) + " dims, expected " +
                          std::to_string(codebook.dimension()));
  }
  const int k = codebook.class_count();
  Eigen::VectorXd logits(k);
  const double inv = 1.0 / (2.0 * codebook.sigma() * codebook.sigma());
  for (int c = 0; c < k; ++c) logits[c] = -(z - codebook.means().row(c).transpose()).squaredNorm() * inv;

  Classification out;
  out.label = 0;
  for (int c = 1; c < k; ++c) {
    if (logits[c] > logits[out.label]) out.label = c;
  }
  out.probabilities = (logits.array() - logits[out.label]).exp();
  out.probabilities /= out.probabilities.sum();
  return out;
}

}  // namespace shapeset
