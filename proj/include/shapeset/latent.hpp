#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "shapeset/rng.hpp"
#include "shapeset/semantics.hpp"
#include "shapeset/ssm.hpp"
#include "shapeset/synthetic.hpp"

namespace shapeset {

/// Shape-level latent set: m rows of [z_V (q) | z_C (m+1)] plus a mask of
/// real (non-padding) rows. Row order carries no meaning.
struct ShapeLatent {
  Eigen::MatrixXd values;
  std::vector<std::uint8_t> mask;

  int rows() const { return static_cast<int>(values.rows()); }
  int real_count() const;

  friend bool operator==(const ShapeLatent&, const ShapeLatent&) = default;
};

/// Dimensions shared by all latents of one model.
struct LatentLayout {
  int m = 4;
  int q = 64;

  int classes() const { return m + 1; }
  int width() const { return q + m + 1; }
  void check(const ShapeLatent& latent) const;

  friend bool operator==(const LatentLayout&, const LatentLayout&) = default;
};

/// All rows padding: zero geometry, padding-class embedding.
ShapeLatent padding_latent(const LatentLayout& layout, const LabelCodebook& codebook);

/// Encodes present parts (category order) into the leading rows and pads the
/// rest. Semantics use class means, or noisy GMM draws when `semantic_noise`
/// is given. Every SSM must share the layout's q.
ShapeLatent encode_shape(const SegmentedShape& shape, const std::vector<PartSSM>& ssms, const LabelCodebook& codebook,
                         const LatentLayout& layout, Rng* semantic_noise = nullptr);

/// Class of every row under the codebook.
std::vector<int> classify_rows(const ShapeLatent& latent, const LabelCodebook& codebook, const LatentLayout& layout);

/// Decodes rows whose semantics classify as a real category; rows classified
/// as padding are dropped. Duplicated categories are kept (see
/// `structurally_valid`).
SegmentedShape decode_shape(const ShapeLatent& latent, const std::vector<PartSSM>& ssms,
                            const LabelCodebook& codebook, const LatentLayout& layout);

/// At least one part, the required category present, no category twice.
bool structurally_valid(const SegmentedShape& shape, int required_category = 0);

/// Concatenated points of all parts.
PointCloud merge_parts(const SegmentedShape& shape);

}  // namespace shapeset
