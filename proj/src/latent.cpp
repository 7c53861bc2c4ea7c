#include "shapeset/latent.hpp"

#include <set>
#include <string>

#include "shapeset/error.hpp"

namespace shapeset {

int ShapeLatent::real_count() const {
  int n = 0;
  for (auto v : mask) n += v != 0;
  return n;
}

void LatentLayout::check(const ShapeLatent& latent) const {
  if (latent.values.rows() != m || latent.values.cols() != width()) {
    throw ValidationError("latent must be " + std::to_string(m) + "x" + std::to_string(width()) + ", got " +
                          std::to_string(latent.values.rows()) + "x" + std::to_string(latent.values.cols()));
  }
  if (static_cast<int>(latent.mask.size()) != m) throw ValidationError("latent mask must have m entries");
  if (!latent.values.allFinite()) throw NumericalError("latent contains non-finite values");
}

ShapeLatent padding_latent(const LatentLayout& layout, const LabelCodebook& codebook) {
  if (codebook.dimension() != layout.classes()) throw ConfigMismatchError("codebook dimension != m+1");
  ShapeLatent z;
  z.values = Eigen::MatrixXd::Zero(layout.m, layout.width());
  z.mask.assign(static_cast<std::size_t>(layout.m), 0);
  const Eigen::VectorXd pad = codebook.mean(codebook.padding_class());
  for (int r = 0; r < layout.m; ++r) z.values.row(r).tail(layout.classes()) = pad.transpose();
  return z;
}

ShapeLatent encode_shape(const SegmentedShape& shape, const std::vector<PartSSM>& ssms, const LabelCodebook& codebook,
                         const LatentLayout& layout, Rng* semantic_noise) {
  if (static_cast<int>(ssms.size()) != layout.m) throw ConfigMismatchError("encode_shape: need one SSM per category");
  if (static_cast<int>(shape.parts.size()) > layout.m) throw ValidationError("encode_shape: more parts than slots");
  ShapeLatent z = padding_latent(layout, codebook);
  int row = 0;
  for (int cat = 0; cat < layout.m; ++cat) {
    const CorrespondedCloud* part = shape.find(cat);
    if (!part) continue;
    const PartSSM& ssm = ssms[static_cast<std::size_t>(cat)];
    if (ssm.q() != layout.q) throw ConfigMismatchError("encode_shape: SSM q differs from latent q");
    z.values.row(row).head(layout.q) = encode_part(ssm, *part).transpose();
    const Eigen::VectorXd c = semantic_noise ? embed_label(codebook, cat, true, *semantic_noise) : codebook.mean(cat);
    z.values.row(row).tail(layout.classes()) = c.transpose();
    z.mask[static_cast<std::size_t>(row)] = 1;
    ++row;
  }
  return z;
}

std::vector<int> classify_rows(const ShapeLatent& latent, const LabelCodebook& codebook, const LatentLayout& layout) {
  layout.check(latent);
  std::vector<int> out;
  for (int r = 0; r < layout.m; ++r) {
    out.push_back(classify(codebook, latent.values.row(r).tail(layout.classes()).transpose()).label);
  }
  return out;
}

SegmentedShape decode_shape(const ShapeLatent& latent, const std::vector<PartSSM>& ssms,
                            const LabelCodebook& codebook, const LatentLayout& layout) {
  const auto classes = classify_rows(latent, codebook, layout);
  SegmentedShape shape;
  for (int r = 0; r < layout.m; ++r) {
    const int c = classes[static_cast<std::size_t>(r)];
    if (c == codebook.padding_class()) continue;
    const GeometryLatent zv = latent.values.row(r).head(layout.q).transpose();
    shape.parts.push_back(decode_part(ssms[static_cast<std::size_t>(c)], zv));
  }
  return shape;
}

bool structurally_valid(const SegmentedShape& shape, int required_category) {
  if (shape.parts.empty()) return false;
  std::set<int> seen;
  for (const auto& part : shape.parts) {
    if (!seen.insert(part.category).second) return false;
  }
  return seen.count(required_category) == 1;
}

PointCloud merge_parts(const SegmentedShape& shape) {
  PointCloud out;
  for (const auto& part : shape.parts) out.insert(out.end(), part.points.begin(), part.points.end());
  return out;
}

}  // namespace shapeset
