#include "shapeset/applications.hpp"

#include <cmath>
#include <string>

#include "shapeset/error.hpp"
#include "shapeset/metrics.hpp"

namespace shapeset {

namespace {

void check_category(const Model& model, int category) {
  if (category < 0 || category >= model.layout.m) {
    throw ValidationError("category " + std::to_string(category) + " outside [0, " + std::to_string(model.layout.m) + ")");
  }
}

void check_geometry(const Model& model, const GeometryLatent& z) {
  if (z.size() != model.layout.q) {
    throw ValidationError("part latent has " + std::to_string(z.size()) + " dims, expected q=" + std::to_string(model.layout.q));
  }
  if (!z.allFinite()) throw ValidationError("part latent is not finite");
}

}  // namespace

CategoryMatch identify_category(std::span<const Point3> observed, std::span<const PartSSM> ssms) {
  if (ssms.empty()) throw ValidationError("identify_category: no SSMs loaded");
  require_valid_cloud(observed, "identify_category");
  CategoryMatch match;
  for (const auto& ssm : ssms) {
    const PointCloud mean = unflatten(ssm.mean);
    match.distances.push_back(mean_nearest_distance(observed, mean));
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < match.distances.size(); ++j) {
    if (match.distances[j] < match.distances[best]) best = j;
  }
  match.category = ssms[best].category;
  for (std::size_t j = 0; j < match.distances.size(); ++j) {
    if (j != best && match.distances[j] <= 1.1 * match.distances[best]) match.ambiguous = true;
  }
  return match;
}

CompletionResult cascaded_complete(const Model& model, std::span<const Point3> observed, int k, std::uint64_t seed,
                                   double ridge, const SampleOptions& options) {
  if (k < 1) throw ValidationError("complete: k must be positive");
  CompletionResult out;
  out.match = identify_category(observed, model.ssms);
  out.fit = fit_latent_least_squares(model.ssms[static_cast<std::size_t>(out.match.category)], observed, ridge);
  const FixedRow fixed{0, out.fit.z, out.match.category};
  out.latents = complete_latents(model, std::span(&fixed, 1), k, seed, options);
  for (const auto& z : out.latents) out.shapes.push_back(decode_shape(z, model.ssms, model.codebook, model.layout));
  return out;
}

int find_category_row(const Model& model, const ShapeLatent& latent, int category) {
  const auto classes = classify_rows(latent, model.codebook, model.layout);
  for (int r = 0; r < model.layout.m; ++r) {
    if (latent.mask[static_cast<std::size_t>(r)] && classes[static_cast<std::size_t>(r)] == category) return r;
  }
  return -1;
}

ShapeLatent add_part(const Model& model, const ShapeLatent& latent, int category, const GeometryLatent& z) {
  check_category(model, category);
  check_geometry(model, z);
  if (find_category_row(model, latent, category) >= 0) {
    throw ValidationError("add_part: category " + std::to_string(category) + " already present");
  }
  ShapeLatent out = latent;
  for (int r = 0; r < model.layout.m; ++r) {
    if (out.mask[static_cast<std::size_t>(r)]) continue;
    out.values.row(r).head(model.layout.q) = z.transpose();
    out.values.row(r).tail(model.layout.classes()) = model.codebook.mean(category).transpose();
    out.mask[static_cast<std::size_t>(r)] = 1;
    return out;
  }
  throw ValidationError("add_part: no free slot (all " + std::to_string(model.layout.m) + " rows in use)");
}

ShapeLatent replace_part(const Model& model, const ShapeLatent& latent, int category, const GeometryLatent& z) {
  check_category(model, category);
  check_geometry(model, z);
  const int row = find_category_row(model, latent, category);
  if (row < 0) throw ValidationError("replace_part: category " + std::to_string(category) + " not present");
  ShapeLatent out = latent;
  out.values.row(row).head(model.layout.q) = z.transpose();
  return out;
}

ShapeLatent remove_part(const Model& model, const ShapeLatent& latent, int category) {
  check_category(model, category);
  const int row = find_category_row(model, latent, category);
  if (row < 0) throw ValidationError("remove_part: category " + std::to_string(category) + " not present");
  ShapeLatent out = latent;
  out.values.row(row).head(model.layout.q).setZero();
  out.values.row(row).tail(model.layout.classes()) = model.codebook.mean(model.codebook.padding_class()).transpose();
  out.mask[static_cast<std::size_t>(row)] = 0;
  return out;
}

ShapeLatent interpolate_part(const Model& model, const ShapeLatent& a, const ShapeLatent& b, int category, double alpha) {
  check_category(model, category);
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("interpolate: alpha must lie in [0, 1]");
  const int ra = find_category_row(model, a, category);
  const int rb = find_category_row(model, b, category);
  if (ra < 0 || rb < 0) {
    throw ValidationError("interpolate: category " + std::to_string(category) + " missing in shape " + (ra < 0 ? "A" : "B"));
  }
  ShapeLatent out = a;
  const auto q = model.layout.q;
  out.values.row(ra).head(q) = (1.0 - alpha) * a.values.row(ra).head(q) + alpha * b.values.row(rb).head(q);
  return out;
}

int default_refine_start(const Model& model) {
  return std::max(1, static_cast<int>(std::lround(0.4 * model.schedule.steps())));
}

MixResult mix_and_refine(const Model& model, const ShapeLatent& a, const ShapeLatent& b, int category,
                         std::uint64_t seed, int t_start) {
  check_category(model, category);
  const int rb = find_category_row(model, b, category);
  if (rb < 0) throw ValidationError("mix: donor shape lacks category " + std::to_string(category));
  const GeometryLatent donor = b.values.row(rb).head(model.layout.q).transpose();
  MixResult out;
  out.mixed = find_category_row(model, a, category) >= 0 ? replace_part(model, a, category, donor)
                                                         : add_part(model, a, category, donor);
  out.row = find_category_row(model, out.mixed, category);
  const auto dims = leading_half_dims(model.layout.q);
  out.refined = refine_dims(model, out.mixed, out.row, dims, t_start < 0 ? default_refine_start(model) : t_start, seed);
  return out;
}

}  // namespace shapeset
