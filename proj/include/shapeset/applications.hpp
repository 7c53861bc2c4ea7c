#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "shapeset/diffusion.hpp"
#include "shapeset/geometry.hpp"

namespace shapeset {

struct CategoryMatch {
  int category = 0;
  std::vector<double> distances;  // per category, mean NN distance to its mean shape
  bool ambiguous = false;         // runner-up within 10% of the best
};

/// Nearest SSM mean shape by one-directional mean nearest-neighbor distance
/// from the observed points; ties go to the lowest id.
CategoryMatch identify_category(std::span<const Point3> observed, std::span<const PartSSM> ssms);

struct CompletionResult {
  CategoryMatch match;
  LatentFit fit;
  std::vector<ShapeLatent> latents;
  std::vector<SegmentedShape> shapes;
};

/// identify -> least-squares latent fit -> guided completion with that part
/// pinned to row 0 -> decode. Every output carries the fitted part unchanged.
CompletionResult cascaded_complete(const Model& model, std::span<const Point3> observed, int k, std::uint64_t seed,
                                   double ridge = 1e-3, const SampleOptions& options = {});

/// Row holding a real part of `category`, or -1.
int find_category_row(const Model& model, const ShapeLatent& latent, int category);

/// Fills the first padding row. Errors when no slot is free or the category
/// is already present.
ShapeLatent add_part(const Model& model, const ShapeLatent& latent, int category, const GeometryLatent& z);

/// Swaps the geometry of the existing part of `category`.
ShapeLatent replace_part(const Model& model, const ShapeLatent& latent, int category, const GeometryLatent& z);

/// Turns the part of `category` back into a padding row.
ShapeLatent remove_part(const Model& model, const ShapeLatent& latent, int category);

/// Geometry of A's `category` row becomes (1-alpha) z_A + alpha z_B; all
/// other entries are A's.
ShapeLatent interpolate_part(const Model& model, const ShapeLatent& a, const ShapeLatent& b, int category, double alpha);

struct MixResult {
  ShapeLatent mixed;    // A with B's part of `category` swapped in (or added)
  ShapeLatent refined;  // mixed after refine_dims on that row
  int row = 0;
};

/// Part mixing followed by refinement of the leading half of the swapped
/// row's geometry dims, starting at t_start (default 0.4 T).
MixResult mix_and_refine(const Model& model, const ShapeLatent& a, const ShapeLatent& b, int category,
                         std::uint64_t seed, int t_start = -1);

int default_refine_start(const Model& model);

}  // namespace shapeset
