#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "shapeset/geometry.hpp"

namespace shapeset {

/// A semantic part class. `template_points` is the canonical part at nominal
/// parameters; correspondence is defined by its point order.
struct PartCategory {
  int id = 0;
  std::string name;
  PointCloud template_points;
  int parameter_count = 0;

  friend bool operator==(const PartCategory&, const PartCategory&) = default;
};

/// Exactly p points in template order for one part.
struct CorrespondedCloud {
  int category = 0;
  PointCloud points;

  friend bool operator==(const CorrespondedCloud&, const CorrespondedCloud&) = default;
};

struct SegmentedShape {
  std::string id;
  std::vector<CorrespondedCloud> parts;  // sorted by category, no duplicates

  const CorrespondedCloud* find(int category) const;
  bool has(int category) const { return find(category) != nullptr; }

  friend bool operator==(const SegmentedShape&, const SegmentedShape&) = default;
};

struct Dataset {
  std::string name;
  int points_per_part = 0;  // p
  std::vector<PartCategory> categories;  // dense ids 0..m-1
  std::vector<SegmentedShape> shapes;

  int category_count() const { return static_cast<int>(categories.size()); }

  /// All part clouds of one category, in shape order.
  std::vector<CorrespondedCloud> parts_of(int category) const;

  /// Throws ValidationError if any shape violates the dataset invariants.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr int kMaxFamilyCategories = 4;

/// Procedural chair-like family. Category order: seat, back, leg-group,
/// armrest-group; `category_count` keeps a prefix of that list.
struct FamilyConfig {
  std::string name = "chair";
  int points_per_part = 256;
  int category_count = 4;
  double amplitude = 1.0;
  std::array<double, kMaxFamilyCategories> presence{1.0, 0.9, 1.0, 0.4};

  void validate() const;
};

/// Per-part deformation parameters that produced a generated part.
struct PartTruth {
  int category = 0;
  std::vector<double> parameters;
};

struct SyntheticDataset {
  Dataset dataset;
  std::vector<std::vector<PartTruth>> truth;  // parallel to dataset.shapes
};

/// Category table with templates for a family config.
std::vector<PartCategory> family_categories(const FamilyConfig& family);

/// Displacement field of one deformation parameter, per template point.
std::vector<PointCloud> family_basis(const FamilyConfig& family, int category);

/// Deform a category template by a parameter vector (template + sum of fields).
PointCloud deform_part(const FamilyConfig& family, int category, const std::vector<double>& parameters);

SyntheticDataset generate_dataset(const FamilyConfig& family, int n, std::uint64_t seed);

/// Template-matching correspondence for uncorresponded clouds: align centroid
/// and RMS radius to the template, then take the nearest raw point for each
/// template index. Raw points may be reused.
CorrespondedCloud correspond_by_template(std::span<const Point3> raw, const PartCategory& category);

/// Round to float32 precision, the storage precision of datasets.
/// The volatile store keeps g++ 11 at -O3 from dropping the narrowing when it
/// vectorizes neighboring calls.
inline double to_storage(double v) {
  volatile float narrowed = static_cast<float>(v);
  return static_cast<double>(narrowed);
}

}  // namespace shapeset
