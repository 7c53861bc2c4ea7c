#include "shapeset/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "shapeset/error.hpp"
#include "shapeset/rng.hpp"

namespace shapeset {

namespace {

constexpr int kParamsPerPart = 8;
constexpr std::array<const char*, kMaxFamilyCategories> kCategoryNames{"seat", "back", "leg-group", "armrest-group"};

// Nominal chair dimensions (y up, floor at y=0).
constexpr double kSeatHalfWidth = 0.45;
constexpr double kSeatHalfDepth = 0.42;
constexpr double kSeatTop = 0.45;
constexpr double kSeatThickness = 0.06;
constexpr double kBackHalfWidth = 0.42;
constexpr double kBackHeight = 0.50;
constexpr double kBackZ = -0.40;
constexpr double kBackThickness = 0.05;
constexpr double kLegSpreadX = 0.38;
constexpr double kLegSpreadZ = 0.36;
constexpr double kLegRadius = 0.03;
constexpr double kArmSpreadX = 0.47;
constexpr double kArmHeight = 0.68;
constexpr double kArmLength = 0.70;
constexpr double kArmHalfSize = 0.03;

// One template sample: nominal position plus the coordinates the
// deformation fields are expressed in.
struct Site {
  double a = 0, b = 0, c = 0;  // surface coordinates
  double s = 0;                // layer or along-axis coordinate
  double u = 0, v = 0;         // cross-section ring
  double sx = 0, sz = 0;       // member sign (leg corner / arm side)
};

// Closest factorization rows*cols == count with rows <= cols.
std::pair<int, int> grid_dims(int count) {
  int rows = static_cast<int>(std::sqrt(static_cast<double>(count)));
  while (rows > 1 && count % rows != 0) --rows;
  return {rows, count / rows};
}

double lerp_signed(int i, int n) { return n == 1 ? 0.0 : -1.0 + 2.0 * i / (n - 1); }
double lerp_unit(int i, int n) { return n == 1 ? 0.0 : static_cast<double>(i) / (n - 1); }

// Two-layer serpentine grid; a in [-1,1] across, b in [-1,1] or [0,1] along.
std::vector<Site> slab_sites(int p, bool unit_b) {
  const auto [rows, cols] = grid_dims(p / 2);
  std::vector<Site> sites;
  sites.reserve(static_cast<std::size_t>(p));
  for (int layer = 0; layer < 2; ++layer) {
    for (int r = 0; r < rows; ++r) {
      for (int k = 0; k < cols; ++k) {
        const int col = (r % 2 == 0) ? k : cols - 1 - k;
        Site st;
        st.a = lerp_signed(col, cols);
        st.b = unit_b ? lerp_unit(r, rows) : lerp_signed(r, rows);
        st.c = st.b;
        st.s = layer;
        sites.push_back(st);
      }
    }
  }
  return sites;
}

// `members` tubes, each a 4-point ring swept along s in [0,1]. Successive
// rings are twisted so a crop of a tube cannot be matched one ring further
// along by a pure translation.
std::vector<Site> tube_sites(int p, const std::vector<std::pair<double, double>>& signs) {
  constexpr double kTwist = 0.4;  // radians per ring
  const int members = static_cast<int>(signs.size());
  const int along = p / (4 * members);
  std::vector<Site> sites;
  sites.reserve(static_cast<std::size_t>(p));
  for (int m = 0; m < members; ++m) {
    for (int i = 0; i < along; ++i) {
      for (int j = 0; j < 4; ++j) {
        const double angle = j * std::numbers::pi / 2 + i * kTwist;
        Site st;
        st.s = lerp_unit(i, along);
        st.u = std::cos(angle);
        st.v = std::sin(angle);
        st.sx = signs[static_cast<std::size_t>(m)].first;
        st.sz = signs[static_cast<std::size_t>(m)].second;
        sites.push_back(st);
      }
    }
  }
  return sites;
}

std::vector<Site> category_sites(int category, int p) {
  switch (category) {
    case 0: return slab_sites(p, false);
    case 1: return slab_sites(p, true);
    case 2: return tube_sites(p, {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}});
    default: return tube_sites(p, {{-1, 0}, {1, 0}});
  }
}

Point3 nominal(int category, const Site& st) {
  switch (category) {
    case 0:
      return {kSeatHalfWidth * st.a, kSeatTop - st.s * kSeatThickness, kSeatHalfDepth * st.b};
    case 1:
      return {kBackHalfWidth * st.a, kSeatTop + kBackHeight * st.c, kBackZ - st.s * kBackThickness};
    case 2: {
      const double top = kSeatTop - kSeatThickness;
      return {st.sx * kLegSpreadX + kLegRadius * st.u, top - top * st.s, st.sz * kLegSpreadZ + kLegRadius * st.v};
    }
    default:
      return {st.sx * kArmSpreadX + kArmHalfSize * st.u, kArmHeight + kArmHalfSize * st.v,
              kArmLength * (st.s - 0.5)};
  }
}

// Displacement per unit of parameter k; every field is smooth in the site
// coordinates, so neighbouring template indices move together.
Point3 field(int category, int k, const Site& st) {
  switch (category) {
    case 0:
      switch (k) {
        case 0: return {st.a, 0, 0};                                          // width
        case 1: return {0, 0, st.b};                                          // depth
        case 2: return {0, 1, 0};                                             // height
        case 3: return {0, -st.s, 0};                                         // thickness
        case 4: return {0, (1 - st.s) * (1 - st.a * st.a) * (1 - st.b * st.b), 0};  // cushion
        case 5: return {0, st.b, 0};                                          // tilt
        case 6: return {st.a * st.b, 0, 0};                                   // taper
        default: return {0, 0, 1};                                            // fore-aft shift
      }
    case 1:
      switch (k) {
        case 0: return {st.a, 0, 0};              // width
        case 1: return {0, st.c, 0};              // height
        case 2: return {0, 1, 0};                 // base height
        case 3: return {0, 0, 1};                 // depth position
        case 4: return {0, 0, -st.c};             // lean
        case 5: return {0, 0, st.a * st.a};       // curvature
        case 6: return {st.a * st.c, 0, 0};       // top flare
        default: return {0, 0, -st.s};            // thickness
      }
    case 2: {
      const double bow = 4 * st.s * (1 - st.s);
      switch (k) {
        case 0: return {st.sx, 0, 0};                     // spread x
        case 1: return {0, 0, st.sz};                     // spread z
        case 2: return {0, 1, 0};                         // top height
        case 3: return {0, -st.s, 0};                     // length
        case 4: return {st.sx * bow, 0, st.sz * bow};     // bow
        case 5: return {st.sx * st.s, 0, st.sz * st.s};   // splay
        case 6: return {0, 0, st.s};                      // rake
        default: {                                        // cabriole S-curve
          const double w = std::sin(2 * std::numbers::pi * st.s);
          return {st.sx * w, 0, st.sz * w};
        }
      }
    }
    default:
      switch (k) {
        case 0: return {st.sx, 0, 0};                                  // spread
        case 1: return {0, 1, 0};                                      // height
        case 2: return {0, 0, 1};                                      // fore-aft shift
        case 3: return {0, 0, st.s - 0.5};                             // length
        case 4: return {st.sx * (st.s - 0.5), 0, 0};                   // toe-in
        case 5: return {0, 1 - 4 * (st.s - 0.5) * (st.s - 0.5), 0};    // arch
        case 6: return {0, st.s - 0.5, 0};                             // slope
        default: return {st.sx * std::sin(2 * std::numbers::pi * st.s), 0, 0};  // S-curve
      }
  }
}

double clamped_normal(Rng& rng) { return std::clamp(rng.normal(), -2.5, 2.5); }

// Parameters of all present parts of one shape. Shared global factors tie
// part geometry together (legs meet the seat, the back sits on it).
std::array<std::vector<double>, kMaxFamilyCategories> draw_parameters(Rng& rng) {
  const double g_width = clamped_normal(rng);
  const double g_depth = clamped_normal(rng);
  const double g_height = clamped_normal(rng);
  const double g_style = clamped_normal(rng);
  auto n = [&] { return clamped_normal(rng); };

  std::array<std::vector<double>, kMaxFamilyCategories> out;
  auto& seat = out[0];
  seat = {0.06 * g_width + 0.015 * n(), 0.05 * g_depth + 0.015 * n(), 0.05 * g_height + 0.015 * n(),
          0.02 * n(), 0.01 * g_style + 0.06 * n(), 0.03 * n(), 0.05 * n(), 0.03 * n()};
  const double dw = seat[0], dd = seat[1], dh = seat[2], dth = seat[3], dz = seat[7];

  out[1] = {0.9 * dw + 0.015 * n(), 0.07 * g_style + 0.03 * n(), dh + 0.03 * n(), dz - dd + 0.02 * n(),
            0.03 * g_style + 0.05 * n(), 0.05 * n(), 0.06 * n(), 0.02 * n()};
  out[2] = {0.9 * dw + 0.03 * n(), 0.9 * dd + 0.03 * n(), dh - dth + 0.03 * n(), dh - dth + 0.04 * n(),
            0.05 * n(), 0.05 * n(), dz + 0.05 * n(), 0.05 * n()};
  out[3] = {dw + 0.03 * n(), dh + 0.03 * n(), dz + 0.03 * n(), 0.8 * dd + 0.06 * n(),
            0.08 * n(), 0.06 * n(), 0.06 * n(), 0.06 * n()};
  return out;
}

}  // namespace

const CorrespondedCloud* SegmentedShape::find(int category) const {
  for (const auto& part : parts) {
    if (part.category == category) return &part;
  }
  return nullptr;
}

std::vector<CorrespondedCloud> Dataset::parts_of(int category) const {
  std::vector<CorrespondedCloud> out;
  for (const auto& shape : shapes) {
    if (const auto* part = shape.find(category)) out.push_back(*part);
  }
  return out;
}

void Dataset::validate() const {
  const int m = category_count();
  if (m < 1) throw ValidationError("dataset has no categories");
  if (points_per_part < 1) throw ValidationError("dataset point count must be positive");
  for (int j = 0; j < m; ++j) {
    const auto& cat = categories[static_cast<std::size_t>(j)];
    if (cat.id != j) throw ValidationError("category ids must be dense and ordered");
    if (static_cast<int>(cat.template_points.size()) != points_per_part) {
      throw ValidationError("template of category '" + cat.name + "' has wrong point count");
    }
  }
  for (const auto& shape : shapes) {
    if (static_cast<int>(shape.parts.size()) > m) throw ValidationError("shape '" + shape.id + "' has more than m parts");
    std::set<int> seen;
    for (const auto& part : shape.parts) {
      if (part.category < 0 || part.category >= m) {
        throw ValidationError("shape '" + shape.id + "': unknown category id " + std::to_string(part.category));
      }
      if (!seen.insert(part.category).second) {
        throw ValidationError("shape '" + shape.id + "': duplicate category " + std::to_string(part.category));
      }
      if (static_cast<int>(part.points.size()) != points_per_part) {
        throw ValidationError("shape '" + shape.id + "': part point count " + std::to_string(part.points.size()) +
                              " does not match p=" + std::to_string(points_per_part));
      }
    }
  }
}

void FamilyConfig::validate() const {
  if (points_per_part < 32 || points_per_part % 16 != 0) {
    throw ValidationError("family: points_per_part must be a multiple of 16 and at least 32");
  }
  if (category_count < 2 || category_count > kMaxFamilyCategories) {
    throw ValidationError("family: category_count must be in [2, 4]");
  }
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) throw ValidationError("family: amplitude must be >= 0");
  for (double pr : presence) {
    if (!(pr >= 0.0 && pr <= 1.0)) throw ValidationError("family: presence probabilities must lie in [0,1]");
  }
  if (presence[0] != 1.0) throw ValidationError("family: the seat must always be present");
}

std::vector<PartCategory> family_categories(const FamilyConfig& family) {
  family.validate();
  std::vector<PartCategory> cats;
  for (int j = 0; j < family.category_count; ++j) {
    PartCategory cat;
    cat.id = j;
    cat.name = kCategoryNames[static_cast<std::size_t>(j)];
    cat.parameter_count = kParamsPerPart;
    for (const auto& st : category_sites(j, family.points_per_part)) {
      const Point3 p = nominal(j, st);
      cat.template_points.push_back({to_storage(p.x), to_storage(p.y), to_storage(p.z)});
    }
    cats.push_back(std::move(cat));
  }
  return cats;
}

std::vector<PointCloud> family_basis(const FamilyConfig& family, int category) {
  family.validate();
  if (category < 0 || category >= family.category_count) throw ValidationError("family_basis: unknown category");
  const auto sites = category_sites(category, family.points_per_part);
  std::vector<PointCloud> basis(kParamsPerPart);
  for (int k = 0; k < kParamsPerPart; ++k) {
    for (const auto& st : sites) basis[static_cast<std::size_t>(k)].push_back(field(category, k, st));
  }
  return basis;
}

PointCloud deform_part(const FamilyConfig& family, int category, const std::vector<double>& parameters) {
  if (static_cast<int>(parameters.size()) != kParamsPerPart) throw ValidationError("deform_part: wrong parameter count");
  const auto sites = category_sites(category, family.points_per_part);
  PointCloud out;
  out.reserve(sites.size());
  for (const auto& st : sites) {
    Point3 p = nominal(category, st);
    for (int k = 0; k < kParamsPerPart; ++k) {
      const double w = parameters[static_cast<std::size_t>(k)];
      if (w != 0.0) p += field(category, k, st) * w;
    }
    out.push_back({to_storage(p.x), to_storage(p.y), to_storage(p.z)});
  }
  return out;
}

SyntheticDataset generate_dataset(const FamilyConfig& family, int n, std::uint64_t seed) {
  family.validate();
  if (n < 2) throw ValidationError("generate_dataset: n must be at least 2");

  SyntheticDataset out;
  out.dataset.name = family.name;
  out.dataset.points_per_part = family.points_per_part;
  out.dataset.categories = family_categories(family);
  out.dataset.shapes.reserve(static_cast<std::size_t>(n));
  out.truth.reserve(static_cast<std::size_t>(n));

  Rng root(seed);
  for (int i = 0; i < n; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i));
    auto params = draw_parameters(rng);
    SegmentedShape shape;
    shape.id = family.name + "_" + std::to_string(i);
    std::vector<PartTruth> truth;
    for (int j = 0; j < family.category_count; ++j) {
      const bool present = rng.bernoulli(family.presence[static_cast<std::size_t>(j)]);
      if (!present) continue;
      auto& theta = params[static_cast<std::size_t>(j)];
      for (double& v : theta) v *= family.amplitude;
      shape.parts.push_back({j, deform_part(family, j, theta)});
      truth.push_back({j, theta});
    }
    out.dataset.shapes.push_back(std::move(shape));
    out.truth.push_back(std::move(truth));
  }
  return out;
}

CorrespondedCloud correspond_by_template(std::span<const Point3> raw, const PartCategory& category) {
  require_valid_cloud(raw, "correspond_by_template");
  const auto& tmpl = category.template_points;
  require_valid_cloud(tmpl, "correspond_by_template (template)");

  auto rms_radius = [](std::span<const Point3> pts, const Point3& c) {
    double acc = 0.0;
    for (const auto& p : pts) acc += squared_distance(p, c);
    return std::sqrt(acc / static_cast<double>(pts.size()));
  };
  const Point3 raw_c = centroid(raw);
  const Point3 tmpl_c = centroid(tmpl);
  const double raw_r = rms_radius(raw, raw_c);
  const double tmpl_r = rms_radius(tmpl, tmpl_c);
  if (!(raw_r > 1e-12)) throw NumericalError("correspond_by_template: degenerate raw cloud");

  const double s = tmpl_r / raw_r;
  PointCloud aligned;
  aligned.reserve(raw.size());
  const bool identity = s == 1.0 && raw_c == tmpl_c;
  for (const auto& p : raw) aligned.push_back(identity ? p : (p - raw_c) * s + tmpl_c);

  const KdTree tree(aligned);
  CorrespondedCloud out{category.id, {}};
  out.points.reserve(tmpl.size());
  for (const auto& t : tmpl) out.points.push_back(aligned[tree.nearest(t).index]);
  return out;
}

}  // namespace shapeset
