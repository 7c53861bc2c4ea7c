#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "shapeset/geometry.hpp"
#include "shapeset/latent.hpp"
#include "shapeset/synthetic.hpp"

namespace shapeset {

/// Points with an optional per-point part category (-1 when absent).
struct LabeledCloud {
  PointCloud points;
  std::vector<int> part;
};

/// ASCII PLY, vertex properties x y z (float) and part (int).
std::string format_ply(const SegmentedShape& shape);
void write_ply(const SegmentedShape& shape, const std::filesystem::path& path);

/// Accepts ASCII PLY with float/double x, y, z and an optional int `part`
/// property; faces and other elements are skipped.
LabeledCloud parse_ply(const std::string& text);
LabeledCloud read_ply(const std::filesystem::path& path);

/// {"m", "q", "latents": [{"values": [[row]...], "mask": [...]}]}
std::string latents_to_json(const std::vector<ShapeLatent>& latents, const LatentLayout& layout);
std::vector<ShapeLatent> latents_from_json(const std::string& text, const LatentLayout& layout);

}  // namespace shapeset
