#pragma once

#include <filesystem>

#include "shapeset/synthetic.hpp"

namespace shapeset {

/// Dataset directory layout:
///
///   manifest.json      name, m, p, category table, shape index
///   templates.bin      [count u32] then per category [id u32][p x 3 float32]
///   shapes/<id>.bin    [part_count u32] then per part [category u32][p x 3 float32]
///
/// All integers and floats little-endian. Coordinates are stored as float32,
/// so datasets whose coordinates are float32-representable round-trip exactly.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Throws ValidationError on a missing or malformed manifest, a part file whose
/// size disagrees with p, or an unknown category id.
Dataset read_dataset(const std::filesystem::path& dir);

/// Single-shape binary encoding used by shapes/<id>.bin.
std::vector<std::uint8_t> encode_shape_binary(const SegmentedShape& shape);
SegmentedShape decode_shape_binary(std::span<const std::uint8_t> bytes, int points_per_part, int category_count,
                                   const std::string& id);

}  // namespace shapeset
