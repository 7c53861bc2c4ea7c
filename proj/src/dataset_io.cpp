#include "shapeset/dataset_io.hpp"

#include <json.hpp>
#include <string>

#include "shapeset/binary_io.hpp"
#include "shapeset/error.hpp"

namespace shapeset {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

void put_points(ByteWriter& w, const PointCloud& pts) {
  for (const auto& p : pts) {
    w.put(static_cast<float>(p.x));
    w.put(static_cast<float>(p.y));
    w.put(static_cast<float>(p.z));
  }
}

PointCloud get_points(ByteReader& r, int p) {
  PointCloud pts(static_cast<std::size_t>(p));
  for (auto& pt : pts) {
    pt.x = r.get<float>();
    pt.y = r.get<float>();
    pt.z = r.get<float>();
  }
  return pts;
}

// Shape ids become file names; keep them to a portable character set.
void check_shape_id(const std::string& id) {
  if (id.empty()) throw ValidationError("shape id must be nonempty");
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
                    c == '.';
    if (!ok || id == "." || id == "..") throw ValidationError("shape id '" + id + "' contains unsupported characters");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_shape_binary(const SegmentedShape& shape) {
  ByteWriter w;
  w.put(static_cast<std::uint32_t>(shape.parts.size()));
  for (const auto& part : shape.parts) {
    w.put(static_cast<std::uint32_t>(part.category));
    put_points(w, part.points);
  }
  return std::move(w.bytes());
}

SegmentedShape decode_shape_binary(std::span<const std::uint8_t> bytes, int points_per_part, int category_count,
                                   const std::string& id) {
  ByteReader r(bytes, "shape '" + id + "'");
  const auto part_count = r.get<std::uint32_t>();
  const std::size_t expected = 4 + static_cast<std::size_t>(part_count) * (4 + 12 * static_cast<std::size_t>(points_per_part));
  if (bytes.size() != expected) {
    throw ValidationError("shape '" + id + "': point-count mismatch (file holds " + std::to_string(bytes.size()) +
                          " bytes, manifest p=" + std::to_string(points_per_part) + " implies " +
                          std::to_string(expected) + ")");
  }
  SegmentedShape shape;
  shape.id = id;
  for (std::uint32_t k = 0; k < part_count; ++k) {
    const auto cat = r.get<std::uint32_t>();
    if (cat >= static_cast<std::uint32_t>(category_count)) {
      throw ValidationError("shape '" + id + "': unknown category id " + std::to_string(cat));
    }
    shape.parts.push_back({static_cast<int>(cat), get_points(r, points_per_part)});
  }
  return shape;
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.validate();
  fs::create_directories(dir / "shapes");

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["name"] = dataset.name;
  manifest["m"] = dataset.category_count();
  manifest["p"] = dataset.points_per_part;
  manifest["categories"] = json::array();
  for (const auto& c : dataset.categories) {
    manifest["categories"].push_back({{"id", c.id}, {"name", c.name}, {"parameter_count", c.parameter_count}});
  }
  manifest["shapes"] = json::array();

  ByteWriter templates;
  templates.put(static_cast<std::uint32_t>(dataset.categories.size()));
  for (const auto& c : dataset.categories) {
    templates.put(static_cast<std::uint32_t>(c.id));
    put_points(templates, c.template_points);
  }
  write_file_bytes(dir / "templates.bin", templates.bytes());

  for (const auto& shape : dataset.shapes) {
    check_shape_id(shape.id);
    const std::string file = "shapes/" + shape.id + ".bin";
    write_file_bytes(dir / file, encode_shape_binary(shape));
    manifest["shapes"].push_back({{"id", shape.id}, {"file", file}, {"part_count", shape.parts.size()}});
  }
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw ValidationError("dataset '" + dir.string() + "': missing manifest.json");

  json manifest;
  try {
    manifest = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest: " + std::string(e.what()));
  }

  Dataset ds;
  try {
    if (manifest.at("format_version").get<int>() != kFormatVersion) {
      throw ValidationError("manifest: unsupported format_version");
    }
    ds.name = manifest.at("name").get<std::string>();
    const int m = manifest.at("m").get<int>();
    ds.points_per_part = manifest.at("p").get<int>();
    if (m < 1 || ds.points_per_part < 1) throw ValidationError("manifest: m and p must be positive");
    for (const auto& c : manifest.at("categories")) {
      PartCategory cat;
      cat.id = c.at("id").get<int>();
      cat.name = c.at("name").get<std::string>();
      cat.parameter_count = c.at("parameter_count").get<int>();
      ds.categories.push_back(std::move(cat));
    }
    if (static_cast<int>(ds.categories.size()) != m) throw ValidationError("manifest: category table size != m");

    const auto tbytes = read_file_bytes(dir / "templates.bin");
    ByteReader tr(tbytes, "templates.bin");
    if (tr.get<std::uint32_t>() != static_cast<std::uint32_t>(m)) throw ValidationError("templates.bin: count != m");
    for (int j = 0; j < m; ++j) {
      const auto id = tr.get<std::uint32_t>();
      if (id != static_cast<std::uint32_t>(j)) throw ValidationError("templates.bin: category ids out of order");
      ds.categories[static_cast<std::size_t>(j)].template_points = get_points(tr, ds.points_per_part);
    }
    if (tr.remaining() != 0) throw ValidationError("templates.bin: point-count mismatch with manifest p");

    for (const auto& s : manifest.at("shapes")) {
      const auto id = s.at("id").get<std::string>();
      check_shape_id(id);
      const auto bytes = read_file_bytes(dir / s.at("file").get<std::string>());
      ds.shapes.push_back(decode_shape_binary(bytes, ds.points_per_part, m, id));
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest: " + std::string(e.what()));
  }
  ds.validate();
  return ds;
}

}  // namespace shapeset
