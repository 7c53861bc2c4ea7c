#include "shapeset/io.hpp"

#include <cctype>
#include <charconv>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "shapeset/binary_io.hpp"
#include "shapeset/error.hpp"

namespace shapeset {

std::string format_ply(const SegmentedShape& shape) {
  std::size_t n = 0;
  for (const auto& part : shape.parts) n += part.points.size();
  std::string out = fmt::format(
      "ply\nformat ascii 1.0\ncomment id {}\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n"
      "property int part\nend_header\n",
      shape.id.empty() ? "unnamed" : shape.id, n);
  for (const auto& part : shape.parts) {
    for (const auto& p : part.points) {
      out += fmt::format("{} {} {} {}\n", static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z),
                         part.category);
    }
  }
  return out;
}

void write_ply(const SegmentedShape& shape, const std::filesystem::path& path) { write_text_file(path, format_ply(shape)); }

LabeledCloud parse_ply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw ValidationError("ply: missing 'ply' magic");

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> props;
    std::vector<bool> single;  // float32 property
  };
  std::vector<Element> elements;
  bool ascii = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") break;
    if (word == "format") {
      std::string fmt_name;
      ls >> fmt_name;
      ascii = fmt_name == "ascii";
    } else if (word == "element") {
      Element e;
      ls >> e.name >> e.count;
      if (!ls) throw ValidationError("ply: malformed element line");
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw ValidationError("ply: property before element");
      std::string type, name;
      ls >> type;
      if (type == "list") {
        std::string a, b;
        ls >> a >> b;
      }
      ls >> name;
      elements.back().props.push_back(name);
      elements.back().single.push_back(type == "float" || type == "float32");
    }
  }
  if (!ascii) throw ValidationError("ply: only ASCII PLY is supported");

  LabeledCloud out;
  for (const auto& e : elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i) std::getline(in, line);
      continue;
    }
    int ix = -1, iy = -1, iz = -1, ip = -1;
    for (std::size_t k = 0; k < e.props.size(); ++k) {
      const auto& p = e.props[k];
      const int kk = static_cast<int>(k);
      if (p == "x") ix = kk;
      if (p == "y") iy = kk;
      if (p == "z") iz = kk;
      if (p == "part") ip = kk;
    }
    if (ix < 0 || iy < 0 || iz < 0) throw ValidationError("ply: vertex element lacks x/y/z");
    std::vector<double> vals(e.props.size());
    for (std::size_t i = 0; i < e.count; ++i) {
      if (!std::getline(in, line)) throw ValidationError("ply: fewer vertices than declared");
      const char* pos = line.data();
      const char* end = line.data() + line.size();
      for (std::size_t k = 0; k < vals.size(); ++k) {
        while (pos < end && std::isspace(static_cast<unsigned char>(*pos))) ++pos;
        // Float properties parse straight to float, so float text round-trips exactly.
        std::from_chars_result res;
        if (e.single[k]) {
          float f = 0.0f;
          res = std::from_chars(pos, end, f);
          vals[k] = f;
        } else {
          res = std::from_chars(pos, end, vals[k]);
        }
        if (res.ec != std::errc{}) throw ValidationError("ply: malformed vertex line " + std::to_string(i));
        pos = res.ptr;
      }
      const Point3 pt{vals[static_cast<std::size_t>(ix)], vals[static_cast<std::size_t>(iy)], vals[static_cast<std::size_t>(iz)]};
      if (!pt.finite()) throw ValidationError("ply: non-finite vertex " + std::to_string(i));
      out.points.push_back(pt);
      out.part.push_back(ip < 0 ? -1 : static_cast<int>(vals[static_cast<std::size_t>(ip)]));
    }
  }
  if (out.points.empty()) throw ValidationError("ply: no vertices");
  return out;
}

LabeledCloud read_ply(const std::filesystem::path& path) { return parse_ply(read_text_file(path)); }

std::string latents_to_json(const std::vector<ShapeLatent>& latents, const LatentLayout& layout) {
  nlohmann::ordered_json j;
  j["m"] = layout.m;
  j["q"] = layout.q;
  j["latents"] = nlohmann::json::array();
  for (const auto& z : latents) {
    layout.check(z);
    nlohmann::ordered_json item;
    item["values"] = nlohmann::json::array();
    for (int r = 0; r < z.rows(); ++r) {
      std::vector<double> row;
      for (int c = 0; c < layout.width(); ++c) row.push_back(z.values(r, c));
      item["values"].push_back(row);
    }
    item["mask"] = std::vector<int>(z.mask.begin(), z.mask.end());
    j["latents"].push_back(item);
  }
  return j.dump(1);
}

std::vector<ShapeLatent> latents_from_json(const std::string& text, const LatentLayout& layout) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("latents json: ") + e.what());
  }
  try {
    if (j.at("m").get<int>() != layout.m || j.at("q").get<int>() != layout.q) {
      throw ConfigMismatchError("latents json: m/q differ from the model");
    }
    std::vector<ShapeLatent> out;
    for (const auto& item : j.at("latents")) {
      ShapeLatent z;
      const auto& rows = item.at("values");
      if (static_cast<int>(rows.size()) != layout.m) throw ValidationError("latents json: expected m rows");
      z.values.resize(layout.m, layout.width());
      for (int r = 0; r < layout.m; ++r) {
        const auto& row = rows.at(static_cast<std::size_t>(r));
        if (static_cast<int>(row.size()) != layout.width()) throw ValidationError("latents json: expected q+m+1 columns");
        for (int c = 0; c < layout.width(); ++c) z.values(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
      }
      for (const auto& v : item.at("mask")) z.mask.push_back(static_cast<std::uint8_t>(v.get<int>() != 0));
      layout.check(z);
      out.push_back(std::move(z));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("latents json: ") + e.what());
  }
}

}  // namespace shapeset
