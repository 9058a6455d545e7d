#include "cdsp/scribble.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "cdsp/io.hpp"

namespace cdsp {

std::vector<Pixel> bresenham(Pixel a, Pixel b) {
  std::vector<Pixel> out;
  int r0 = a.first, c0 = a.second;
  const int r1 = b.first, c1 = b.second;
  const int dc = std::abs(c1 - c0), dr = -std::abs(r1 - r0);
  const int sc = c0 < c1 ? 1 : -1, sr = r0 < r1 ? 1 : -1;
  int err = dc + dr;
  for (;;) {
    out.emplace_back(r0, c0);
    if (r0 == r1 && c0 == c1) break;
    const int e2 = 2 * err;
    if (e2 >= dr) {
      err += dr;
      c0 += sc;
    }
    if (e2 <= dc) {
      err += dc;
      r0 += sr;
    }
  }
  return out;
}

std::vector<Pixel> polyline_chain(const ScribblePolyline& p) {
  CDSP_CHECK(!p.points.empty(), "polyline has no points");
  std::vector<Pixel> chain;
  chain.push_back(p.points[0]);
  for (size_t i = 1; i < p.points.size(); ++i) {
    auto seg = bresenham(p.points[i - 1], p.points[i]);
    chain.insert(chain.end(), seg.begin() + 1, seg.end());
  }
  return chain;
}

namespace {

// Disk offsets for radius thickness/2 (squared test keeps it integer).
std::vector<Pixel> disk_offsets(int thickness) {
  const double r = thickness / 2.0;
  const double r2 = r * r;
  const int ri = static_cast<int>(std::floor(r));
  std::vector<Pixel> out;
  for (int dy = -ri; dy <= ri; ++dy)
    for (int dx = -ri; dx <= ri; ++dx)
      if (dy * dy + dx * dx <= r2) out.emplace_back(dy, dx);
  return out;
}

double chain_step_len(const Pixel& a, const Pixel& b) {
  const int dr = a.first - b.first, dc = a.second - b.second;
  return std::sqrt(static_cast<double>(dr * dr + dc * dc));
}

}  // namespace

LabelMask rasterize(const ScribbleSet& s, int thickness) {
  CDSP_CHECK(thickness >= 1, "thickness must be >= 1, got ", thickness);
  CDSP_CHECK(s.height > 0 && s.width > 0, "scribble set has empty extent");
  LabelMask mask(s.height, s.width, LabelMask::kIgnore);
  const auto disk = disk_offsets(thickness);
  for (const auto& poly : s.polylines) {
    CDSP_CHECK(poly.class_id >= 0 && poly.class_id < 255, "class id ", poly.class_id,
               " out of range");
    for (const auto& pt : poly.points)
      CDSP_CHECK(mask.in_bounds(pt.first, pt.second), "polyline point (", pt.first, ",",
                 pt.second, ") outside ", s.height, "x", s.width, " image");
    for (const auto& px : polyline_chain(poly))
      for (const auto& d : disk) {
        const int r = px.first + d.first, c = px.second + d.second;
        if (mask.in_bounds(r, c)) mask.at(r, c) = static_cast<uint8_t>(poly.class_id);
      }
  }
  return mask;
}

std::vector<uint8_t> extract_image_classes(const ScribbleSet& s, int num_classes) {
  CDSP_CHECK(num_classes >= 1, "num_classes must be >= 1");
  std::vector<uint8_t> present(static_cast<size_t>(num_classes) + 1, 0);
  for (const auto& poly : s.polylines) {
    if (poly.class_id == 0) continue;  // background carries no image-level class
    CDSP_CHECK(poly.class_id <= num_classes, "class id ", poly.class_id, " exceeds K=",
               num_classes);
    present[static_cast<size_t>(poly.class_id)] = 1;
  }
  return present;
}

ScribbleSet shrink(const ScribbleSet& s, double ratio, uint64_t /*seed*/) {
  CDSP_CHECK(ratio >= 0.0 && ratio <= 1.0, "shrink ratio must be in [0,1], got ", ratio);
  if (ratio == 0.0) return s;
  ScribbleSet out;
  out.image_id = s.image_id;
  out.height = s.height;
  out.width = s.width;
  for (const auto& poly : s.polylines) {
    const auto chain = polyline_chain(poly);
    std::vector<double> cum(chain.size(), 0.0);
    for (size_t i = 1; i < chain.size(); ++i)
      cum[i] = cum[i - 1] + chain_step_len(chain[i - 1], chain[i]);
    const double total = cum.back();

    ScribblePolyline kept;
    kept.class_id = poly.class_id;
    if (ratio >= 1.0 || total == 0.0) {
      // Midpoint by arc length.
      const double mid = total / 2.0;
      size_t best = 0;
      for (size_t i = 1; i < chain.size(); ++i)
        if (std::abs(cum[i] - mid) < std::abs(cum[best] - mid)) best = i;
      kept.points.push_back(chain[best]);
    } else {
      const double keep = (1.0 - ratio) * total;
      const double lo = total / 2.0 - keep / 2.0;
      const double hi = total / 2.0 + keep / 2.0;
      for (size_t i = 0; i < chain.size(); ++i)
        if (cum[i] >= lo && cum[i] <= hi) kept.points.push_back(chain[i]);
      if (kept.points.empty()) kept.points.push_back(chain[chain.size() / 2]);
    }
    out.polylines.push_back(std::move(kept));
  }
  return out;
}

ScribbleSet drop(const ScribbleSet& s, double ratio, uint64_t seed) {
  CDSP_CHECK(ratio >= 0.0 && ratio <= 1.0, "drop ratio must be in [0,1], got ", ratio);
  if (ratio == 0.0) return s;
  ScribbleSet out;
  out.image_id = s.image_id;
  out.height = s.height;
  out.width = s.width;
  Rng rng(seed);
  for (const auto& poly : s.polylines) {
    if (poly.class_id == 0) {
      out.polylines.push_back(poly);
      continue;
    }
    if (!rng.bernoulli(ratio)) out.polylines.push_back(poly);
  }
  return out;
}

std::string scribbles_to_json(const ScribbleSet& s) {
  nlohmann::json j;
  j["image_id"] = s.image_id;
  j["height"] = s.height;
  j["width"] = s.width;
  j["polylines"] = nlohmann::json::array();
  for (const auto& poly : s.polylines) {
    nlohmann::json jp;
    jp["class_id"] = poly.class_id;
    jp["points"] = nlohmann::json::array();
    for (const auto& pt : poly.points) jp["points"].push_back({pt.first, pt.second});
    j["polylines"].push_back(std::move(jp));
  }
  return j.dump();
}

ScribbleSet scribbles_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(errc::invalid, "malformed scribble JSON: ", e.what());
  }
  ScribbleSet s;
  try {
    s.image_id = j.at("image_id").get<std::string>();
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    for (const auto& jp : j.at("polylines")) {
      ScribblePolyline poly;
      poly.class_id = jp.at("class_id").get<int>();
      for (const auto& pt : jp.at("points")) {
        CDSP_CHECK(pt.is_array() && pt.size() == 2, "point must be [row, col]");
        poly.points.emplace_back(pt[0].get<int>(), pt[1].get<int>());
      }
      CDSP_CHECK(!poly.points.empty(), "polyline with no points in scribble JSON");
      s.polylines.push_back(std::move(poly));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(errc::invalid, "scribble JSON missing field: ", e.what());
  }
  return s;
}

void save_scribbles(const std::string& path, const ScribbleSet& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(errc::io, "cannot open '", path, "' for writing");
  f << scribbles_to_json(s) << "\n";
  if (!f) fail(errc::io, "write failed for '", path, "'");
}

ScribbleSet load_scribbles(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(errc::io, "cannot open '", path, "' for reading");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return scribbles_from_json(text);
}

void save_mask_pgm(const std::string& path, const LabelMask& m) {
  save_pgm(path, m.height, m.width, m.values);
}

LabelMask load_mask_pgm(const std::string& path) {
  LabelMask m;
  load_pgm(path, m.height, m.width, m.values);
  return m;
}

}  // namespace cdsp
