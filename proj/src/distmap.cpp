#include "cdsp/distmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cdsp/io.hpp"

namespace cdsp {

namespace {

// Meijster's two-phase exact EDT. All arithmetic is integral, so the result
// matches the brute-force all-pairs minimum exactly.
std::vector<int64_t> edt_internal(const std::vector<uint8_t>& src, int h, int w) {
  const int64_t inf = h + w;  // inf^2 beats every true squared distance
  std::vector<int64_t> g(static_cast<size_t>(h) * w);
  for (int c = 0; c < w; ++c) {
    g[c] = src[c] ? 0 : inf;
    for (int r = 1; r < h; ++r) {
      const size_t i = static_cast<size_t>(r) * w + c;
      g[i] = src[i] ? 0 : std::min(inf, g[i - w] + 1);
    }
    for (int r = h - 2; r >= 0; --r) {
      const size_t i = static_cast<size_t>(r) * w + c;
      g[i] = std::min(g[i], g[i + w] + 1);
    }
  }

  std::vector<int64_t> dt(static_cast<size_t>(h) * w);
  std::vector<int> s(static_cast<size_t>(w)), t(static_cast<size_t>(w));
  for (int r = 0; r < h; ++r) {
    const int64_t* gr = &g[static_cast<size_t>(r) * w];
    auto fval = [gr](int x, int i) {
      const int64_t d = x - i;
      return d * d + gr[i] * gr[i];
    };
    auto sep = [gr](int i, int u) {
      return (static_cast<int64_t>(u) * u - static_cast<int64_t>(i) * i + gr[u] * gr[u] -
              gr[i] * gr[i]) /
             (2 * (static_cast<int64_t>(u) - i));
    };
    int q = 0;
    s[0] = 0;
    t[0] = 0;
    for (int u = 1; u < w; ++u) {
      while (q >= 0 && fval(t[q], s[q]) > fval(t[q], u)) --q;
      if (q < 0) {
        q = 0;
        s[0] = u;
      } else {
        const int64_t wx = 1 + sep(s[q], u);
        if (wx < w) {
          ++q;
          s[q] = u;
          t[q] = static_cast<int>(wx);
        }
      }
    }
    for (int u = w - 1; u >= 0; --u) {
      dt[static_cast<size_t>(r) * w + u] = fval(u, s[q]);
      if (u == t[q]) --q;
    }
  }
  return dt;
}

const char* kind_tag(DistanceMap::Kind k) {
  return k == DistanceMap::Kind::scribble_ds ? "ds" : "dc";
}

void fill_from_raw(DistanceMap& m) {
  m.values.resize(m.raw.size());
  if (m.degenerate) {
    std::fill(m.values.begin(), m.values.end(), 0.0f);
    return;
  }
  const bool is_ds = m.kind == DistanceMap::Kind::scribble_ds;
  for (size_t i = 0; i < m.raw.size(); ++i) {
    const float norm = static_cast<float>(m.raw[i]) / 255.0f;
    m.values[i] = is_ds ? 1.0f - norm : norm;
  }
}

DistanceMap build_map(const std::vector<Pixel>& sources, int h, int w,
                      DistanceMap::Kind kind, double lambda) {
  DistanceMap m;
  m.height = h;
  m.width = w;
  m.kind = kind;
  m.lambda = lambda;
  m.raw.assign(static_cast<size_t>(h) * w, 0);
  if (sources.empty()) {
    m.degenerate = true;
    fill_from_raw(m);
    return m;
  }
  const auto sq = squared_edt(sources, h, w);
  const double scale = std::exp(lambda);
  for (size_t i = 0; i < sq.size(); ++i) {
    const double d = std::floor(std::sqrt(scale * static_cast<double>(sq[i])));
    m.raw[i] = static_cast<uint8_t>(std::min(d, 255.0));
  }
  fill_from_raw(m);
  return m;
}

}  // namespace

std::vector<int32_t> squared_edt(const std::vector<uint8_t>& sources, int height, int width) {
  CDSP_CHECK(height > 0 && width > 0, "empty grid");
  CDSP_CHECK(static_cast<int64_t>(sources.size()) == static_cast<int64_t>(height) * width,
             "source mask size mismatch");
  bool any = false;
  for (uint8_t v : sources)
    if (v) {
      any = true;
      break;
    }
  if (!any) fail(errc::invalid, "squared_edt: empty source set");
  const auto dt = edt_internal(sources, height, width);
  std::vector<int32_t> out(dt.size());
  for (size_t i = 0; i < dt.size(); ++i) out[i] = static_cast<int32_t>(dt[i]);
  return out;
}

std::vector<int32_t> squared_edt(const std::vector<Pixel>& sources, int height, int width) {
  std::vector<uint8_t> mask(static_cast<size_t>(height) * width, 0);
  for (const auto& p : sources) {
    CDSP_CHECK(p.first >= 0 && p.first < height && p.second >= 0 && p.second < width,
               "source pixel (", p.first, ",", p.second, ") out of bounds");
    mask[static_cast<size_t>(p.first) * width + p.second] = 1;
  }
  return squared_edt(mask, height, width);
}

std::vector<Pixel> boundary_extract(const LabelMask& pseudo) {
  std::vector<Pixel> out;
  for (int r = 0; r < pseudo.height; ++r)
    for (int c = 0; c < pseudo.width; ++c) {
      const uint8_t v = pseudo.at(r, c);
      if (v < 1 || v == LabelMask::kIgnore) continue;
      const bool edge = r == 0 || r == pseudo.height - 1 || c == 0 || c == pseudo.width - 1 ||
                        pseudo.at(r - 1, c) != v || pseudo.at(r + 1, c) != v ||
                        pseudo.at(r, c - 1) != v || pseudo.at(r, c + 1) != v;
      if (edge) out.emplace_back(r, c);
    }
  return out;
}

DistanceMap scribble_distance_map(const LabelMask& scribble_raster, double lambda_s) {
  std::vector<Pixel> sources;
  for (int r = 0; r < scribble_raster.height; ++r)
    for (int c = 0; c < scribble_raster.width; ++c) {
      const uint8_t v = scribble_raster.at(r, c);
      if (v >= 1 && v != LabelMask::kIgnore) sources.emplace_back(r, c);
    }
  return build_map(sources, scribble_raster.height, scribble_raster.width,
                   DistanceMap::Kind::scribble_ds, lambda_s);
}

DistanceMap pseudo_boundary_distance_map(const LabelMask& pseudo, double lambda_c) {
  return build_map(boundary_extract(pseudo), pseudo.height, pseudo.width,
                   DistanceMap::Kind::pseudo_dc, lambda_c);
}

void save_distance_map_pgm(const std::string& path, const DistanceMap& m) {
  const std::string comment = strcat("cdsp-dm kind=", kind_tag(m.kind), " lambda=", [&] {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", m.lambda);
        return std::string(buf);
      }(), " degenerate=", m.degenerate ? 1 : 0);
  save_pgm(path, m.height, m.width, m.raw, comment);
}

DistanceMap load_distance_map_pgm(const std::string& path) {
  DistanceMap m;
  std::string comment;
  load_pgm(path, m.height, m.width, m.raw, &comment);
  if (comment.rfind("cdsp-dm ", 0) != 0)
    fail(errc::invalid, "'", path, "' carries no cdsp-dm metadata comment");
  std::string kind;
  std::istringstream is(comment.substr(8));
  std::string field;
  int degenerate = 0;
  while (is >> field) {
    if (field.rfind("kind=", 0) == 0) kind = field.substr(5);
    else if (field.rfind("lambda=", 0) == 0) m.lambda = std::stod(field.substr(7));
    else if (field.rfind("degenerate=", 0) == 0) degenerate = std::stoi(field.substr(11));
  }
  if (kind == "ds") m.kind = DistanceMap::Kind::scribble_ds;
  else if (kind == "dc") m.kind = DistanceMap::Kind::pseudo_dc;
  else fail(errc::invalid, "unknown distance-map kind '", kind, "' in '", path, "'");
  m.degenerate = degenerate != 0;
  fill_from_raw(m);
  return m;
}

void save_distance_map_tensor(const std::string& path, const DistanceMap& m) {
  TensorData<float> t({m.height, m.width}, std::vector<float>(m.values));
  save_tensor(path, t);
}

DistanceMap load_distance_map_tensor(const std::string& path, DistanceMap::Kind kind,
                                     double lambda) {
  auto t = load_tensor<float>(path);
  CDSP_CHECK(t.rank() == 2, "distance-map tensor must be HxW");
  DistanceMap m;
  m.height = t.shape[0];
  m.width = t.shape[1];
  m.kind = kind;
  m.lambda = lambda;
  m.values = std::move(t.data);
  m.raw.resize(m.values.size());
  bool all_zero = true;
  const bool is_ds = kind == DistanceMap::Kind::scribble_ds;
  for (size_t i = 0; i < m.values.size(); ++i) {
    const float v = m.values[i];
    CDSP_CHECK(v >= 0.0f && v <= 1.0f, "distance-map weight out of [0,1]");
    if (v != 0.0f) all_zero = false;
    const float norm = is_ds ? 1.0f - v : v;
    m.raw[i] = static_cast<uint8_t>(std::lround(norm * 255.0f));
  }
  m.degenerate = all_zero;
  return m;
}

}  // namespace cdsp
