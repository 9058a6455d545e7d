#include "cdsp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "cdsp/distmap.hpp"
#include "cdsp/io.hpp"

namespace cdsp {

namespace fs = std::filesystem;

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - f * s);
  const double t = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Rgb class_base_color(int class_id, int k) {
  // hues spread over the wheel, moderately desaturated so classes overlap
  // under jitter and noise
  return hsv_to_rgb(static_cast<double>(class_id - 1) / std::max(k, 1), 0.45, 0.72);
}

struct ShapePixels {
  std::vector<Pixel> pixels;
};

ShapePixels make_disc(Rng& rng, int h, int w) {
  const int r = static_cast<int>(rng.randint(8, 13));
  const int cy = static_cast<int>(rng.randint(r + 2, h - r - 3));
  const int cx = static_cast<int>(rng.randint(r + 2, w - r - 3));
  ShapePixels out;
  for (int y = cy - r; y <= cy + r; ++y)
    for (int x = cx - r; x <= cx + r; ++x)
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) out.pixels.emplace_back(y, x);
  return out;
}

ShapePixels make_rect(Rng& rng, int h, int w) {
  const int hh = static_cast<int>(rng.randint(6, 11));
  const int hw = static_cast<int>(rng.randint(6, 11));
  const int cy = static_cast<int>(rng.randint(hh + 2, h - hh - 3));
  const int cx = static_cast<int>(rng.randint(hw + 2, w - hw - 3));
  ShapePixels out;
  for (int y = cy - hh; y <= cy + hh; ++y)
    for (int x = cx - hw; x <= cx + hw; ++x) out.pixels.emplace_back(y, x);
  return out;
}

// Keeps the largest 4-connected piece so sharp corners cannot pinch off into
// tiny stray components.
ShapePixels largest_component(const ShapePixels& shape, int h, int w) {
  if (shape.pixels.empty()) return shape;
  LabelMask tmp(h, w, 0);
  for (const auto& p : shape.pixels)
    if (p.first >= 0 && p.first < h && p.second >= 0 && p.second < w)
      tmp.at(p.first, p.second) = 1;
  std::vector<uint8_t> seen(tmp.values.size(), 0);
  ShapePixels best;
  for (const auto& start : shape.pixels) {
    const size_t sidx = static_cast<size_t>(start.first) * w + start.second;
    if (seen[sidx] || !tmp.values[sidx]) continue;
    ShapePixels comp;
    std::vector<Pixel> stack{start};
    seen[sidx] = 1;
    while (!stack.empty()) {
      auto [r, c] = stack.back();
      stack.pop_back();
      comp.pixels.emplace_back(r, c);
      const int nr[4] = {r - 1, r + 1, r, r};
      const int nc[4] = {c, c, c - 1, c + 1};
      for (int i = 0; i < 4; ++i) {
        if (nr[i] < 0 || nr[i] >= h || nc[i] < 0 || nc[i] >= w) continue;
        const size_t nidx = static_cast<size_t>(nr[i]) * w + nc[i];
        if (seen[nidx] || !tmp.values[nidx]) continue;
        seen[nidx] = 1;
        stack.emplace_back(nr[i], nc[i]);
      }
    }
    if (comp.pixels.size() > best.pixels.size()) best = std::move(comp);
  }
  return best;
}

ShapePixels make_triangle(Rng& rng, int h, int w) {
  for (int attempt = 0; attempt < 20; ++attempt) {
    const int radius = static_cast<int>(rng.randint(10, 14));
    const int cy = static_cast<int>(rng.randint(radius + 2, h - radius - 3));
    const int cx = static_cast<int>(rng.randint(radius + 2, w - radius - 3));
    double vx[3], vy[3];
    for (int i = 0; i < 3; ++i) {
      const double ang = (i + rng.uniform(0.05, 0.95)) * 2.0 * 3.14159265358979 / 3.0;
      const double rad = radius * rng.uniform(0.75, 1.0);
      vy[i] = cy + rad * std::sin(ang);
      vx[i] = cx + rad * std::cos(ang);
    }
    const double area =
        0.5 * std::abs((vx[1] - vx[0]) * (vy[2] - vy[0]) - (vx[2] - vx[0]) * (vy[1] - vy[0]));
    if (area < 110.0) continue;
    auto edge = [](double ax, double ay, double bx, double by, double px, double py) {
      return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    };
    ShapePixels out;
    for (int y = cy - radius - 1; y <= cy + radius + 1; ++y)
      for (int x = cx - radius - 1; x <= cx + radius + 1; ++x) {
        const double e0 = edge(vx[0], vy[0], vx[1], vy[1], x, y);
        const double e1 = edge(vx[1], vy[1], vx[2], vy[2], x, y);
        const double e2 = edge(vx[2], vy[2], vx[0], vy[0], x, y);
        const bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
        if (inside) out.pixels.emplace_back(y, x);
      }
    if (!out.pixels.empty()) return out;
  }
  return make_disc(rng, h, w);  // extremely unlucky vertex draws
}

// 4-connected components for one class value; returns pixel lists.
std::vector<std::vector<Pixel>> components_of_value(const LabelMask& gt, uint8_t value) {
  std::vector<std::vector<Pixel>> comps;
  std::vector<uint8_t> seen(gt.values.size(), 0);
  for (int r = 0; r < gt.height; ++r)
    for (int c = 0; c < gt.width; ++c) {
      const size_t idx = static_cast<size_t>(r) * gt.width + c;
      if (seen[idx] || gt.values[idx] != value) continue;
      std::vector<Pixel> comp;
      std::vector<Pixel> stack{{r, c}};
      seen[idx] = 1;
      while (!stack.empty()) {
        auto [cr, cc] = stack.back();
        stack.pop_back();
        comp.emplace_back(cr, cc);
        const int nr[4] = {cr - 1, cr + 1, cr, cr};
        const int nc[4] = {cc, cc, cc - 1, cc + 1};
        for (int i = 0; i < 4; ++i) {
          if (nr[i] < 0 || nr[i] >= gt.height || nc[i] < 0 || nc[i] >= gt.width) continue;
          const size_t nidx = static_cast<size_t>(nr[i]) * gt.width + nc[i];
          if (seen[nidx] || gt.values[nidx] != value) continue;
          seen[nidx] = 1;
          stack.emplace_back(nr[i], nc[i]);
        }
      }
      comps.push_back(std::move(comp));
    }
  return comps;
}

struct RegionWalk {
  std::vector<Pixel> points;
};

double bbox_diag(const std::vector<Pixel>& pixels) {
  int rmin = INT32_MAX, rmax = INT32_MIN, cmin = INT32_MAX, cmax = INT32_MIN;
  for (const auto& p : pixels) {
    rmin = std::min(rmin, p.first);
    rmax = std::max(rmax, p.first);
    cmin = std::min(cmin, p.second);
    cmax = std::max(cmax, p.second);
  }
  const double dr = rmax - rmin, dc = cmax - cmin;
  return std::sqrt(dr * dr + dc * dc);
}

// Pixels of `region` whose squared distance to the region complement is >= 4,
// so a thickness-3 stamp cannot leave the region.
std::vector<Pixel> eroded_interior(const std::vector<Pixel>& region, int h, int w) {
  std::vector<uint8_t> complement(static_cast<size_t>(h) * w, 1);
  for (const auto& p : region)
    complement[static_cast<size_t>(p.first) * w + p.second] = 0;
  bool has_complement = false;
  for (uint8_t v : complement)
    if (v) {
      has_complement = true;
      break;
    }
  std::vector<Pixel> out;
  if (!has_complement) {
    for (const auto& p : region)
      if (p.first >= 2 && p.first < h - 2 && p.second >= 2 && p.second < w - 2)
        out.push_back(p);
    return out;
  }
  const auto sq = squared_edt(complement, h, w);
  for (const auto& p : region)
    if (sq[static_cast<size_t>(p.first) * w + p.second] >= 4) out.push_back(p);
  return out;
}

RegionWalk walk_region(const std::vector<Pixel>& region, int h, int w, Rng& rng) {
  auto interior = eroded_interior(region, h, w);
  const double diag = bbox_diag(region);
  if (interior.empty()) {
    // degrade to the single inmost point
    std::vector<uint8_t> complement(static_cast<size_t>(h) * w, 1);
    for (const auto& p : region)
      complement[static_cast<size_t>(p.first) * w + p.second] = 0;
    Pixel best = region.front();
    int32_t best_d = -1;
    bool any_complement =
        std::any_of(complement.begin(), complement.end(), [](uint8_t v) { return v != 0; });
    if (any_complement) {
      const auto sq = squared_edt(complement, h, w);
      for (const auto& p : region) {
        const int32_t d = sq[static_cast<size_t>(p.first) * w + p.second];
        if (d > best_d) {
          best_d = d;
          best = p;
        }
      }
    }
    return {{best}};
  }

  std::vector<uint8_t> member(static_cast<size_t>(h) * w, 0);
  for (const auto& p : interior)
    member[static_cast<size_t>(p.first) * w + p.second] = 1;

  const int target = std::clamp(static_cast<int>(0.45 * diag), 4, 22);
  RegionWalk best_walk;
  double best_extent = -1.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    RegionWalk walk;
    Pixel cur = interior[static_cast<size_t>(rng.randint(0, static_cast<int64_t>(interior.size()) - 1))];
    Pixel prev{-9, -9};
    walk.points.push_back(cur);
    for (int step = 0; step < target; ++step) {
      Pixel candidates[8];
      int n = 0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const int nr2 = cur.first + dr, nc2 = cur.second + dc;
          if (nr2 < 0 || nr2 >= h || nc2 < 0 || nc2 >= w) continue;
          if (!member[static_cast<size_t>(nr2) * w + nc2]) continue;
          if (nr2 == prev.first && nc2 == prev.second) continue;
          candidates[n++] = {nr2, nc2};
        }
      if (n == 0) break;
      const Pixel next = candidates[rng.randint(0, n - 1)];
      prev = cur;
      cur = next;
      walk.points.push_back(cur);
    }
    const double extent = bbox_diag(walk.points);
    if (extent >= 0.1 * diag) return walk;
    if (extent > best_extent) {
      best_extent = extent;
      best_walk = walk;
    }
  }
  return best_walk;
}

void paint_shape(TensorData<float>& img, LabelMask& gt, const ShapePixels& shape,
                 uint8_t class_id, const Rgb& color) {
  const int h = img.shape[1], w = img.shape[2];
  for (const auto& p : shape.pixels) {
    if (p.first < 0 || p.first >= h || p.second < 0 || p.second >= w) continue;
    if (class_id > 0) gt.at(p.first, p.second) = class_id;
    img.at(0, p.first, p.second) = static_cast<float>(color.r);
    img.at(1, p.first, p.second) = static_cast<float>(color.g);
    img.at(2, p.first, p.second) = static_cast<float>(color.b);
  }
}

bool overlaps_foreground(const LabelMask& gt, const ShapePixels& shape, int margin) {
  for (const auto& p : shape.pixels)
    for (int dr = -margin; dr <= margin; ++dr)
      for (int dc = -margin; dc <= margin; ++dc) {
        const int r = p.first + dr, c = p.second + dc;
        if (r < 0 || r >= gt.height || c < 0 || c >= gt.width) continue;
        if (gt.at(r, c) != 0) return true;
      }
  return false;
}

SynthSample gen_sample(int k, uint64_t sample_seed, int h, int w) {
  Rng rng(sample_seed);
  SynthSample s;
  s.gt = LabelMask(h, w, 0);
  s.image = TensorData<float>({3, h, w});

  // background: bilinear blend of four neutral corner colors
  double corners[4][3];
  for (auto& corner : corners)
    for (double& ch : corner) ch = rng.uniform(0.30, 0.62);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double fy = static_cast<double>(y) / (h - 1);
      const double fx = static_cast<double>(x) / (w - 1);
      for (int c = 0; c < 3; ++c) {
        const double top = corners[0][c] * (1 - fx) + corners[1][c] * fx;
        const double bot = corners[2][c] * (1 - fx) + corners[3][c] * fx;
        s.image.at(c, y, x) = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }

  // shapes with distinct classes, placed without touching each other
  const int want_shapes = static_cast<int>(rng.randint(1, std::min(3, k)));
  std::vector<int> class_ids(static_cast<size_t>(k));
  std::iota(class_ids.begin(), class_ids.end(), 1);
  std::shuffle(class_ids.begin(), class_ids.end(), rng.engine());
  std::vector<uint8_t> placed(static_cast<size_t>(k) + 1, 0);
  for (int si = 0; si < want_shapes; ++si) {
    const int class_id = class_ids[static_cast<size_t>(si)];
    for (int attempt = 0; attempt < 15; ++attempt) {
      const int kind = static_cast<int>(rng.randint(0, 2));
      ShapePixels shape = kind == 0   ? make_disc(rng, h, w)
                          : kind == 1 ? make_rect(rng, h, w)
                                      : make_triangle(rng, h, w);
      shape = largest_component(shape, h, w);
      if (overlaps_foreground(s.gt, shape, 2)) continue;
      Rgb base = class_base_color(class_id, k);
      const double jr = 0.10;
      Rgb color{std::clamp(base.r + rng.uniform(-jr, jr), 0.05, 0.95),
                std::clamp(base.g + rng.uniform(-jr, jr), 0.05, 0.95),
                std::clamp(base.b + rng.uniform(-jr, jr), 0.05, 0.95)};
      paint_shape(s.image, s.gt, shape, static_cast<uint8_t>(class_id), color);
      placed[static_cast<size_t>(class_id)] = 1;
      break;
    }
  }

  // distractor blobs carry class-like colors but stay background in gt
  const int n_distract = static_cast<int>(rng.randint(1, 2));
  for (int di = 0; di < n_distract; ++di) {
    std::vector<int> absent;
    for (int c = 1; c <= k; ++c)
      if (!placed[static_cast<size_t>(c)]) absent.push_back(c);
    Rgb base;
    if (!absent.empty())
      base = class_base_color(absent[static_cast<size_t>(rng.randint(
                                  0, static_cast<int64_t>(absent.size()) - 1))],
                              k);
    else
      base = hsv_to_rgb(rng.uniform(), 0.45, 0.72);
    const int r = static_cast<int>(rng.randint(3, 5));
    const int cy = static_cast<int>(rng.randint(r, h - r - 1));
    const int cx = static_cast<int>(rng.randint(r, w - r - 1));
    for (int y = cy - r; y <= cy + r; ++y)
      for (int x = cx - r; x <= cx + r; ++x) {
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) > r * r) continue;
        if (s.gt.at(y, x) != 0) continue;  // never punch into real shapes
        s.image.at(0, y, x) = static_cast<float>(base.r);
        s.image.at(1, y, x) = static_cast<float>(base.g);
        s.image.at(2, y, x) = static_cast<float>(base.b);
      }
  }

  // pixel noise, clamp, quantize to the /255 grid for lossless PPM round trips
  for (auto& v : s.image.data) {
    const double noisy = v + rng.normal(0.0, 0.055);
    const double clamped = std::clamp(noisy, 0.0, 1.0);
    v = static_cast<float>(std::lround(clamped * 255.0)) / 255.0f;
  }

  s.scribbles = synth_scribbles(s.gt, mix_seed(sample_seed, 0x5C12));
  s.scribbles.image_id = strcat("synth", sample_seed);
  s.class_vector = extract_image_classes(s.scribbles, k);
  return s;
}

}  // namespace

ScribbleSet synth_scribbles(const LabelMask& gt, uint64_t seed) {
  bool any_fg = false;
  for (uint8_t v : gt.values)
    if (v >= 1 && v != LabelMask::kIgnore) {
      any_fg = true;
      break;
    }
  CDSP_CHECK(any_fg, "synth_scribbles needs at least one foreground region");

  ScribbleSet s;
  s.height = gt.height;
  s.width = gt.width;

  uint64_t stream = 1;
  // background first: one walk in its largest component
  auto bg_comps = components_of_value(gt, 0);
  if (!bg_comps.empty()) {
    auto largest = std::max_element(bg_comps.begin(), bg_comps.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    Rng rng(mix_seed(seed, stream++));
    auto walk = walk_region(*largest, gt.height, gt.width, rng);
    if (!walk.points.empty()) s.polylines.push_back({0, walk.points});
  }

  std::vector<uint8_t> classes_present;
  for (uint8_t v : gt.values)
    if (v >= 1 && v != LabelMask::kIgnore &&
        std::find(classes_present.begin(), classes_present.end(), v) == classes_present.end())
      classes_present.push_back(v);
  std::sort(classes_present.begin(), classes_present.end());

  for (uint8_t cls : classes_present) {
    for (auto& comp : components_of_value(gt, cls)) {
      Rng rng(mix_seed(seed, stream++));
      auto walk = walk_region(comp, gt.height, gt.width, rng);
      if (!walk.points.empty())
        s.polylines.push_back({static_cast<int>(cls), walk.points});
    }
  }
  return s;
}

std::vector<SynthSample> gen_synthetic_dataset(int n, int k, uint64_t seed, int height,
                                               int width) {
  CDSP_CHECK(n >= 1, "need n >= 1 samples");
  CDSP_CHECK(k >= 1 && k <= 6, "K must lie in [1,6], got ", k);
  std::vector<SynthSample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back(gen_sample(k, mix_seed(seed, 0xDA7A + static_cast<uint64_t>(i)), height,
                             width));
  return out;
}

Dataset make_dataset(int n_train, int n_val, int k, uint64_t seed, int height, int width) {
  Dataset ds;
  ds.k = k;
  ds.seed = seed;
  ds.train = gen_synthetic_dataset(n_train, k, mix_seed(seed, 0x7121), height, width);
  ds.val = gen_synthetic_dataset(n_val, k, mix_seed(seed, 0x7122), height, width);
  return ds;
}

namespace {

void save_split(const fs::path& dir, const std::vector<SynthSample>& samples) {
  fs::create_directories(dir);
  char name[32];
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::snprintf(name, sizeof(name), "img%03zu.ppm", i);
    save_ppm((dir / name).string(), s.image.shape[1], s.image.shape[2],
             image_to_rgb8(s.image));
    std::snprintf(name, sizeof(name), "gt%03zu.pgm", i);
    save_mask_pgm((dir / name).string(), s.gt);
    std::snprintf(name, sizeof(name), "scrib%03zu.json", i);
    save_scribbles((dir / name).string(), s.scribbles);
  }
}

std::vector<SynthSample> load_split(const fs::path& dir, int n, int k) {
  std::vector<SynthSample> out;
  char name[32];
  for (int i = 0; i < n; ++i) {
    SynthSample s;
    std::snprintf(name, sizeof(name), "img%03d.ppm", i);
    int h, w;
    std::vector<uint8_t> rgb;
    load_ppm((dir / name).string(), h, w, rgb);
    s.image = rgb8_to_image(h, w, rgb);
    std::snprintf(name, sizeof(name), "gt%03d.pgm", i);
    s.gt = load_mask_pgm((dir / name).string());
    std::snprintf(name, sizeof(name), "scrib%03d.json", i);
    s.scribbles = load_scribbles((dir / name).string());
    s.class_vector = extract_image_classes(s.scribbles, k);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir);
  nlohmann::json meta;
  meta["k"] = ds.k;
  meta["seed"] = ds.seed;
  meta["n_train"] = ds.train.size();
  meta["n_val"] = ds.val.size();
  meta["height"] = ds.train.empty() ? (ds.val.empty() ? 0 : ds.val[0].gt.height)
                                    : ds.train[0].gt.height;
  meta["width"] = ds.train.empty() ? (ds.val.empty() ? 0 : ds.val[0].gt.width)
                                   : ds.train[0].gt.width;
  std::ofstream f(fs::path(dir) / "meta.json", std::ios::binary);
  if (!f) fail(errc::io, "cannot write '", dir, "/meta.json'");
  f << meta.dump(2) << "\n";
  save_split(fs::path(dir) / "train", ds.train);
  save_split(fs::path(dir) / "val", ds.val);
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "meta.json", std::ios::binary);
  if (!f) fail(errc::io, "cannot open '", dir, "/meta.json'");
  nlohmann::json meta;
  try {
    f >> meta;
  } catch (const nlohmann::json::exception& e) {
    fail(errc::invalid, "malformed dataset meta: ", e.what());
  }
  Dataset ds;
  ds.k = meta.at("k").get<int>();
  ds.seed = meta.value("seed", 0ULL);
  ds.train = load_split(fs::path(dir) / "train", meta.at("n_train").get<int>(), ds.k);
  ds.val = load_split(fs::path(dir) / "val", meta.at("n_val").get<int>(), ds.k);
  return ds;
}

}  // namespace cdsp
