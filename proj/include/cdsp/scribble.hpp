// Scribble data model: vector polylines with class ids, rasterization into
// sparse label masks, image-level class extraction, and the shrink/drop
// perturbation protocols.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cdsp/common.hpp"

namespace cdsp {

using Pixel = std::pair<int, int>;  // (row, col)

struct ScribblePolyline {
  int class_id = 0;  // 0 = background, 1..K = foreground
  std::vector<Pixel> points;
};

struct ScribbleSet {
  std::string image_id;
  int height = 0;
  int width = 0;
  std::vector<ScribblePolyline> polylines;
};

// Per-pixel class-id raster; 255 marks unlabeled/ignored pixels.
struct LabelMask {
  static constexpr uint8_t kIgnore = 255;

  int height = 0;
  int width = 0;
  std::vector<uint8_t> values;

  LabelMask() = default;
  LabelMask(int h, int w, uint8_t fill = kIgnore)
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  uint8_t& at(int r, int c) { return values[static_cast<size_t>(r) * width + c]; }
  uint8_t at(int r, int c) const { return values[static_cast<size_t>(r) * width + c]; }
  bool in_bounds(int r, int c) const { return r >= 0 && r < height && c >= 0 && c < width; }
};

// Integer line between two pixels, endpoints included.
std::vector<Pixel> bresenham(Pixel a, Pixel b);

// Dense pixel chain of a polyline: concatenated per-segment Bresenham runs
// with duplicate joints removed.
std::vector<Pixel> polyline_chain(const ScribblePolyline& p);

// Stamps each polyline as its Bresenham chain dilated by a disk of radius
// thickness/2. Later polylines overwrite earlier ones at overlaps.
LabelMask rasterize(const ScribbleSet& s, int thickness);

// Multi-hot presence vector indexed by class id (size K+1, index 0 unused:
// the background class is never reported).
std::vector<uint8_t> extract_image_classes(const ScribbleSet& s, int num_classes);

// Keeps the central contiguous arc holding fraction (1-ratio) of each
// polyline's arc length; ratio 1 leaves the single midpoint. Deterministic;
// the seed is accepted for interface symmetry with drop().
ScribbleSet shrink(const ScribbleSet& s, double ratio, uint64_t seed);

// Removes each foreground polyline independently with probability `ratio`.
// Background polylines are always retained.
ScribbleSet drop(const ScribbleSet& s, double ratio, uint64_t seed);

// JSON schema: {image_id, height, width, polylines:[{class_id, points:[[r,c],...]}]}
std::string scribbles_to_json(const ScribbleSet& s);
ScribbleSet scribbles_from_json(const std::string& text);
void save_scribbles(const std::string& path, const ScribbleSet& s);
ScribbleSet load_scribbles(const std::string& path);

// LabelMask <-> binary PGM, pixel value = class id, 255 = ignore.
void save_mask_pgm(const std::string& path, const LabelMask& m);
LabelMask load_mask_pgm(const std::string& path);

}  // namespace cdsp
