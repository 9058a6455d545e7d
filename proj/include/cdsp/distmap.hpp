// Exact squared Euclidean distance transform and the scribble / pseudo-label
// boundary distance maps d_s and d_c.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdsp/scribble.hpp"
#include "cdsp/tensor.hpp"

namespace cdsp {

struct DistanceMap {
  enum class Kind { scribble_ds, pseudo_dc };

  int height = 0;
  int width = 0;
  Kind kind = Kind::scribble_ds;
  double lambda = 0.0;
  bool degenerate = false;          // empty source set; all weights are zero
  std::vector<uint8_t> raw;         // truncated integer distances, min(.,255)
  std::vector<float> values;        // weights in [0,1]

  float at(int r, int c) const { return values[static_cast<size_t>(r) * width + c]; }
};

// Exact integer squared Euclidean distances to the nearest nonzero pixel of
// `sources` (two-pass separable scan). Errors when the source set is empty.
std::vector<int32_t> squared_edt(const std::vector<uint8_t>& sources, int height, int width);
std::vector<int32_t> squared_edt(const std::vector<Pixel>& sources, int height, int width);

// Foreground pixels (class 1..K) with a 4-neighbor of a different value or
// lying on the image border.
std::vector<Pixel> boundary_extract(const LabelMask& pseudo);

// d_s(i) = 1 - min(floor(sqrt(e^lambda * sqdist(i))), 255)/255 over foreground
// scribble pixels. No foreground scribbles -> all-zero map flagged degenerate.
DistanceMap scribble_distance_map(const LabelMask& scribble_raster, double lambda_s);

// d_c(i) = min(floor(sqrt(e^lambda * sqdist(i))), 255)/255 over the foreground
// pseudo-label boundary. Empty boundary -> all-zero map flagged degenerate.
DistanceMap pseudo_boundary_distance_map(const LabelMask& pseudo, double lambda_c);

// PGM persistence stores the raw truncated distances plus a metadata comment;
// loading reconstructs the normalized weights exactly.
void save_distance_map_pgm(const std::string& path, const DistanceMap& m);
DistanceMap load_distance_map_pgm(const std::string& path);

// f32 tensor persistence of the normalized weights (kind/lambda supplied by
// the caller on load; raw distances are reconstructed from the weights).
void save_distance_map_tensor(const std::string& path, const DistanceMap& m);
DistanceMap load_distance_map_tensor(const std::string& path, DistanceMap::Kind kind,
                                     double lambda);

}  // namespace cdsp
