// Synthetic shape corpus: colored discs, rectangles and triangles on a
// textured background, with exact ground-truth rasters and random-walk
// scribbles synthesized inside every region.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdsp/scribble.hpp"
#include "cdsp/tensor.hpp"

namespace cdsp {

struct SynthSample {
  TensorData<float> image;         // 3xHxW in [0,1], quantized to /255 steps
  LabelMask gt;                    // exact shape raster, 0 = background
  ScribbleSet scribbles;
  std::vector<uint8_t> class_vector;  // size K+1, indexed by class id
};

inline constexpr int kScribbleThickness = 3;

// Deterministic in (n, k, seed): reruns produce bitwise identical samples.
std::vector<SynthSample> gen_synthetic_dataset(int n, int k, uint64_t seed, int height = 64,
                                               int width = 64);

// One random-walk polyline per connected region (plus one for the background),
// walked inside the region's safely eroded interior so the thickness-3 raster
// never leaves the region. Tiny regions degrade to a single interior point.
ScribbleSet synth_scribbles(const LabelMask& gt, uint64_t seed);

struct Dataset {
  int k = 0;
  uint64_t seed = 0;
  std::vector<SynthSample> train;
  std::vector<SynthSample> val;
};

Dataset make_dataset(int n_train, int n_val, int k, uint64_t seed, int height = 64,
                     int width = 64);

// Directory layout: meta.json plus train/ and val/ holding imgNNN.ppm,
// gtNNN.pgm and scribNNN.json per sample.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace cdsp
