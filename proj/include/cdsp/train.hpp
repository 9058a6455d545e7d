// Toy encoder-decoder segmentation model, the joint training loop over the
// enabled supervision terms, and mIoU evaluation.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdsp/cam.hpp"
#include "cdsp/dataset.hpp"
#include "cdsp/distmap.hpp"
#include "cdsp/lorm.hpp"
#include "cdsp/losses.hpp"
#include "cdsp/optim.hpp"

namespace cdsp {

struct SegModelConfig {
  int k = 3;       // foreground classes; the head is (k+1)-way
  int c1 = 12;
  int c2 = 24;
  int cf = 32;     // feature channels exposed to LoRM
  uint64_t seed = 1;
};

struct SegForward {
  Var<float> feat;  // penultimate feature map, cf x H/4 x W/4
  Var<float> prob;  // (k+1) x H x W softmax probabilities
};

// Conv blocks with two stride-2 downsamplings, nearest 4x upsampling of the
// class logits, softmax head.
class SegModel {
 public:
  explicit SegModel(SegModelConfig cfg);
  SegModel(SegModelConfig cfg, const ParamMap& weights);

  SegForward forward(const TensorData<float>& image);
  LabelMask predict(const TensorData<float>& image);

  Tape<float>& tape() { return tape_; }
  const SegModelConfig& config() const { return cfg_; }
  ParamMap weights() const;
  void register_params(SgdOptimizer<float>& opt);

 private:
  SegModelConfig cfg_;
  Tape<float> tape_;
  Var<float> w1_, b1_, w2_, b2_, w3_, b3_, w4_, b4_, whead_, bhead_;
};

struct TrainConfig {
  int epochs = 30;
  int warmup_epochs = 6;
  int batch = 8;
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LossSwitches losses;
  double epsilon = 0.1;
  bool paper_literal_entropy = false;
  bool lorm_foreground_only = false;
  bool lorm_detach_input = false;
  bool augment = true;
  uint64_t seed = 1;
};

struct TrainResult {
  ParamMap weights;                    // final seg (+ LoRM) parameters
  std::vector<LossReport> step_reports;
  std::vector<std::string> loss_csv;   // header + one row per step
};

// Pseudo-labels and distance maps must be precomputed for every training
// image when their losses are enabled; a missing input is an error.
TrainResult train_segmentation(const SegModelConfig& mc, const TrainConfig& tc,
                               const std::vector<SynthSample>& train,
                               const std::vector<LabelMask>& scribble_rasters,
                               const std::vector<LabelMask>* pseudo_labels,
                               const std::vector<DistanceMap>* ds_maps,
                               const std::vector<DistanceMap>* dc_maps);

struct MetricsReport {
  std::vector<double> iou;        // per class id 0..K; -1 when the union is empty
  std::vector<int64_t> confusion; // (K+1)^2, rows = gt, cols = prediction
  double miou = 0.0;              // mean over classes with nonzero union
};

MetricsReport evaluate_miou(SegModel& model, const std::vector<SynthSample>& samples);

// Confusion accumulation over non-ignore gt pixels and the IoU/mIoU reduction
// (mean over classes with a nonzero union).
void accumulate_confusion(const LabelMask& gt, const LabelMask& pred,
                          std::vector<int64_t>& confusion, int classes);
MetricsReport metrics_from_confusion(std::vector<int64_t> confusion, int classes);

// Horizontal mirroring used by train-time augmentation.
TensorData<float> flip_image(const TensorData<float>& img);
LabelMask flip_mask(const LabelMask& m);
DistanceMap flip_distance_map(const DistanceMap& m);

}  // namespace cdsp
