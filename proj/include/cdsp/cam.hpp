// Toy multi-label classifier, class activation map extraction, and
// CAM-to-pseudo-label conversion.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdsp/autodiff.hpp"
#include "cdsp/checkpoint.hpp"
#include "cdsp/scribble.hpp"

namespace cdsp {

struct ClassifierConfig {
  int k = 3;               // foreground classes
  int channels = 16;       // first conv width
  int feat_channels = 32;  // final feature channels C
  int epochs = 12;
  int batch = 8;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  uint64_t seed = 1;
};

struct ClassifierSample {
  TensorData<float> image;          // 3xHxW in [0,1]
  std::vector<uint8_t> class_vec;   // size K+1, indexed by class id, [0] unused
};

// K nonnegative activation planes, one per foreground class (1..K).
struct CamStack {
  int k = 0;
  int height = 0;
  int width = 0;
  std::vector<float> planes;  // K x H x W

  float at(int class_id, int r, int c) const {
    return planes[((static_cast<size_t>(class_id) - 1) * height + r) * width + c];
  }
};

// Four conv+ReLU blocks with two 2x downsamplings, global average pooling and
// a linear K-way head trained with per-class sigmoid binary cross-entropy.
class Classifier {
 public:
  explicit Classifier(ClassifierConfig cfg);
  Classifier(ClassifierConfig cfg, const ParamMap& weights);

  const ClassifierConfig& config() const { return cfg_; }
  ParamMap weights() const;

  // ReLU(sum_i W[i,k] F_i) bilinearly resized to the image resolution.
  TensorData<float> compute_cam(const TensorData<float>& image, int class_id);
  CamStack compute_cams(const TensorData<float>& image);

  // Multi-hot sigmoid probabilities per foreground class (index k-1).
  std::vector<float> predict(const TensorData<float>& image);

  // One pass over the dataset per epoch; returns mean BCE per epoch.
  std::vector<double> train(const std::vector<ClassifierSample>& data);

 private:
  friend struct ClassifierAccess;
  Var<float> features(const Var<float>& image_leaf);
  Var<float> class_logits(const Var<float>& feat);
  TensorData<float> feature_values(const TensorData<float>& image);

  ClassifierConfig cfg_;
  Tape<float> tape_;
  Var<float> w1_, b1_, w2_, b2_, w3_, b3_, w4_, b4_;  // trunk
  Var<float> wcls_, bcls_;                            // C x K head
};

Classifier train_classifier(const std::vector<ClassifierSample>& data,
                            const ClassifierConfig& cfg,
                            std::vector<double>* epoch_losses = nullptr);

// ReLU(sum_i W[i,k] F_i) at feature resolution; `wcls` is C x K and class_id
// counts from 1.
TensorData<float> cam_from_features(const TensorData<float>& feat,
                                    const TensorData<float>& wcls, int class_id);

// Max-normalizes each present class plane, then assigns argmax classes where
// the normalized activation reaches tau; ties go to the lowest class id,
// absent classes are never assigned. Unclaimed pixels become background, or
// the ignore value when `unclaimed_ignore` is set.
LabelMask cams_to_pseudo(const CamStack& cams, const std::vector<uint8_t>& present,
                         double tau, bool unclaimed_ignore = false);

// Class-id PGM with values in [0,K] plus 255; out-of-range values are errors.
LabelMask load_external_pseudo(const std::string& path, int num_classes);

// CamStack <-> KxHxW f32 tensor file.
void save_cams(const std::string& path, const CamStack& cams);
CamStack load_cams(const std::string& path);

// Bilinear plane resize (align-corners=false convention).
std::vector<float> bilinear_resize(const std::vector<float>& src, int sh, int sw, int dh,
                                   int dw);

}  // namespace cdsp
