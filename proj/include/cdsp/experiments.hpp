// Full experiment description and the Table-2-style ablation and shrink/drop
// robustness runners.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cdsp/train.hpp"

namespace cdsp {

struct ExperimentConfig {
  // data
  int n_train = 48;
  int n_val = 16;
  int height = 64;
  int width = 64;
  int k = 3;
  uint64_t seed = 1;
  int thickness = kScribbleThickness;
  // model
  int c1 = 12;
  int c2 = 24;
  int cf = 32;
  // classifier stage
  int clf_epochs = 12;
  double clf_lr = 0.05;
  // schedule and optimizer (50/10-epoch warmup-cosine pattern scaled down)
  int epochs = 30;
  int warmup_epochs = 6;
  int batch = 8;
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // losses
  LossSwitches losses{true, true, true, true, true};
  double lambda_s = 1.0;
  double lambda_c = 6.0;
  double tau = 0.3;
  double epsilon = 0.1;
  bool paper_literal_entropy = false;
  bool lorm_foreground_only = false;
  bool lorm_detach_input = false;
  bool pseudo_ignore_unclaimed = false;
  bool augment = true;
  // scribble perturbation applied before everything downstream
  std::string perturb_mode = "none";  // none | shrink | drop
  double perturb_ratio = 0.0;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // flat key=value text, one pair per line, keys in fixed order
  std::string to_kv_text() const;
  static ExperimentConfig from_kv_text(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
  void save(const std::string& path) const;

  std::string config_hash() const;  // FNV-1a of to_kv_text()
  void validate() const;
};

// Precomputed per-image training inputs for one experiment.
struct PreparedInputs {
  std::vector<ScribbleSet> scribbles;     // possibly perturbed
  std::vector<LabelMask> rasters;
  std::vector<std::vector<uint8_t>> class_vectors;
  std::vector<LabelMask> pseudo;          // empty when no pseudo-consuming loss
  std::vector<DistanceMap> ds_maps;       // empty unless L_ds
  std::vector<DistanceMap> dc_maps;       // empty unless L_dc
  ParamMap classifier_weights;            // empty when the classifier stage is skipped
};

PreparedInputs prepare_inputs(const ExperimentConfig& cfg, const Dataset& ds);

struct RunOutcome {
  double miou = 0.0;
  MetricsReport metrics;
  ParamMap checkpoint;
  std::vector<std::string> loss_csv;
};

// data -> perturb -> rasterize -> classifier -> CAM pseudo -> distance maps ->
// train -> evaluate on the validation split.
RunOutcome run_experiment(const ExperimentConfig& cfg);

// Results CSV schema shared by eval and the experiment runners:
// run_id,config_hash,seed,ratio,split,class,iou,miou — one row per class with
// a nonzero union, iou = -1 rows are skipped.
std::string metrics_csv(const std::string& run_id, const std::string& config_hash,
                        uint64_t seed, double ratio, const std::string& split,
                        const MetricsReport& metrics);

struct AblationRow {
  std::string label;
  LossSwitches losses;
  std::vector<double> mious;  // one per seed
  double mean = 0.0;
  double sd = 0.0;
};

// Trains the eight Table-2 loss combinations over n_seeds seeds each.
std::vector<AblationRow> run_ablation(const ExperimentConfig& base, int n_seeds, int jobs);
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct RobustnessPoint {
  std::string method;  // cdsp_full | scribble_only
  double ratio = 0.0;
  uint64_t seed = 0;
  double miou = 0.0;
};

// Full CDSP vs scribble-only baseline across perturbation ratios.
std::vector<RobustnessPoint> run_robustness(const ExperimentConfig& base,
                                            const std::vector<double>& ratios,
                                            const std::string& mode, int n_seeds, int jobs);
std::string robustness_csv(const std::vector<RobustnessPoint>& points);

}  // namespace cdsp
