#include "cdsp/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <thread>

namespace cdsp {

namespace {

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  fail(errc::invalid, "expected boolean, got '", v, "'");
}

}  // namespace

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k = {
      "n_train", "n_val", "height", "width", "k", "seed", "thickness",
      "c1", "c2", "cf",
      "clf_epochs", "clf_lr",
      "epochs", "warmup_epochs", "batch", "base_lr", "momentum", "weight_decay",
      "losses", "lambda_s", "lambda_c", "tau", "epsilon",
      "paper_literal_entropy", "lorm_foreground_only", "lorm_detach_input",
      "pseudo_ignore_unclaimed", "augment",
      "perturb_mode", "perturb_ratio"};
  return k;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  try {
    if (key == "n_train") n_train = std::stoi(value);
    else if (key == "n_val") n_val = std::stoi(value);
    else if (key == "height") height = std::stoi(value);
    else if (key == "width") width = std::stoi(value);
    else if (key == "k") k = std::stoi(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "thickness") thickness = std::stoi(value);
    else if (key == "c1") c1 = std::stoi(value);
    else if (key == "c2") c2 = std::stoi(value);
    else if (key == "cf") cf = std::stoi(value);
    else if (key == "clf_epochs") clf_epochs = std::stoi(value);
    else if (key == "clf_lr") clf_lr = std::stod(value);
    else if (key == "epochs") epochs = std::stoi(value);
    else if (key == "warmup_epochs") warmup_epochs = std::stoi(value);
    else if (key == "batch") batch = std::stoi(value);
    else if (key == "base_lr") base_lr = std::stod(value);
    else if (key == "momentum") momentum = std::stod(value);
    else if (key == "weight_decay") weight_decay = std::stod(value);
    else if (key == "losses") losses = LossSwitches::parse(value);
    else if (key == "lambda_s") lambda_s = std::stod(value);
    else if (key == "lambda_c") lambda_c = std::stod(value);
    else if (key == "tau") tau = std::stod(value);
    else if (key == "epsilon") epsilon = std::stod(value);
    else if (key == "paper_literal_entropy") paper_literal_entropy = parse_bool(value);
    else if (key == "lorm_foreground_only") lorm_foreground_only = parse_bool(value);
    else if (key == "lorm_detach_input") lorm_detach_input = parse_bool(value);
    else if (key == "pseudo_ignore_unclaimed") pseudo_ignore_unclaimed = parse_bool(value);
    else if (key == "augment") augment = parse_bool(value);
    else if (key == "perturb_mode") perturb_mode = value;
    else if (key == "perturb_ratio") perturb_ratio = std::stod(value);
    else fail(errc::invalid, "unknown config key '", key, "'");
  } catch (const error&) {
    throw;
  } catch (const std::exception&) {
    fail(errc::invalid, "bad value '", value, "' for config key '", key, "'");
  }
}

std::string ExperimentConfig::get(const std::string& key) const {
  if (key == "n_train") return std::to_string(n_train);
  if (key == "n_val") return std::to_string(n_val);
  if (key == "height") return std::to_string(height);
  if (key == "width") return std::to_string(width);
  if (key == "k") return std::to_string(k);
  if (key == "seed") return std::to_string(seed);
  if (key == "thickness") return std::to_string(thickness);
  if (key == "c1") return std::to_string(c1);
  if (key == "c2") return std::to_string(c2);
  if (key == "cf") return std::to_string(cf);
  if (key == "clf_epochs") return std::to_string(clf_epochs);
  if (key == "clf_lr") return fmt_double(clf_lr);
  if (key == "epochs") return std::to_string(epochs);
  if (key == "warmup_epochs") return std::to_string(warmup_epochs);
  if (key == "batch") return std::to_string(batch);
  if (key == "base_lr") return fmt_double(base_lr);
  if (key == "momentum") return fmt_double(momentum);
  if (key == "weight_decay") return fmt_double(weight_decay);
  if (key == "losses") return losses.to_string();
  if (key == "lambda_s") return fmt_double(lambda_s);
  if (key == "lambda_c") return fmt_double(lambda_c);
  if (key == "tau") return fmt_double(tau);
  if (key == "epsilon") return fmt_double(epsilon);
  if (key == "paper_literal_entropy") return paper_literal_entropy ? "1" : "0";
  if (key == "lorm_foreground_only") return lorm_foreground_only ? "1" : "0";
  if (key == "lorm_detach_input") return lorm_detach_input ? "1" : "0";
  if (key == "pseudo_ignore_unclaimed") return pseudo_ignore_unclaimed ? "1" : "0";
  if (key == "augment") return augment ? "1" : "0";
  if (key == "perturb_mode") return perturb_mode;
  if (key == "perturb_ratio") return fmt_double(perturb_ratio);
  fail(errc::invalid, "unknown config key '", key, "'");
}

std::string ExperimentConfig::to_kv_text() const {
  std::string out;
  for (const auto& key : keys()) out += key + "=" + get(key) + "\n";
  return out;
}

ExperimentConfig ExperimentConfig::from_kv_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    CDSP_CHECK(eq != std::string::npos, "config line without '=': ", line);
    cfg.set(line.substr(0, eq), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(errc::io, "cannot open config '", path, "'");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_kv_text(text);
}

void ExperimentConfig::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(errc::io, "cannot write config '", path, "'");
  f << to_kv_text();
}

std::string ExperimentConfig::config_hash() const {
  const std::string text = to_kv_text();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void ExperimentConfig::validate() const {
  CDSP_CHECK(n_train >= 1 && n_val >= 0, "need at least one training image");
  CDSP_CHECK(k >= 1 && k <= 6, "K must lie in [1,6]");
  CDSP_CHECK(warmup_epochs >= 0 && warmup_epochs <= epochs,
             "warmup_epochs must not exceed epochs");
  CDSP_CHECK(perturb_ratio >= 0.0 && perturb_ratio <= 1.0, "ratio must lie in [0,1]");
  CDSP_CHECK(perturb_mode == "none" || perturb_mode == "shrink" || perturb_mode == "drop",
             "perturb_mode must be none|shrink|drop, got '", perturb_mode, "'");
  CDSP_CHECK(tau > 0.0 && tau < 1.0, "tau must lie in (0,1)");
  CDSP_CHECK(epsilon >= 0.0 && epsilon < 1.0, "epsilon must lie in [0,1)");
  CDSP_CHECK(batch >= 1 && epochs >= 1, "batch and epochs must be positive");
}

PreparedInputs prepare_inputs(const ExperimentConfig& cfg, const Dataset& ds) {
  PreparedInputs out;
  const size_t n = ds.train.size();
  out.scribbles.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const auto& base = ds.train[i].scribbles;
    const uint64_t pseed = mix_seed(cfg.seed, 0xBE47 + i);
    if (cfg.perturb_mode == "shrink")
      out.scribbles.push_back(shrink(base, cfg.perturb_ratio, pseed));
    else if (cfg.perturb_mode == "drop")
      out.scribbles.push_back(drop(base, cfg.perturb_ratio, pseed));
    else
      out.scribbles.push_back(base);
  }
  out.rasters.reserve(n);
  out.class_vectors.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    out.rasters.push_back(rasterize(out.scribbles[i], cfg.thickness));
    out.class_vectors.push_back(extract_image_classes(out.scribbles[i], cfg.k));
  }

  const bool needs_pseudo = cfg.losses.segc || cfg.losses.lorm || cfg.losses.dc;
  if (needs_pseudo) {
    ClassifierConfig cc;
    cc.k = cfg.k;
    cc.epochs = cfg.clf_epochs;
    cc.lr = cfg.clf_lr;
    cc.seed = mix_seed(cfg.seed, 0xC1F);
    std::vector<ClassifierSample> clf_data;
    clf_data.reserve(n);
    for (size_t i = 0; i < n; ++i)
      clf_data.push_back({ds.train[i].image, out.class_vectors[i]});
    Classifier clf = train_classifier(clf_data, cc);
    out.classifier_weights = clf.weights();
    out.pseudo.reserve(n);
    for (size_t i = 0; i < n; ++i) {
      auto cams = clf.compute_cams(ds.train[i].image);
      out.pseudo.push_back(cams_to_pseudo(cams, out.class_vectors[i], cfg.tau,
                                          cfg.pseudo_ignore_unclaimed));
    }
  }

  if (cfg.losses.ds) {
    out.ds_maps.reserve(n);
    for (size_t i = 0; i < n; ++i)
      out.ds_maps.push_back(scribble_distance_map(out.rasters[i], cfg.lambda_s));
  }
  if (cfg.losses.dc) {
    out.dc_maps.reserve(n);
    for (size_t i = 0; i < n; ++i)
      out.dc_maps.push_back(pseudo_boundary_distance_map(out.pseudo[i], cfg.lambda_c));
  }
  return out;
}

RunOutcome run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  Dataset ds = make_dataset(cfg.n_train, cfg.n_val, cfg.k, cfg.seed, cfg.height, cfg.width);
  PreparedInputs inputs = prepare_inputs(cfg, ds);

  SegModelConfig mc;
  mc.k = cfg.k;
  mc.c1 = cfg.c1;
  mc.c2 = cfg.c2;
  mc.cf = cfg.cf;
  mc.seed = mix_seed(cfg.seed, 0x5E61);

  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.warmup_epochs = cfg.warmup_epochs;
  tc.batch = cfg.batch;
  tc.base_lr = cfg.base_lr;
  tc.momentum = cfg.momentum;
  tc.weight_decay = cfg.weight_decay;
  tc.losses = cfg.losses;
  tc.epsilon = cfg.epsilon;
  tc.paper_literal_entropy = cfg.paper_literal_entropy;
  tc.lorm_foreground_only = cfg.lorm_foreground_only;
  tc.lorm_detach_input = cfg.lorm_detach_input;
  tc.augment = cfg.augment;
  tc.seed = mix_seed(cfg.seed, 0x7E41);

  const bool needs_pseudo = cfg.losses.segc || cfg.losses.lorm;
  auto trained = train_segmentation(
      mc, tc, ds.train, inputs.rasters, needs_pseudo ? &inputs.pseudo : nullptr,
      cfg.losses.ds ? &inputs.ds_maps : nullptr, cfg.losses.dc ? &inputs.dc_maps : nullptr);

  SegModel model(mc, trained.weights);
  RunOutcome out;
  out.metrics = evaluate_miou(model, ds.val);
  out.miou = out.metrics.miou;
  out.checkpoint = std::move(trained.weights);
  out.loss_csv = std::move(trained.loss_csv);
  return out;
}

std::string metrics_csv(const std::string& run_id, const std::string& config_hash,
                        uint64_t seed, double ratio, const std::string& split,
                        const MetricsReport& metrics) {
  std::string out = "run_id,config_hash,seed,ratio,split,class,iou,miou\n";
  char buf[256];
  for (size_t c = 0; c < metrics.iou.size(); ++c) {
    if (metrics.iou[c] < 0.0) continue;
    std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%.4g,%s,%zu,%.6f,%.6f\n", run_id.c_str(),
                  config_hash.c_str(), static_cast<unsigned long long>(seed), ratio,
                  split.c_str(), c, metrics.iou[c], metrics.miou);
    out += buf;
  }
  return out;
}

namespace {

// Bounded deterministic parallel map: tasks produce into fixed slots, so the
// result order never depends on thread timing.
void run_parallel(std::vector<std::function<void()>>& tasks, int jobs) {
  if (jobs <= 1) {
    for (auto& t : tasks) t();
    return;
  }
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      tasks[i]();
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min<int>(jobs, static_cast<int>(tasks.size()));
  pool.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

struct AblationSpec {
  const char* label;
  const char* switches;
};

constexpr AblationSpec kAblationGrid[] = {
    {"segs", "segs"},
    {"segc", "segc"},
    {"segs+segc", "segs,segc"},
    {"segs+segc+dc", "segs,segc,dc"},
    {"segs+segc+ds", "segs,segc,ds"},
    {"segs+segc+ds+dc", "segs,segc,ds,dc"},
    {"segs+segc+lorm", "segs,segc,lorm"},
    {"full", "segs,segc,ds,dc,lorm"},
};

}  // namespace

std::vector<AblationRow> run_ablation(const ExperimentConfig& base, int n_seeds, int jobs) {
  CDSP_CHECK(n_seeds >= 1, "need at least one seed");
  std::vector<AblationRow> rows;
  for (const auto& spec : kAblationGrid) {
    AblationRow row;
    row.label = spec.label;
    row.losses = LossSwitches::parse(spec.switches);
    row.mious.assign(static_cast<size_t>(n_seeds), 0.0);
    rows.push_back(std::move(row));
  }

  std::vector<std::function<void()>> tasks;
  for (size_t r = 0; r < rows.size(); ++r)
    for (int s = 0; s < n_seeds; ++s)
      tasks.push_back([&base, &rows, r, s] {
        ExperimentConfig cfg = base;
        cfg.losses = rows[r].losses;
        cfg.seed = base.seed + static_cast<uint64_t>(s);
        rows[r].mious[static_cast<size_t>(s)] = run_experiment(cfg).miou;
      });
  run_parallel(tasks, jobs);

  for (auto& row : rows) {
    double mean = 0;
    for (double v : row.mious) mean += v;
    mean /= static_cast<double>(row.mious.size());
    double var = 0;
    for (double v : row.mious) var += (v - mean) * (v - mean);
    row.mean = mean;
    row.sd = row.mious.size() > 1
                 ? std::sqrt(var / static_cast<double>(row.mious.size() - 1))
                 : 0.0;
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "losses,n_seeds,mean_miou,sd_miou\n";
  char buf[160];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.6f,%.6f\n", row.label.c_str(),
                  row.mious.size(), row.mean, row.sd);
    out += buf;
  }
  return out;
}

std::vector<RobustnessPoint> run_robustness(const ExperimentConfig& base,
                                            const std::vector<double>& ratios,
                                            const std::string& mode, int n_seeds,
                                            int jobs) {
  CDSP_CHECK(mode == "shrink" || mode == "drop", "mode must be shrink|drop");
  CDSP_CHECK(!ratios.empty() && n_seeds >= 1, "need ratios and seeds");
  struct Method {
    const char* name;
    const char* switches;
  };
  const Method methods[] = {{"cdsp_full", "segs,segc,ds,dc,lorm"}, {"scribble_only", "segs"}};

  std::vector<RobustnessPoint> points;
  for (const auto& m : methods)
    for (double ratio : ratios)
      for (int s = 0; s < n_seeds; ++s)
        points.push_back({m.name, ratio, base.seed + static_cast<uint64_t>(s), 0.0});

  std::vector<std::function<void()>> tasks;
  size_t idx = 0;
  for (const auto& m : methods)
    for (double ratio : ratios)
      for (int s = 0; s < n_seeds; ++s) {
        const size_t slot = idx++;
        tasks.push_back([&base, &points, m, ratio, s, mode, slot] {
          ExperimentConfig cfg = base;
          cfg.losses = LossSwitches::parse(m.switches);
          cfg.perturb_mode = ratio == 0.0 ? "none" : mode;
          cfg.perturb_ratio = ratio;
          cfg.seed = base.seed + static_cast<uint64_t>(s);
          points[slot].miou = run_experiment(cfg).miou;
        });
      }
  run_parallel(tasks, jobs);
  return points;
}

std::string robustness_csv(const std::vector<RobustnessPoint>& points) {
  std::string out = "method,ratio,seed,miou\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%s,%.4g,%llu,%.6f\n", p.method.c_str(), p.ratio,
                  static_cast<unsigned long long>(p.seed), p.miou);
    out += buf;
  }
  return out;
}

}  // namespace cdsp
