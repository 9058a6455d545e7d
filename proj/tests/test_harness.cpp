#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cdsp/dataset.hpp"
#include "cdsp/experiments.hpp"
#include "cdsp/train.hpp"

using namespace cdsp;

TEST_CASE("dataset generation is deterministic and well formed") {
  auto a = gen_synthetic_dataset(3, 3, 42);
  auto b = gen_synthetic_dataset(3, 3, 42);
  REQUIRE(a.size() == 3);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.data == b[i].image.data);
    CHECK(a[i].gt.values == b[i].gt.values);
    CHECK(scribbles_to_json(a[i].scribbles) == scribbles_to_json(b[i].scribbles));
  }

  auto single = gen_synthetic_dataset(1, 1, 7);
  for (auto v : single[0].gt.values) CHECK((v == 0 || v == 1));
}

TEST_CASE("every class appears in enough images") {
  const int n = 1000, k = 6;
  auto samples = gen_synthetic_dataset(n, k, 99);
  std::vector<int> count(static_cast<size_t>(k) + 1, 0);
  for (const auto& s : samples)
    for (int c = 1; c <= k; ++c)
      if (s.class_vector[static_cast<size_t>(c)]) ++count[static_cast<size_t>(c)];
  for (int c = 1; c <= k; ++c) CHECK(count[static_cast<size_t>(c)] >= n / 20);
}

TEST_CASE("synthesized scribbles agree with gt and land in the pinned density band") {
  auto samples = gen_synthetic_dataset(60, 3, 123);
  double fraction_sum = 0;
  for (const auto& s : samples) {
    auto raster = rasterize(s.scribbles, kScribbleThickness);
    int64_t labeled = 0;
    for (size_t i = 0; i < raster.values.size(); ++i) {
      if (raster.values[i] == LabelMask::kIgnore) continue;
      ++labeled;
      CHECK(raster.values[i] == s.gt.values[i]);  // consistency invariant
    }
    fraction_sum += static_cast<double>(labeled) / static_cast<double>(raster.values.size());

    // gt classes all receive a scribble
    for (int c = 1; c <= 3; ++c) {
      bool in_gt = false;
      for (auto v : s.gt.values) in_gt = in_gt || v == c;
      bool in_scrib = false;
      for (const auto& p : s.scribbles.polylines) in_scrib = in_scrib || p.class_id == c;
      if (in_gt) CHECK(in_scrib);
    }
  }
  const double mean_fraction = fraction_sum / 60.0;
  INFO("mean scribble fraction ", mean_fraction);
  CHECK(mean_fraction >= 0.02);
  CHECK(mean_fraction <= 0.05);
}

TEST_CASE("synth_scribbles needs foreground and stays inside regions") {
  LabelMask empty(16, 16, 0);
  CHECK_THROWS_AS(synth_scribbles(empty, 1), error);

  LabelMask square(40, 40, 0);
  for (int r = 4; r < 36; ++r)
    for (int c = 4; c < 36; ++c) square.at(r, c) = 1;
  auto scribs = synth_scribbles(square, 5);
  bool has_fg = false;
  for (const auto& p : scribs.polylines) {
    if (p.class_id != 1) continue;
    has_fg = true;
    for (const auto& pt : p.points) {
      CHECK(pt.first >= 4);
      CHECK(pt.first < 36);
      CHECK(pt.second >= 4);
      CHECK(pt.second < 36);
    }
  }
  CHECK(has_fg);
}

TEST_CASE("single-sample overfit with partial cross-entropy only") {
  auto samples = gen_synthetic_dataset(1, 3, 10);
  std::vector<LabelMask> rasters{rasterize(samples[0].scribbles, kScribbleThickness)};

  SegModelConfig mc;
  mc.k = 3;
  mc.seed = 4;
  TrainConfig tc;
  tc.epochs = 300;
  tc.warmup_epochs = 30;
  tc.batch = 1;
  tc.base_lr = 0.05;
  tc.losses = LossSwitches::parse("segs");
  tc.augment = false;
  tc.seed = 4;

  auto result = train_segmentation(mc, tc, samples, rasters, nullptr, nullptr, nullptr);
  REQUIRE(result.step_reports.size() == 300);
  const double initial = result.step_reports.front().total;
  const double final = result.step_reports.back().total;
  INFO("loss ", initial, " -> ", final);
  CHECK(final < 0.1 * initial);
}

TEST_CASE("train_segmentation validates inputs") {
  auto samples = gen_synthetic_dataset(2, 2, 20);
  std::vector<LabelMask> rasters;
  for (const auto& s : samples) rasters.push_back(rasterize(s.scribbles, 3));
  SegModelConfig mc;
  mc.k = 2;
  TrainConfig tc;
  tc.epochs = 1;
  tc.warmup_epochs = 0;
  tc.losses = LossSwitches::parse("segs,segc");
  // segc enabled but pseudo-labels missing
  CHECK_THROWS_AS(train_segmentation(mc, tc, samples, rasters, nullptr, nullptr, nullptr),
                  error);
  tc.losses = LossSwitches::parse("ds");
  CHECK_THROWS_AS(train_segmentation(mc, tc, samples, rasters, nullptr, nullptr, nullptr),
                  error);
}

TEST_CASE("confusion metrics") {
  SUBCASE("prediction equals gt -> mIoU 1") {
    LabelMask gt(4, 4, 0);
    gt.at(1, 1) = 1;
    gt.at(2, 2) = 2;
    std::vector<int64_t> conf(9, 0);
    accumulate_confusion(gt, gt, conf, 3);
    auto m = metrics_from_confusion(conf, 3);
    CHECK(m.miou == doctest::Approx(1.0));
  }

  SUBCASE("disjoint single-class masks -> IoU 0 for those classes") {
    LabelMask gt(2, 4, 0);
    gt.at(0, 0) = 1;
    gt.at(0, 1) = 1;
    LabelMask pred(2, 4, 0);
    pred.at(1, 2) = 1;
    pred.at(1, 3) = 1;
    std::vector<int64_t> conf(4, 0);
    accumulate_confusion(gt, pred, conf, 2);
    auto m = metrics_from_confusion(conf, 2);
    CHECK(m.iou[1] == doctest::Approx(0.0));
  }

  SUBCASE("hand 3x3 confusion") {
    // gt row-major: 0 0 1 / 1 1 2 / 2 2 0
    // pr row-major: 0 1 1 / 1 2 2 / 2 0 0
    LabelMask gt(3, 3, 0);
    LabelMask pr(3, 3, 0);
    const uint8_t gv[9] = {0, 0, 1, 1, 1, 2, 2, 2, 0};
    const uint8_t pv[9] = {0, 1, 1, 1, 2, 2, 2, 0, 0};
    for (int i = 0; i < 9; ++i) {
      gt.values[static_cast<size_t>(i)] = gv[i];
      pr.values[static_cast<size_t>(i)] = pv[i];
    }
    std::vector<int64_t> conf(9, 0);
    accumulate_confusion(gt, pr, conf, 3);
    // every class: TP=2 FP=1 FN=1 -> IoU 2/4
    auto m = metrics_from_confusion(conf, 3);
    CHECK(m.iou[0] == doctest::Approx(0.5));
    CHECK(m.iou[1] == doctest::Approx(0.5));
    CHECK(m.iou[2] == doctest::Approx(0.5));
    CHECK(m.miou == doctest::Approx(0.5));
  }

  SUBCASE("ignore pixels are excluded") {
    LabelMask gt(2, 2, LabelMask::kIgnore);
    gt.at(0, 0) = 1;
    LabelMask pred(2, 2, 1);
    std::vector<int64_t> conf(4, 0);
    accumulate_confusion(gt, pred, conf, 2);
    int64_t total = 0;
    for (auto v : conf) total += v;
    CHECK(total == 1);
  }
}

TEST_CASE("experiment config round trips and validates") {
  ExperimentConfig cfg;
  cfg.n_train = 12;
  cfg.losses = LossSwitches::parse("segs,dc");
  cfg.lambda_c = 7.0;
  cfg.perturb_mode = "shrink";
  cfg.perturb_ratio = 0.5;

  auto text = cfg.to_kv_text();
  auto back = ExperimentConfig::from_kv_text(text);
  CHECK(back.to_kv_text() == text);
  CHECK(back.config_hash() == cfg.config_hash());

  auto dir = std::filesystem::temp_directory_path() / "cdsp_exp_tests";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "cfg.txt").string();
  cfg.save(path);
  CHECK(ExperimentConfig::from_file(path).to_kv_text() == text);

  ExperimentConfig bad;
  bad.perturb_ratio = 1.5;
  CHECK_THROWS_AS(bad.validate(), error);
  ExperimentConfig bad2;
  bad2.warmup_epochs = 99;
  CHECK_THROWS_AS(bad2.validate(), error);
  CHECK_THROWS_AS(cfg.set("nonsense", "1"), error);
  CHECK_THROWS_AS(cfg.set("epochs", "abc"), error);
}

TEST_CASE("full pipeline is deterministic on a tiny config") {
  ExperimentConfig cfg;
  cfg.n_train = 6;
  cfg.n_val = 2;
  cfg.k = 2;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.clf_epochs = 3;
  cfg.seed = 31;

  auto a = run_experiment(cfg);
  auto b = run_experiment(cfg);
  CHECK(a.miou == b.miou);
  REQUIRE(a.checkpoint.size() == b.checkpoint.size());
  for (size_t i = 0; i < a.checkpoint.size(); ++i)
    CHECK(a.checkpoint[i].second.data == b.checkpoint[i].second.data);
  CHECK(a.loss_csv == b.loss_csv);
}

TEST_CASE("csv emitters") {
  MetricsReport m;
  m.iou = {0.5, -1.0, 0.25};
  m.miou = 0.375;
  auto csv = metrics_csv("run7", "abc123", 3, 0.0, "val", m);
  CHECK(csv.find("run_id,config_hash,seed,ratio,split,class,iou,miou\n") == 0);
  CHECK(csv.find("run7,abc123,3,0,val,0,0.500000,0.375000\n") != std::string::npos);
  CHECK(csv.find(",1,") == std::string::npos);  // empty-union class skipped
  CHECK(csv.find("run7,abc123,3,0,val,2,0.250000,0.375000\n") != std::string::npos);

  std::vector<RobustnessPoint> pts{{"cdsp_full", 0.5, 2, 0.8}};
  CHECK(robustness_csv(pts) == "method,ratio,seed,miou\ncdsp_full,0.5,2,0.800000\n");
}
