#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cdsp/cam.hpp"
#include "cdsp/dataset.hpp"

using namespace cdsp;

namespace {

std::vector<ClassifierSample> tiny_corpus(int n, int k, uint64_t seed) {
  auto samples = gen_synthetic_dataset(n, k, seed);
  std::vector<ClassifierSample> out;
  for (auto& s : samples) out.push_back({s.image, s.class_vector});
  return out;
}

}  // namespace

TEST_CASE("classifier overfits a single image") {
  auto data = tiny_corpus(1, 3, 12345);
  ClassifierConfig cfg;
  cfg.k = 3;
  cfg.epochs = 200;
  cfg.batch = 1;
  cfg.seed = 5;
  std::vector<double> losses;
  train_classifier(data, cfg, &losses);
  REQUIRE(losses.size() == 200);
  CHECK(losses.back() < 0.1 * losses.front());
}

TEST_CASE("all-zero class vectors drive the loss toward zero") {
  auto data = tiny_corpus(1, 3, 999);
  data[0].class_vec.assign(4, 0);
  ClassifierConfig cfg;
  cfg.k = 3;
  cfg.epochs = 200;
  cfg.batch = 1;
  cfg.seed = 6;
  std::vector<double> losses;
  auto clf = train_classifier(data, cfg, &losses);
  CHECK(losses.back() < 0.05);
  for (float p : clf.predict(data[0].image)) CHECK(p < 0.1f);
}

TEST_CASE("classifier training is deterministic") {
  auto data = tiny_corpus(4, 3, 777);
  ClassifierConfig cfg;
  cfg.k = 3;
  cfg.epochs = 5;
  cfg.seed = 11;
  auto a = train_classifier(data, cfg).weights();
  auto b = train_classifier(data, cfg).weights();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.data == b[i].second.data);
  }
}

TEST_CASE("cam_from_features evaluates the weighted ReLU sum") {
  // one channel, 2x2 feature plane, hand weights
  TensorData<float> feat({1, 2, 2}, {1.0f, -2.0f, 0.5f, 3.0f});
  TensorData<float> w({1, 2}, {2.0f, -1.0f});

  auto cam1 = cam_from_features(feat, w, 1);
  CHECK(cam1.data == std::vector<float>{2.0f, 0.0f, 1.0f, 6.0f});

  auto cam2 = cam_from_features(feat, w, 2);  // negative weight flips signs
  CHECK(cam2.data == std::vector<float>{0.0f, 2.0f, 0.0f, 0.0f});

  // two channels combine before the ReLU
  TensorData<float> feat2({2, 1, 2}, {1.0f, -1.0f, 2.0f, 2.0f});
  TensorData<float> w2({2, 1}, {1.0f, -0.75f});
  auto cam3 = cam_from_features(feat2, w2, 1);
  CHECK(cam3.data[0] == doctest::Approx(0.0f));   // 1 - 1.5
  CHECK(cam3.data[1] == doctest::Approx(0.0f));   // -1 - 1.5 -> relu
  TensorData<float> w3({2, 1}, {1.0f, 0.25f});
  auto cam4 = cam_from_features(feat2, w3, 1);
  CHECK(cam4.data[0] == doctest::Approx(1.5f));   // 1 + 0.5
  CHECK(cam4.data[1] == 0.0f);                    // relu(-1 + 0.5)

  // zero weight column gives the zero plane
  TensorData<float> wz({1, 2}, {0.0f, 1.0f});
  auto camz = cam_from_features(feat, wz, 1);
  for (float v : camz.data) CHECK(v == 0.0f);

  CHECK_THROWS_AS(cam_from_features(feat, w, 3), error);
  CHECK_THROWS_AS(cam_from_features(feat, w, 0), error);
}

TEST_CASE("cam bilinearity: CAM(aF, W/a) == CAM(F, W)") {
  Rng rng(222);
  TensorData<float> feat = TensorData<float>::randn({4, 3, 3}, rng);
  TensorData<float> w = TensorData<float>::randn({4, 2}, rng);
  for (float alpha : {0.5f, 2.0f, 8.0f}) {
    TensorData<float> feat_s = feat;
    for (auto& v : feat_s.data) v *= alpha;
    TensorData<float> w_s = w;
    for (auto& v : w_s.data) v /= alpha;
    for (int k = 1; k <= 2; ++k) {
      auto a = cam_from_features(feat, w, k);
      auto b = cam_from_features(feat_s, w_s, k);
      for (int64_t i = 0; i < a.numel(); ++i)
        CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-4));
    }
  }
}

TEST_CASE("compute_cam output is nonnegative at image resolution") {
  auto data = tiny_corpus(1, 2, 31);
  ClassifierConfig cfg;
  cfg.k = 2;
  cfg.epochs = 2;
  cfg.seed = 3;
  auto clf = train_classifier(data, cfg);
  auto cam = clf.compute_cam(data[0].image, 1);
  CHECK(cam.shape == Shape{64, 64});
  for (float v : cam.data) CHECK(v >= 0.0f);
  CHECK_THROWS_AS(clf.compute_cam(data[0].image, 0), error);
  CHECK_THROWS_AS(clf.compute_cam(data[0].image, 3), error);
}

TEST_CASE("cams_to_pseudo") {
  CamStack cams;
  cams.k = 2;
  cams.height = 2;
  cams.width = 2;
  cams.planes.assign(8, 0.0f);
  std::vector<uint8_t> present{0, 1, 1};

  SUBCASE("all CAMs below tau give all-background") {
    cams.planes = {0.1f, 0.1f, 0.1f, 0.1f, 0.2f, 0.2f, 0.2f, 0.2f};
    // max-normalization maps the max to 1, so use a plane with max above tau
    // elsewhere: here every normalized value is 1 -> force absent classes
    auto m = cams_to_pseudo(cams, {0, 0, 0}, 0.3);
    for (auto v : m.values) CHECK(v == 0);
  }

  SUBCASE("single present class, single activated pixel") {
    cams.planes = {1.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f};
    auto m = cams_to_pseudo(cams, {0, 1, 0}, 0.3);
    CHECK(m.at(0, 0) == 1);
    CHECK(m.at(0, 1) == 0);
    CHECK(m.at(1, 0) == 0);
    CHECK(m.at(1, 1) == 0);
  }

  SUBCASE("equal normalized values tie to the lower class id") {
    cams.planes = {0.9f, 1.0f, 0.0f, 0.0f,   // class 1: pixel0 0.9 normalized
                   0.9f, 0.0f, 1.0f, 0.0f};  // class 2: pixel0 0.9 normalized
    auto m = cams_to_pseudo(cams, present, 0.3);
    CHECK(m.at(0, 0) == 1);  // tie at 0.9/0.9 -> class 1
  }

  SUBCASE("absent classes are never assigned") {
    cams.planes = {0.0f, 0.0f, 0.0f, 0.0f, 1.0f, 1.0f, 1.0f, 1.0f};
    auto m = cams_to_pseudo(cams, {0, 1, 0}, 0.3);
    for (auto v : m.values) CHECK(v == 0);
  }

  SUBCASE("raising tau weakly shrinks the foreground") {
    Rng rng(97);
    CamStack stack;
    stack.k = 3;
    stack.height = 8;
    stack.width = 8;
    stack.planes.resize(3 * 64);
    for (auto& v : stack.planes) v = static_cast<float>(rng.uniform());
    std::vector<uint8_t> pres{0, 1, 1, 1};
    int prev_fg = INT32_MAX;
    for (double tau : {0.2, 0.4, 0.6, 0.8}) {
      auto m = cams_to_pseudo(stack, pres, tau);
      int fg = 0;
      for (auto v : m.values) fg += v != 0;
      CHECK(fg <= prev_fg);
      prev_fg = fg;
    }
  }

  SUBCASE("unclaimed pixels become ignore under the switch") {
    cams.planes = {1.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f};
    auto m = cams_to_pseudo(cams, {0, 1, 0}, 0.3, true);
    CHECK(m.at(0, 0) == 1);
    CHECK(m.at(1, 1) == LabelMask::kIgnore);
  }

  CHECK_THROWS_AS(cams_to_pseudo(cams, present, 0.0), error);
  CHECK_THROWS_AS(cams_to_pseudo(cams, present, 1.0), error);
}

TEST_CASE("external pseudo-label loading") {
  auto dir = std::filesystem::temp_directory_path() / "cdsp_cam_tests";
  std::filesystem::create_directories(dir);

  // hand fixture in the class-id PGM convention
  LabelMask fixture(3, 4, 0);
  fixture.at(0, 1) = 1;
  fixture.at(1, 2) = 2;
  fixture.at(2, 3) = LabelMask::kIgnore;
  const auto path = (dir / "pseudo.pgm").string();
  save_mask_pgm(path, fixture);

  auto loaded = load_external_pseudo(path, 2);
  CHECK(loaded.values == fixture.values);

  // value K+1 is a range error
  CHECK_THROWS_AS(load_external_pseudo(path, 1), error);
}

TEST_CASE("cam stack tensor round trip") {
  Rng rng(41);
  CamStack cams;
  cams.k = 3;
  cams.height = 5;
  cams.width = 7;
  cams.planes.resize(3 * 35);
  for (auto& v : cams.planes) v = static_cast<float>(rng.uniform());
  auto dir = std::filesystem::temp_directory_path() / "cdsp_cam_tests";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "cams.tensor").string();
  save_cams(path, cams);
  auto back = load_cams(path);
  CHECK(back.k == cams.k);
  CHECK(back.height == cams.height);
  CHECK(back.width == cams.width);
  CHECK(back.planes == cams.planes);
}
