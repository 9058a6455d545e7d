#include "cdsp/cam.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdsp/io.hpp"
#include "cdsp/optim.hpp"

namespace cdsp {

namespace {

TensorData<float> he_init(Shape shape, Rng& rng) {
  int64_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const float sd = std::sqrt(2.0f / static_cast<float>(fan_in));
  return TensorData<float>::randn(std::move(shape), rng, sd);
}

}  // namespace

Classifier::Classifier(ClassifierConfig cfg) : cfg_(cfg) {
  CDSP_CHECK(cfg_.k >= 1, "classifier needs at least one class");
  Rng rng(mix_seed(cfg_.seed, 0xC1A55));
  const int c = cfg_.channels, c2 = 2 * cfg_.channels, cf = cfg_.feat_channels;
  w1_ = tape_.leaf(he_init({c, 3, 3, 3}, rng), true);
  b1_ = tape_.leaf(TensorData<float>::zeros({c}), true);
  w2_ = tape_.leaf(he_init({c2, c, 3, 3}, rng), true);
  b2_ = tape_.leaf(TensorData<float>::zeros({c2}), true);
  w3_ = tape_.leaf(he_init({c2, c2, 3, 3}, rng), true);
  b3_ = tape_.leaf(TensorData<float>::zeros({c2}), true);
  w4_ = tape_.leaf(he_init({cf, c2, 3, 3}, rng), true);
  b4_ = tape_.leaf(TensorData<float>::zeros({cf}), true);
  wcls_ = tape_.leaf(
      TensorData<float>::randn({cf, cfg_.k}, rng, std::sqrt(1.0f / static_cast<float>(cf))),
      true);
  bcls_ = tape_.leaf(TensorData<float>::zeros({cfg_.k}), true);
}

Classifier::Classifier(ClassifierConfig cfg, const ParamMap& weights) : Classifier(cfg) {
  auto bind = [&](const char* name, Var<float>& v) {
    const auto& t = checkpoint_get(weights, name);
    CDSP_CHECK(t.shape == v.value().shape, "classifier weight '", name,
               "' has mismatched shape");
    v.value() = t;
  };
  bind("w1", w1_);
  bind("b1", b1_);
  bind("w2", w2_);
  bind("b2", b2_);
  bind("w3", w3_);
  bind("b3", b3_);
  bind("w4", w4_);
  bind("b4", b4_);
  bind("wcls", wcls_);
  bind("bcls", bcls_);
}

ParamMap Classifier::weights() const {
  return {{"w1", w1_.value()},     {"b1", b1_.value()}, {"w2", w2_.value()},
          {"b2", b2_.value()},     {"w3", w3_.value()}, {"b3", b3_.value()},
          {"w4", w4_.value()},     {"b4", b4_.value()}, {"wcls", wcls_.value()},
          {"bcls", bcls_.value()}};
}

Var<float> Classifier::features(const Var<float>& image_leaf) {
  auto h1 = relu(conv2d(image_leaf, w1_, b1_, 1, 1));
  auto h2 = relu(conv2d(h1, w2_, b2_, 2, 1));
  auto h3 = relu(conv2d(h2, w3_, b3_, 2, 1));
  return relu(conv2d(h3, w4_, b4_, 1, 1));
}

Var<float> Classifier::class_logits(const Var<float>& feat) {
  auto pooled = reshape(global_avg_pool(feat), {1, cfg_.feat_channels});
  auto scores = matmul(pooled, wcls_);
  return reshape(add(scores, reshape(bcls_, {1, cfg_.k})), {cfg_.k});
}

TensorData<float> Classifier::feature_values(const TensorData<float>& image) {
  tape_.reset();
  auto feat = features(tape_.constant(image));
  TensorData<float> out = feat.value();
  tape_.reset();
  return out;
}

std::vector<float> Classifier::predict(const TensorData<float>& image) {
  tape_.reset();
  auto logits = class_logits(features(tape_.constant(image)));
  std::vector<float> probs(static_cast<size_t>(cfg_.k));
  for (int k = 0; k < cfg_.k; ++k)
    probs[static_cast<size_t>(k)] = 1.0f / (1.0f + std::exp(-logits.value()[k]));
  tape_.reset();
  return probs;
}

TensorData<float> cam_from_features(const TensorData<float>& feat,
                                    const TensorData<float>& wcls, int class_id) {
  CDSP_CHECK(feat.rank() == 3, "features must be CxHxW");
  CDSP_CHECK(wcls.rank() == 2 && wcls.shape[0] == feat.shape[0],
             "classifier weights must be CxK");
  CDSP_CHECK(class_id >= 1 && class_id <= wcls.shape[1], "class id ", class_id,
             " outside [1,", wcls.shape[1], "]");
  const int c = feat.shape[0], fh = feat.shape[1], fw = feat.shape[2];
  TensorData<float> plane({fh, fw});
  for (int i = 0; i < c; ++i) {
    const float w = wcls.at(i, class_id - 1);
    if (w == 0.0f) continue;
    for (int p = 0; p < fh * fw; ++p)
      plane[p] += w * feat[static_cast<int64_t>(i) * fh * fw + p];
  }
  for (auto& v : plane.data) v = std::max(v, 0.0f);
  return plane;
}

TensorData<float> Classifier::compute_cam(const TensorData<float>& image, int class_id) {
  CDSP_CHECK(class_id >= 1 && class_id <= cfg_.k, "class id ", class_id,
             " outside [1,", cfg_.k, "]");
  const auto feat = feature_values(image);
  auto plane = cam_from_features(feat, wcls_.value(), class_id);
  const int h = image.shape[1], w = image.shape[2];
  TensorData<float> out({h, w});
  out.data = bilinear_resize(plane.data, plane.shape[0], plane.shape[1], h, w);
  return out;
}

CamStack Classifier::compute_cams(const TensorData<float>& image) {
  const auto feat = feature_values(image);
  const int h = image.shape[1], w = image.shape[2];
  CamStack stack;
  stack.k = cfg_.k;
  stack.height = h;
  stack.width = w;
  stack.planes.resize(static_cast<size_t>(cfg_.k) * h * w);
  for (int k = 1; k <= cfg_.k; ++k) {
    auto plane = cam_from_features(feat, wcls_.value(), k);
    auto resized = bilinear_resize(plane.data, plane.shape[0], plane.shape[1], h, w);
    std::copy(resized.begin(), resized.end(),
              stack.planes.begin() + static_cast<int64_t>(k - 1) * h * w);
  }
  return stack;
}

std::vector<double> Classifier::train(const std::vector<ClassifierSample>& data) {
  CDSP_CHECK(!data.empty(), "classifier training needs a nonempty dataset");
  SgdOptimizer<float> opt(static_cast<float>(cfg_.lr), static_cast<float>(cfg_.momentum),
                          static_cast<float>(cfg_.weight_decay));
  opt.add_param("w1", w1_);
  opt.add_param("b1", b1_);
  opt.add_param("w2", w2_);
  opt.add_param("b2", b2_);
  opt.add_param("w3", w3_);
  opt.add_param("b3", b3_);
  opt.add_param("w4", w4_);
  opt.add_param("b4", b4_);
  opt.add_param("wcls", wcls_);
  opt.add_param("bcls", bcls_);

  std::vector<TensorData<float>> targets;
  targets.reserve(data.size());
  for (const auto& s : data) {
    CDSP_CHECK(static_cast<int>(s.class_vec.size()) == cfg_.k + 1,
               "class vector must have K+1 entries indexed by class id");
    TensorData<float> t({cfg_.k});
    for (int k = 1; k <= cfg_.k; ++k)
      t[k - 1] = s.class_vec[static_cast<size_t>(k)] ? 1.0f : 0.0f;
    targets.push_back(std::move(t));
  }

  Rng shuffle_rng(mix_seed(cfg_.seed, 0x50F1E));
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double epoch_loss = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg_.batch)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg_.batch));
      for (size_t i = start; i < end; ++i) {
        tape_.reset();
        auto logits = class_logits(features(tape_.constant(data[order[i]].image)));
        auto loss = multilabel_bce_logits(logits, targets[order[i]]);
        epoch_loss += loss.value()[0];
        tape_.backward(scale(loss, 1.0f / static_cast<float>(end - start)));
      }
      opt.step();
      opt.zero_grad();
    }
    epoch_losses.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  tape_.reset();
  return epoch_losses;
}

Classifier train_classifier(const std::vector<ClassifierSample>& data,
                            const ClassifierConfig& cfg,
                            std::vector<double>* epoch_losses) {
  Classifier clf(cfg);
  auto losses = clf.train(data);
  if (epoch_losses) *epoch_losses = std::move(losses);
  return clf;
}

LabelMask cams_to_pseudo(const CamStack& cams, const std::vector<uint8_t>& present,
                         double tau, bool unclaimed_ignore) {
  CDSP_CHECK(tau > 0.0 && tau < 1.0, "tau must lie in (0,1), got ", tau);
  CDSP_CHECK(static_cast<int>(present.size()) == cams.k + 1,
             "presence vector must have K+1 entries indexed by class id");
  const int h = cams.height, w = cams.width;
  const int64_t plane = static_cast<int64_t>(h) * w;
  const uint8_t unclaimed = unclaimed_ignore ? LabelMask::kIgnore : 0;
  LabelMask out(h, w, unclaimed);

  std::vector<float> maxv(static_cast<size_t>(cams.k) + 1, 0.0f);
  for (int k = 1; k <= cams.k; ++k) {
    if (!present[static_cast<size_t>(k)]) continue;
    const float* p = &cams.planes[static_cast<size_t>(k - 1) * plane];
    maxv[static_cast<size_t>(k)] = *std::max_element(p, p + plane);
  }

  for (int64_t i = 0; i < plane; ++i) {
    float best = -1.0f;
    int best_class = 0;
    for (int k = 1; k <= cams.k; ++k) {  // ascending ids: ties keep the lowest
      if (!present[static_cast<size_t>(k)]) continue;
      const float mv = maxv[static_cast<size_t>(k)];
      if (mv <= 0.0f) continue;
      const float v = cams.planes[static_cast<size_t>(k - 1) * plane + i] / mv;
      if (v > best) {
        best = v;
        best_class = k;
      }
    }
    if (best >= static_cast<float>(tau))
      out.values[static_cast<size_t>(i)] = static_cast<uint8_t>(best_class);
  }
  return out;
}

LabelMask load_external_pseudo(const std::string& path, int num_classes) {
  auto mask = load_mask_pgm(path);
  for (uint8_t v : mask.values)
    if (v != LabelMask::kIgnore && v > num_classes)
      fail(errc::invalid, "pseudo-label value ", static_cast<int>(v), " exceeds K=",
           num_classes, " in '", path, "'");
  return mask;
}

void save_cams(const std::string& path, const CamStack& cams) {
  TensorData<float> t({cams.k, cams.height, cams.width}, std::vector<float>(cams.planes));
  save_tensor(path, t);
}

CamStack load_cams(const std::string& path) {
  auto t = load_tensor<float>(path);
  CDSP_CHECK(t.rank() == 3, "CAM stack tensor must be KxHxW");
  CamStack s;
  s.k = t.shape[0];
  s.height = t.shape[1];
  s.width = t.shape[2];
  s.planes = std::move(t.data);
  return s;
}

std::vector<float> bilinear_resize(const std::vector<float>& src, int sh, int sw, int dh,
                                   int dw) {
  CDSP_CHECK(static_cast<int64_t>(src.size()) == static_cast<int64_t>(sh) * sw,
             "source plane size mismatch");
  std::vector<float> dst(static_cast<size_t>(dh) * dw);
  const double sy = static_cast<double>(sh) / dh, sx = static_cast<double>(sw) / dw;
  for (int y = 0; y < dh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      const double top = src[static_cast<size_t>(y0) * sw + x0] * (1 - wx) +
                         src[static_cast<size_t>(y0) * sw + x1] * wx;
      const double bot = src[static_cast<size_t>(y1) * sw + x0] * (1 - wx) +
                         src[static_cast<size_t>(y1) * sw + x1] * wx;
      dst[static_cast<size_t>(y) * dw + x] = static_cast<float>(top * (1 - wy) + bot * wy);
    }
  }
  return dst;
}

}  // namespace cdsp
