#include "cdsp/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cdsp {

namespace {

TensorData<float> he_init(Shape shape, Rng& rng) {
  int64_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const float sd = std::sqrt(2.0f / static_cast<float>(fan_in));
  return TensorData<float>::randn(std::move(shape), rng, sd);
}

}  // namespace

SegModel::SegModel(SegModelConfig cfg) : cfg_(cfg) {
  CDSP_CHECK(cfg_.k >= 1, "segmentation model needs at least one foreground class");
  Rng rng(mix_seed(cfg_.seed, 0x5E6));
  w1_ = tape_.leaf(he_init({cfg_.c1, 3, 3, 3}, rng), true);
  b1_ = tape_.leaf(TensorData<float>::zeros({cfg_.c1}), true);
  w2_ = tape_.leaf(he_init({cfg_.c2, cfg_.c1, 3, 3}, rng), true);
  b2_ = tape_.leaf(TensorData<float>::zeros({cfg_.c2}), true);
  w3_ = tape_.leaf(he_init({cfg_.cf, cfg_.c2, 3, 3}, rng), true);
  b3_ = tape_.leaf(TensorData<float>::zeros({cfg_.cf}), true);
  w4_ = tape_.leaf(he_init({cfg_.cf, cfg_.cf, 3, 3}, rng), true);
  b4_ = tape_.leaf(TensorData<float>::zeros({cfg_.cf}), true);
  whead_ = tape_.leaf(he_init({cfg_.k + 1, cfg_.cf, 1, 1}, rng), true);
  bhead_ = tape_.leaf(TensorData<float>::zeros({cfg_.k + 1}), true);
}

SegModel::SegModel(SegModelConfig cfg, const ParamMap& weights) : SegModel(cfg) {
  auto bind = [&](const char* name, Var<float>& v) {
    const auto& t = checkpoint_get(weights, name);
    CDSP_CHECK(t.shape == v.value().shape, "seg weight '", name, "' has mismatched shape");
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
  bind("whead", whead_);
  bind("bhead", bhead_);
}

ParamMap SegModel::weights() const {
  return {{"w1", w1_.value()},       {"b1", b1_.value()}, {"w2", w2_.value()},
          {"b2", b2_.value()},       {"w3", w3_.value()}, {"b3", b3_.value()},
          {"w4", w4_.value()},       {"b4", b4_.value()}, {"whead", whead_.value()},
          {"bhead", bhead_.value()}};
}

void SegModel::register_params(SgdOptimizer<float>& opt) {
  opt.add_param("w1", w1_);
  opt.add_param("b1", b1_);
  opt.add_param("w2", w2_);
  opt.add_param("b2", b2_);
  opt.add_param("w3", w3_);
  opt.add_param("b3", b3_);
  opt.add_param("w4", w4_);
  opt.add_param("b4", b4_);
  opt.add_param("whead", whead_);
  opt.add_param("bhead", bhead_);
}

SegForward SegModel::forward(const TensorData<float>& image) {
  CDSP_CHECK(image.rank() == 3 && image.shape[0] == 3, "image must be 3xHxW");
  auto x = tape_.constant(image);
  auto h1 = relu(conv2d(x, w1_, b1_, 1, 1));
  auto h2 = relu(conv2d(h1, w2_, b2_, 2, 1));
  auto h3 = relu(conv2d(h2, w3_, b3_, 2, 1));
  auto feat = relu(conv2d(h3, w4_, b4_, 1, 1));
  auto logits = conv2d(feat, whead_, bhead_, 1, 0);
  auto up = upsample_nearest(logits, 4);
  return {feat, softmax(up, 0)};
}

LabelMask SegModel::predict(const TensorData<float>& image) {
  tape_.reset();
  auto out = forward(image);
  const auto& p = out.prob.value();
  const int classes = p.shape[0], h = p.shape[1], w = p.shape[2];
  LabelMask mask(h, w, 0);
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int64_t i = 0; i < plane; ++i) {
    int best = 0;
    float bv = p[i];
    for (int k = 1; k < classes; ++k) {
      const float v = p[k * plane + i];
      if (v > bv) {
        bv = v;
        best = k;
      }
    }
    mask.values[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
  }
  tape_.reset();
  return mask;
}

TensorData<float> flip_image(const TensorData<float>& img) {
  TensorData<float> out(img.shape);
  const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(ch, y, x) = img.at(ch, y, w - 1 - x);
  return out;
}

LabelMask flip_mask(const LabelMask& m) {
  LabelMask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) out.at(y, x) = m.at(y, m.width - 1 - x);
  return out;
}

DistanceMap flip_distance_map(const DistanceMap& m) {
  DistanceMap out = m;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      out.values[static_cast<size_t>(y) * m.width + x] =
          m.values[static_cast<size_t>(y) * m.width + (m.width - 1 - x)];
      out.raw[static_cast<size_t>(y) * m.width + x] =
          m.raw[static_cast<size_t>(y) * m.width + (m.width - 1 - x)];
    }
  return out;
}

TrainResult train_segmentation(const SegModelConfig& mc, const TrainConfig& tc,
                               const std::vector<SynthSample>& train,
                               const std::vector<LabelMask>& scribble_rasters,
                               const std::vector<LabelMask>* pseudo_labels,
                               const std::vector<DistanceMap>* ds_maps,
                               const std::vector<DistanceMap>* dc_maps) {
  CDSP_CHECK(!train.empty(), "empty training set");
  CDSP_CHECK(tc.losses.any(), "no losses enabled");
  CDSP_CHECK(tc.warmup_epochs >= 0 && tc.warmup_epochs <= tc.epochs,
             "warmup_epochs must not exceed epochs");
  const size_t n = train.size();
  CDSP_CHECK(scribble_rasters.size() == n, "need one scribble raster per training image");
  const bool needs_pseudo = tc.losses.segc || tc.losses.lorm;
  if (needs_pseudo)
    CDSP_CHECK(pseudo_labels && pseudo_labels->size() == n,
               "enabled losses require precomputed pseudo-labels for every image");
  if (tc.losses.ds)
    CDSP_CHECK(ds_maps && ds_maps->size() == n,
               "L_ds requires precomputed scribble distance maps for every image");
  if (tc.losses.dc)
    CDSP_CHECK(dc_maps && dc_maps->size() == n,
               "L_dc requires precomputed pseudo distance maps for every image");

  SegModel model(mc);
  Tape<float>& tape = model.tape();
  SgdOptimizer<float> opt(0.0f, static_cast<float>(tc.momentum),
                          static_cast<float>(tc.weight_decay));
  model.register_params(opt);

  LormParams<float> lorm;
  if (tc.losses.lorm) {
    Rng lrng(mix_seed(tc.seed, 0x102));
    lorm = make_lorm_params(tape, mc.cf, lrng);
    opt.add_param("lorm_wq", lorm.wq);
    opt.add_param("lorm_wk", lorm.wk);
    opt.add_param("lorm_delta", lorm.delta);
  }

  const int64_t steps_per_epoch =
      static_cast<int64_t>((n + static_cast<size_t>(tc.batch) - 1) / tc.batch);
  const int64_t total_steps = steps_per_epoch * tc.epochs;
  const int64_t warmup_steps = steps_per_epoch * tc.warmup_epochs;

  Rng shuffle_rng(mix_seed(tc.seed, 0x103));
  Rng aug_rng(mix_seed(tc.seed, 0x104));
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.loss_csv.push_back(loss_csv_header());

  int64_t step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    for (size_t start = 0; start < n; start += static_cast<size_t>(tc.batch)) {
      const size_t end = std::min(n, start + static_cast<size_t>(tc.batch));
      const float inv_batch = 1.0f / static_cast<float>(end - start);
      opt.set_lr(static_cast<float>(
          warmup_cosine_lr(step, total_steps, warmup_steps, tc.base_lr)));

      LossReport batch_report;
      batch_report.enabled = tc.losses;
      for (size_t bi = start; bi < end; ++bi) {
        const size_t idx = order[bi];
        tape.reset();

        const bool flip = tc.augment && aug_rng.bernoulli(0.5);
        const float bright =
            tc.augment ? static_cast<float>(aug_rng.uniform(0.9, 1.1)) : 1.0f;

        TensorData<float> image =
            flip ? flip_image(train[idx].image) : train[idx].image;
        if (bright != 1.0f)
          for (auto& v : image.data) v = std::clamp(v * bright, 0.0f, 1.0f);

        auto fw = model.forward(image);

        LossParts<float> parts;
        LossReport rep;
        rep.enabled = tc.losses;
        if (tc.losses.segs) {
          const LabelMask scrib =
              flip ? flip_mask(scribble_rasters[idx]) : scribble_rasters[idx];
          parts.segs = partial_ce(fw.prob, scrib, &rep.n_scribble);
        }
        LabelMask pseudo;
        if (needs_pseudo)
          pseudo = flip ? flip_mask((*pseudo_labels)[idx]) : (*pseudo_labels)[idx];
        if (tc.losses.segc)
          parts.segc = smoothed_ce(fw.prob, pseudo, tc.epsilon, &rep.n_pseudo);
        if (tc.losses.ds) {
          const DistanceMap ds =
              flip ? flip_distance_map((*ds_maps)[idx]) : (*ds_maps)[idx];
          parts.ds = distance_entropy(fw.prob, ds, tc.paper_literal_entropy, &rep.n_s);
        }
        if (tc.losses.dc) {
          const DistanceMap dcm =
              flip ? flip_distance_map((*dc_maps)[idx]) : (*dc_maps)[idx];
          parts.dc = distance_entropy(fw.prob, dcm, tc.paper_literal_entropy, &rep.n_c);
        }
        if (tc.losses.lorm) {
          const auto& fshape = fw.feat.value().shape;
          auto mask = foreground_mask_flat<float>(pseudo, fshape[1], fshape[2]);
          parts.lorm = lorm_pipeline(fw.feat, lorm, tape.constant(std::move(mask)),
                                     tc.lorm_foreground_only, tc.lorm_detach_input);
        }

        auto total = total_loss(tape, parts, tc.losses, &rep);
        tape.backward(scale(total, inv_batch));

        batch_report.segs += rep.segs * inv_batch;
        batch_report.segc += rep.segc * inv_batch;
        batch_report.ds += rep.ds * inv_batch;
        batch_report.dc += rep.dc * inv_batch;
        batch_report.lorm += rep.lorm * inv_batch;
        batch_report.total += rep.total * inv_batch;
        batch_report.n_scribble += rep.n_scribble;
        batch_report.n_pseudo += rep.n_pseudo;
        batch_report.n_s += rep.n_s;
        batch_report.n_c += rep.n_c;
      }
      opt.step();
      opt.zero_grad();
      result.step_reports.push_back(batch_report);
      result.loss_csv.push_back(loss_csv_row(step, batch_report));
      ++step;
    }
  }
  tape.reset();

  result.weights = model.weights();
  if (tc.losses.lorm) {
    result.weights.emplace_back("lorm_wq", lorm.wq.value());
    result.weights.emplace_back("lorm_wk", lorm.wk.value());
    result.weights.emplace_back("lorm_delta", lorm.delta.value());
  }
  return result;
}

void accumulate_confusion(const LabelMask& gt, const LabelMask& pred,
                          std::vector<int64_t>& confusion, int classes) {
  CDSP_CHECK(gt.height == pred.height && gt.width == pred.width,
             "prediction size mismatch");
  CDSP_CHECK(static_cast<int>(confusion.size()) == classes * classes,
             "confusion matrix size mismatch");
  for (size_t i = 0; i < gt.values.size(); ++i) {
    const uint8_t g = gt.values[i];
    if (g == LabelMask::kIgnore) continue;
    CDSP_CHECK(g < classes, "gt class ", static_cast<int>(g), " out of range");
    CDSP_CHECK(pred.values[i] < classes, "predicted class out of range");
    confusion[static_cast<size_t>(g) * classes + pred.values[i]]++;
  }
}

MetricsReport metrics_from_confusion(std::vector<int64_t> confusion, int classes) {
  MetricsReport report;
  report.confusion = std::move(confusion);
  report.iou.assign(static_cast<size_t>(classes), -1.0);
  double acc = 0;
  int counted = 0;
  for (int c = 0; c < classes; ++c) {
    const int64_t tp = report.confusion[static_cast<size_t>(c) * classes + c];
    int64_t fp = 0, fn = 0;
    for (int o = 0; o < classes; ++o) {
      if (o == c) continue;
      fp += report.confusion[static_cast<size_t>(o) * classes + c];
      fn += report.confusion[static_cast<size_t>(c) * classes + o];
    }
    const int64_t unions = tp + fp + fn;
    if (unions == 0) continue;
    report.iou[static_cast<size_t>(c)] =
        static_cast<double>(tp) / static_cast<double>(unions);
    acc += report.iou[static_cast<size_t>(c)];
    ++counted;
  }
  report.miou = counted ? acc / counted : 0.0;
  return report;
}

MetricsReport evaluate_miou(SegModel& model, const std::vector<SynthSample>& samples) {
  const int classes = model.config().k + 1;
  std::vector<int64_t> confusion(static_cast<size_t>(classes) * classes, 0);
  for (const auto& s : samples)
    accumulate_confusion(s.gt, model.predict(s.image), confusion, classes);
  return metrics_from_confusion(std::move(confusion), classes);
}

}  // namespace cdsp
