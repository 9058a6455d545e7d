// Supervision terms: partial cross-entropy over the scribble set, smoothed
// cross-entropy over the pseudo-label set, the two distance entropy terms,
// and their unweighted composition into the training objective.
#pragma once

#include <cstdint>
#include <string>

#include "cdsp/autodiff.hpp"
#include "cdsp/distmap.hpp"
#include "cdsp/scribble.hpp"

namespace cdsp {

struct LossSwitches {
  bool segs = false;
  bool segc = false;
  bool ds = false;
  bool dc = false;
  bool lorm = false;

  static LossSwitches parse(const std::string& comma_list);
  std::string to_string() const;
  bool any() const { return segs || segc || ds || dc || lorm; }
};

struct LossReport {
  double segs = 0, segc = 0, ds = 0, dc = 0, lorm = 0, total = 0;
  int64_t n_scribble = 0;  // |Omega_s|
  int64_t n_pseudo = 0;    // |Omega~|
  int64_t n_s = 0;         // nonzero d_s weights
  int64_t n_c = 0;         // nonzero d_c weights
  LossSwitches enabled;
};

inline const char* loss_csv_header() { return "step,segs,segc,ds,dc,lorm,total"; }
std::string loss_csv_row(int64_t step, const LossReport& r);

namespace detail {
template <class T>
void check_prediction(const TensorData<T>& p) {
  CDSP_CHECK(p.rank() == 3, "prediction must be (K+1)xHxW, got ", shape_str(p.shape));
  CDSP_CHECK(p.shape[0] >= 1, "prediction needs at least one class plane");
}
}  // namespace detail

// Mean over non-ignore pixels of -log p at the labeled class. Empty scribble
// set yields a constant 0.
template <class T>
Var<T> partial_ce(const Var<T>& pred, const LabelMask& scribble, int64_t* count_out = nullptr) {
  const auto& pv = pred.value();
  detail::check_prediction(pv);
  CDSP_CHECK(pv.shape[1] == scribble.height && pv.shape[2] == scribble.width,
             "prediction ", shape_str(pv.shape), " does not cover ", scribble.height, "x",
             scribble.width, " labels");
  const int classes = pv.shape[0];
  const int64_t plane = static_cast<int64_t>(scribble.height) * scribble.width;
  int64_t labeled = 0;
  for (uint8_t v : scribble.values)
    if (v != LabelMask::kIgnore) {
      CDSP_CHECK(v < classes, "label class ", static_cast<int>(v), " out of range for ",
                 classes, " prediction planes");
      ++labeled;
    }
  if (count_out) *count_out = labeled;
  Tape<T>* tape = pred.node()->tape;
  if (labeled == 0) return tape->constant(TensorData<T>::scalar(T(0)));
  TensorData<T> weights(pv.shape);
  const T w = T(1) / static_cast<T>(labeled);
  for (int64_t i = 0; i < plane; ++i) {
    const uint8_t v = scribble.values[static_cast<size_t>(i)];
    if (v != LabelMask::kIgnore) weights[static_cast<int64_t>(v) * plane + i] = w;
  }
  return scale(sum(mul(tape->constant(std::move(weights)), log_guard(pred))), T(-1));
}

// Label-smoothed cross-entropy over pseudo-labeled pixels:
// (1-eps) * c(y, p) + eps * c(1/K, p), with K the class count of the
// prediction (background included). Ignore pixels are excluded.
template <class T>
Var<T> smoothed_ce(const Var<T>& pred, const LabelMask& pseudo, double epsilon,
                   int64_t* count_out = nullptr) {
  CDSP_CHECK(epsilon >= 0.0 && epsilon < 1.0, "epsilon must be in [0,1), got ", epsilon);
  const auto& pv = pred.value();
  detail::check_prediction(pv);
  CDSP_CHECK(pv.shape[1] == pseudo.height && pv.shape[2] == pseudo.width,
             "prediction ", shape_str(pv.shape), " does not cover ", pseudo.height, "x",
             pseudo.width, " labels");
  const int classes = pv.shape[0];
  const int64_t plane = static_cast<int64_t>(pseudo.height) * pseudo.width;
  int64_t labeled = 0;
  for (uint8_t v : pseudo.values)
    if (v != LabelMask::kIgnore) {
      CDSP_CHECK(v < classes, "pseudo-label class ", static_cast<int>(v),
                 " out of range for ", classes, " prediction planes");
      ++labeled;
    }
  if (count_out) *count_out = labeled;
  Tape<T>* tape = pred.node()->tape;
  if (labeled == 0) return tape->constant(TensorData<T>::scalar(T(0)));
  TensorData<T> weights(pv.shape);
  const T w_hot = static_cast<T>((1.0 - epsilon) / static_cast<double>(labeled));
  const T w_unif = static_cast<T>(epsilon / static_cast<double>(classes) /
                                  static_cast<double>(labeled));
  for (int64_t i = 0; i < plane; ++i) {
    const uint8_t v = pseudo.values[static_cast<size_t>(i)];
    if (v == LabelMask::kIgnore) continue;
    weights[static_cast<int64_t>(v) * plane + i] += w_hot;
    for (int k = 0; k < classes; ++k) weights[static_cast<int64_t>(k) * plane + i] += w_unif;
  }
  return scale(sum(mul(tape->constant(std::move(weights)), log_guard(pred))), T(-1));
}

// Distance-weighted entropy over pixels with nonzero weight, averaged by the
// nonzero count N. Default minimizes the weighted Shannon entropy; the
// paper-literal mode keeps the signed sum d(i) * p_i log p_i instead, so
// literal == -default for identical inputs. N == 0 yields a constant 0.
template <class T>
Var<T> distance_entropy(const Var<T>& pred, const DistanceMap& d, bool paper_literal = false,
                        int64_t* nonzero_out = nullptr) {
  const auto& pv = pred.value();
  detail::check_prediction(pv);
  CDSP_CHECK(pv.shape[1] == d.height && pv.shape[2] == d.width, "prediction ",
             shape_str(pv.shape), " does not cover ", d.height, "x", d.width, " weights");
  const int classes = pv.shape[0];
  const int64_t plane = static_cast<int64_t>(d.height) * d.width;
  int64_t nonzero = 0;
  for (float v : d.values)
    if (v > 0.0f) ++nonzero;
  if (nonzero_out) *nonzero_out = nonzero;
  Tape<T>* tape = pred.node()->tape;
  if (nonzero == 0) return tape->constant(TensorData<T>::scalar(T(0)));
  TensorData<T> weights(pv.shape);
  const T inv_n = T(1) / static_cast<T>(nonzero);
  for (int64_t i = 0; i < plane; ++i) {
    const T w = static_cast<T>(d.values[static_cast<size_t>(i)]) * inv_n;
    if (w == T(0)) continue;
    for (int k = 0; k < classes; ++k) weights[static_cast<int64_t>(k) * plane + i] = w;
  }
  Var<T> signed_sum =
      sum(mul(tape->constant(std::move(weights)), mul(pred, log_guard(pred))));
  return paper_literal ? signed_sum : scale(signed_sum, T(-1));
}

template <class T>
struct LossParts {
  Var<T> segs, segc, ds, dc, lorm;
};

// Unweighted sum of the enabled parts. Disabled parts contribute nothing and
// stay zero in the report.
template <class T>
Var<T> total_loss(Tape<T>& tape, const LossParts<T>& parts, const LossSwitches& sw,
                  LossReport* report = nullptr) {
  Var<T> total = tape.constant(TensorData<T>::scalar(T(0)));
  auto take = [&](bool on, const Var<T>& part, const char* name, double* slot) {
    if (!on) return;
    CDSP_CHECK(part, "loss switch '", name, "' enabled but its term was not computed");
    total = add(total, part);
    if (slot) *slot = static_cast<double>(part.value()[0]);
  };
  LossReport local;
  LossReport* r = report ? report : &local;
  r->enabled = sw;
  take(sw.segs, parts.segs, "segs", &r->segs);
  take(sw.segc, parts.segc, "segc", &r->segc);
  take(sw.ds, parts.ds, "ds", &r->ds);
  take(sw.dc, parts.dc, "dc", &r->dc);
  take(sw.lorm, parts.lorm, "lorm", &r->lorm);
  r->total = static_cast<double>(total.value()[0]);
  return total;
}

}  // namespace cdsp
