// Localization rectification: cosine-similarity attention over spatial
// positions, masked by the pseudo-label foreground, producing rectified
// features trained toward the originals with an MSE loss.
#pragma once

#include <cmath>

#include "cdsp/autodiff.hpp"
#include "cdsp/scribble.hpp"

namespace cdsp {

template <class T>
struct LormParams {
  Var<T> wq, wk;  // 1x1 projection kernels CxCx1x1, bias-free
  Var<T> delta;   // learnable rectification degree, initialized to exactly 1
};

template <class T>
LormParams<T> make_lorm_params(Tape<T>& tape, int channels, Rng& rng) {
  const T sd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(channels)));
  LormParams<T> p;
  p.wq = tape.leaf(TensorData<T>::randn({channels, channels, 1, 1}, rng, sd), true);
  p.wk = tape.leaf(TensorData<T>::randn({channels, channels, 1, 1}, rng, sd), true);
  p.delta = tape.leaf(TensorData<T>::scalar(T(1)), true);
  return p;
}

// Row-stochastic HWxHW similarity: cosine similarities of the projected
// per-position channel vectors, softmax over each row.
template <class T>
Var<T> lorm_similarity(const Var<T>& feat, const LormParams<T>& p) {
  const auto& shape = feat.value().shape;
  CDSP_CHECK(feat.value().rank() == 3, "lorm expects CxHxW features");
  const int c = shape[0], hw = shape[1] * shape[2];
  CDSP_CHECK(hw >= 1, "lorm: zero spatial extent");
  Var<T> q = reshape(conv2d(feat, p.wq), {c, hw});
  Var<T> k = reshape(conv2d(feat, p.wk), {c, hw});
  q = l2_normalize(q, 0);
  k = l2_normalize(k, 0);
  return softmax(matmul(transpose(q), k), 1);
}

// A'[i,j] = A[i,j] * m[j]: the mask suppresses background reference
// positions in every row.
template <class T>
Var<T> lorm_mask_apply(const Var<T>& a, const Var<T>& mask_flat) {
  return scale_columns(a, mask_flat);
}

// F_hat[:,i] = delta * sum_j F[:,j] * A'[i,j], reshaped back to CxHxW.
template <class T>
Var<T> lorm_rectify(const Var<T>& feat, const Var<T>& a_masked, const Var<T>& delta) {
  const auto& shape = feat.value().shape;
  const int c = shape[0], h = shape[1], w = shape[2];
  Var<T> flat = reshape(feat, {c, h * w});
  Var<T> rect = matmul(flat, transpose(a_masked));
  return reshape(scale_by(rect, delta), {c, h, w});
}

// MSE over all positions; `foreground_only` restricts the mean to positions
// with a nonzero mask (used when the pseudo-label has no foreground, where
// the literal form would pull features toward zero).
template <class T>
Var<T> lorm_loss(const Var<T>& feat, const Var<T>& feat_hat, bool foreground_only = false,
                 const TensorData<T>* mask_plane = nullptr) {
  if (!foreground_only) return mse(feat, feat_hat);
  CDSP_CHECK(mask_plane != nullptr, "foreground_only lorm_loss needs the mask");
  const auto& shape = feat.value().shape;
  const int c = shape[0];
  const int64_t plane = static_cast<int64_t>(shape[1]) * shape[2];
  CDSP_CHECK(mask_plane->numel() == plane, "mask size mismatch");
  int64_t n_fg = 0;
  for (const auto& v : mask_plane->data)
    if (v != T(0)) ++n_fg;
  Tape<T>* tape = feat.node()->tape;
  if (n_fg == 0) return tape->constant(TensorData<T>::scalar(T(0)));
  TensorData<T> rep({c, shape[1], shape[2]});
  for (int ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < plane; ++i) rep[ch * plane + i] = mask_plane->data[static_cast<size_t>(i)];
  Var<T> diff = mul(sub(feat, feat_hat), tape->constant(std::move(rep)));
  return scale(sum(mul(diff, diff)), T(1) / static_cast<T>(c * n_fg));
}

// Full pipeline: similarity -> mask -> rectify -> MSE. `detach_input`
// stops gradients from flowing into the trunk through the rectified branch.
template <class T>
Var<T> lorm_pipeline(const Var<T>& feat, const LormParams<T>& p, const Var<T>& mask_flat,
                     bool foreground_only = false, bool detach_input = false) {
  Var<T> fin = detach_input ? detach(feat) : feat;
  Var<T> a = lorm_similarity(fin, p);
  Var<T> a_masked = lorm_mask_apply(a, mask_flat);
  Var<T> feat_hat = lorm_rectify(fin, a_masked, p.delta);
  const TensorData<T>& m = mask_flat.value();
  return lorm_loss(feat, feat_hat, foreground_only, &m);
}

// Binary foreground plane (1 where class 1..K) nearest-downsampled from the
// pseudo-label to the feature resolution, flattened row-major.
template <class T>
TensorData<T> foreground_mask_flat(const LabelMask& pseudo, int feat_h, int feat_w) {
  CDSP_CHECK(feat_h >= 1 && feat_w >= 1, "empty feature plane");
  TensorData<T> out({feat_h * feat_w});
  for (int fy = 0; fy < feat_h; ++fy)
    for (int fx = 0; fx < feat_w; ++fx) {
      const int sy = std::min(pseudo.height - 1, (2 * fy + 1) * pseudo.height / (2 * feat_h));
      const int sx = std::min(pseudo.width - 1, (2 * fx + 1) * pseudo.width / (2 * feat_w));
      const uint8_t v = pseudo.at(sy, sx);
      out[static_cast<int64_t>(fy) * feat_w + fx] =
          (v >= 1 && v != LabelMask::kIgnore) ? T(1) : T(0);
    }
  return out;
}

}  // namespace cdsp
