#include <doctest.h>

#include <cmath>

#include "cdsp/lorm.hpp"

using namespace cdsp;

namespace {

// Identity 1x1 projections so similarity reduces to plain cosine attention.
LormParams<double> identity_params(Tape<double>& t, int c) {
  TensorData<double> eye({c, c, 1, 1});
  for (int i = 0; i < c; ++i) eye.data[static_cast<size_t>(i) * c + i] = 1.0;
  LormParams<double> p;
  p.wq = t.leaf(eye, true);
  p.wk = t.leaf(eye, true);
  p.delta = t.leaf(TensorData<double>::scalar(1.0), true);
  return p;
}

// Hand oracle: cosine similarity of position vectors followed by row softmax.
TensorData<double> cosine_softmax_oracle(const TensorData<double>& f) {
  const int c = f.shape[0], hw = f.shape[1] * f.shape[2];
  TensorData<double> a({hw, hw});
  for (int i = 0; i < hw; ++i)
    for (int j = 0; j < hw; ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (int ch = 0; ch < c; ++ch) {
        const double vi = f.data[static_cast<size_t>(ch) * hw + i];
        const double vj = f.data[static_cast<size_t>(ch) * hw + j];
        dot += vi * vj;
        ni += vi * vi;
        nj += vj * vj;
      }
      a.at(i, j) = dot / std::max(std::sqrt(ni) * std::sqrt(nj), 1e-30);
    }
  for (int i = 0; i < hw; ++i) {
    double mx = a.at(i, 0);
    for (int j = 1; j < hw; ++j) mx = std::max(mx, a.at(i, j));
    double sum = 0;
    for (int j = 0; j < hw; ++j) {
      a.at(i, j) = std::exp(a.at(i, j) - mx);
      sum += a.at(i, j);
    }
    for (int j = 0; j < hw; ++j) a.at(i, j) /= sum;
  }
  return a;
}

}  // namespace

TEST_CASE("similarity is uniform for constant features and row-stochastic always") {
  Tape<double> t;
  auto p = identity_params(t, 2);
  auto constant = t.leaf(TensorData<double>::full({2, 2, 2}, 1.7), false);
  auto a = lorm_similarity(constant, p);
  REQUIRE(a.value().shape == Shape{4, 4});
  for (int64_t i = 0; i < 16; ++i) CHECK(a.value()[i] == doctest::Approx(0.25));

  Rng rng(91);
  auto p3 = identity_params(t, 3);
  auto f = t.leaf(TensorData<double>::randn({3, 2, 3}, rng), false);
  auto a2 = lorm_similarity(f, p3);
  for (int i = 0; i < 6; ++i) {
    double sum = 0;
    for (int j = 0; j < 6; ++j) {
      CHECK(a2.value().at(i, j) >= 0.0);
      sum += a2.value().at(i, j);
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("similarity matches hand cosine+softmax with identity projections") {
  TensorData<double> f({2, 2, 2}, {0.5, -1.0, 2.0, 0.25, 1.5, 0.75, -0.5, 1.0});
  Tape<double> t;
  auto p = identity_params(t, 2);
  auto a = lorm_similarity(t.leaf(f, false), p);
  auto want = cosine_softmax_oracle(f);
  REQUIRE(a.value().shape == want.shape);
  for (int64_t i = 0; i < want.numel(); ++i)
    CHECK(a.value()[i] == doctest::Approx(want[i]).epsilon(1e-9));
}

TEST_CASE("similarity is invariant to positive feature scaling") {
  Rng rng(93);
  TensorData<double> f = TensorData<double>::randn({3, 2, 2}, rng);
  Tape<double> t;
  auto p = identity_params(t, 3);
  auto base = lorm_similarity(t.leaf(f, false), p);
  for (double alpha : {0.5, 2.0, 10.0}) {
    TensorData<double> scaled = f;
    for (auto& v : scaled.data) v *= alpha;
    auto a = lorm_similarity(t.leaf(scaled, false), p);
    for (int64_t i = 0; i < a.value().numel(); ++i)
      CHECK(a.value()[i] == doctest::Approx(base.value()[i]).epsilon(1e-5));
  }
}

TEST_CASE("mask_apply semantics") {
  Rng rng(97);
  Tape<double> t;
  TensorData<double> av = TensorData<double>::randn({4, 4}, rng);
  auto a = t.leaf(av, false);

  auto ones = lorm_mask_apply(a, t.constant(TensorData<double>::full({4}, 1.0)));
  for (int64_t i = 0; i < 16; ++i) CHECK(ones.value()[i] == av[i]);

  auto zeros = lorm_mask_apply(a, t.constant(TensorData<double>::zeros({4})));
  for (int64_t i = 0; i < 16; ++i) CHECK(zeros.value()[i] == 0.0);

  TensorData<double> single({4});
  single[2] = 1.0;
  auto col = lorm_mask_apply(a, t.constant(single));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(col.value().at(i, j) == (j == 2 ? av.at(i, j) : 0.0));

  CHECK_THROWS_AS(lorm_mask_apply(a, t.constant(TensorData<double>::full({5}, 1.0))), error);
}

TEST_CASE("rectify semantics") {
  Tape<double> t;

  SUBCASE("constant features, all-ones mask, delta 1 -> F_hat = F") {
    auto p = identity_params(t, 2);
    auto f = t.leaf(TensorData<double>::full({2, 2, 2}, 0.8), false);
    auto a = lorm_similarity(f, p);
    auto am = lorm_mask_apply(a, t.constant(TensorData<double>::full({4}, 1.0)));
    auto fh = lorm_rectify(f, am, p.delta);
    for (int64_t i = 0; i < 8; ++i) CHECK(fh.value()[i] == doctest::Approx(0.8));
    CHECK(lorm_loss(f, fh).value()[0] == doctest::Approx(0.0));
  }

  SUBCASE("all-zero mask -> F_hat = 0 and loss = mean(F^2)") {
    auto p = identity_params(t, 2);
    Rng rng(101);
    TensorData<double> fv = TensorData<double>::randn({2, 2, 2}, rng);
    auto f = t.leaf(fv, false);
    auto a = lorm_similarity(f, p);
    auto am = lorm_mask_apply(a, t.constant(TensorData<double>::zeros({4})));
    auto fh = lorm_rectify(f, am, p.delta);
    for (int64_t i = 0; i < 8; ++i) CHECK(fh.value()[i] == 0.0);
    double want = 0;
    for (const auto& v : fv.data) want += v * v;
    want /= static_cast<double>(fv.numel());
    CHECK(lorm_loss(f, fh).value()[0] == doctest::Approx(want));
  }

  SUBCASE("C=1, HW=2 hand instance") {
    // A' rows act on F columns: F_hat[:,i] = delta * sum_j F[:,j] A'[i,j]
    TensorData<double> fv({1, 1, 2}, {2.0, -3.0});
    TensorData<double> av({2, 2}, {0.25, 0.75, 0.5, 0.5});
    auto f = t.leaf(fv, false);
    auto a = t.leaf(av, false);
    auto delta = t.leaf(TensorData<double>::scalar(2.0), false);
    auto fh = lorm_rectify(f, a, delta);
    CHECK(fh.value()[0] == doctest::Approx(2.0 * (2.0 * 0.25 + -3.0 * 0.75)));
    CHECK(fh.value()[1] == doctest::Approx(2.0 * (2.0 * 0.5 + -3.0 * 0.5)));
  }

  SUBCASE("convex combination bounds with all-ones mask") {
    Rng rng(103);
    auto p = identity_params(t, 3);
    TensorData<double> fv = TensorData<double>::randn({3, 2, 2}, rng);
    auto f = t.leaf(fv, false);
    auto a = lorm_similarity(f, p);
    auto am = lorm_mask_apply(a, t.constant(TensorData<double>::full({4}, 1.0)));
    auto fh = lorm_rectify(f, am, p.delta);  // delta = 1
    for (int c = 0; c < 3; ++c) {
      double lo = 1e30, hi = -1e30;
      for (int j = 0; j < 4; ++j) {
        lo = std::min(lo, fv[c * 4 + j]);
        hi = std::max(hi, fv[c * 4 + j]);
      }
      for (int i = 0; i < 4; ++i) {
        CHECK(fh.value()[c * 4 + i] >= lo - 1e-9);
        CHECK(fh.value()[c * 4 + i] <= hi + 1e-9);
      }
    }
  }
}

TEST_CASE("delta initializes to exactly 1 and receives gradient") {
  Tape<double> t;
  Rng rng(107);
  auto p = make_lorm_params(t, 3, rng);
  CHECK(p.delta.value()[0] == 1.0);

  auto f = t.leaf(TensorData<double>::randn({3, 2, 2}, rng), true);
  TensorData<double> mask = TensorData<double>::full({4}, 1.0);
  auto loss = lorm_pipeline(f, p, t.constant(mask));
  t.backward(loss);
  CHECK(p.delta.has_grad());
  CHECK(p.wq.has_grad());
  CHECK(f.has_grad());
}

TEST_CASE("foreground mask downsampling") {
  LabelMask pseudo(8, 8, 0);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 8; ++c) pseudo.at(r, c) = 1;  // top half foreground
  auto m = foreground_mask_flat<double>(pseudo, 4, 4);
  REQUIRE(m.numel() == 16);
  for (int fy = 0; fy < 4; ++fy)
    for (int fx = 0; fx < 4; ++fx)
      CHECK(m[fy * 4 + fx] == (fy < 2 ? 1.0 : 0.0));
}

TEST_CASE("foreground-only lorm loss handles empty masks") {
  Tape<double> t;
  Rng rng(109);
  auto f = t.leaf(TensorData<double>::randn({2, 2, 2}, rng), true);
  auto fh = t.leaf(TensorData<double>::randn({2, 2, 2}, rng), true);
  TensorData<double> empty = TensorData<double>::zeros({4});
  auto loss = lorm_loss(f, fh, true, &empty);
  CHECK(loss.value()[0] == 0.0);

  TensorData<double> partial({4}, {1.0, 0.0, 1.0, 0.0});
  auto loss2 = lorm_loss(f, fh, true, &partial);
  double want = 0;
  for (int c = 0; c < 2; ++c)
    for (int i : {0, 2}) {
      const double d = f.value()[c * 4 + i] - fh.value()[c * 4 + i];
      want += d * d;
    }
  want /= 4.0;  // C * n_fg = 2 * 2
  CHECK(loss2.value()[0] == doctest::Approx(want));
}
