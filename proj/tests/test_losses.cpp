#include <doctest.h>

#include <cmath>

#include "cdsp/losses.hpp"

using namespace cdsp;

namespace {

// Softmax-free prediction fixture: directly a probability tensor.
Var<double> prob_leaf(Tape<double>& t, TensorData<double> p, bool requires_grad = false) {
  return t.leaf(std::move(p), requires_grad);
}

TensorData<double> uniform_pred(int classes, int h, int w) {
  return TensorData<double>::full({classes, h, w}, 1.0 / classes);
}

}  // namespace

TEST_CASE("partial_ce values") {
  const int classes = 4, h = 3, w = 3;

  SUBCASE("confident-correct prediction gives ~0") {
    LabelMask scrib(h, w, LabelMask::kIgnore);
    scrib.at(0, 0) = 2;
    scrib.at(2, 1) = 0;
    TensorData<double> p({classes, h, w});
    const double eps = 1e-12;
    for (int k = 0; k < classes; ++k)
      for (int i = 0; i < h * w; ++i) p[k * h * w + i] = eps / (classes - 1);
    p[2 * h * w + 0] = 1.0 - 1e-12;
    p[0 * h * w + (2 * w + 1)] = 1.0 - 1e-12;
    Tape<double> t;
    auto loss = partial_ce(prob_leaf(t, p), scrib);
    CHECK(std::abs(loss.value()[0]) < 1e-9);
  }

  SUBCASE("all-ignore scribble gives exactly 0") {
    Tape<double> t;
    int64_t count = -1;
    auto loss = partial_ce(prob_leaf(t, uniform_pred(classes, h, w)),
                           LabelMask(h, w, LabelMask::kIgnore), &count);
    CHECK(loss.value()[0] == 0.0);
    CHECK(count == 0);
  }

  SUBCASE("uniform prediction gives ln(K+1)") {
    LabelMask scrib(h, w, LabelMask::kIgnore);
    scrib.at(1, 1) = 3;
    scrib.at(0, 2) = 1;
    Tape<double> t;
    auto loss = partial_ce(prob_leaf(t, uniform_pred(classes, h, w)), scrib);
    CHECK(loss.value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  }

  SUBCASE("out-of-range class id errors") {
    LabelMask scrib(h, w, LabelMask::kIgnore);
    scrib.at(0, 0) = 7;
    Tape<double> t;
    CHECK_THROWS_AS(partial_ce(prob_leaf(t, uniform_pred(classes, h, w)), scrib), error);
  }

  SUBCASE("predictions at ignore pixels do not contribute gradient") {
    LabelMask scrib(h, w, LabelMask::kIgnore);
    scrib.at(1, 1) = 1;
    Tape<double> t;
    Rng rng(71);
    auto logits = t.leaf(TensorData<double>::randn({classes, h, w}, rng), true);
    auto p = softmax(logits, 0);
    t.backward(partial_ce(p, scrib));
    const auto& g = logits.grad();
    for (int k = 0; k < classes; ++k)
      for (int i = 0; i < h * w; ++i)
        if (i != w + 1) CHECK(g[k * h * w + i] == 0.0);
  }
}

TEST_CASE("smoothed_ce values") {
  const int classes = 3, h = 2, w = 2;
  LabelMask pseudo(h, w, 0);
  pseudo.at(0, 1) = 1;
  pseudo.at(1, 0) = 2;

  SUBCASE("epsilon 0 reduces to plain cross-entropy") {
    Rng rng(73);
    Tape<double> t;
    auto logits = t.constant(TensorData<double>::randn({classes, h, w}, rng));
    auto p = softmax(logits, 0);
    auto a = smoothed_ce(p, pseudo, 0.0);
    auto b = partial_ce(p, pseudo);  // same mask, dense labels
    CHECK(a.value()[0] == doctest::Approx(b.value()[0]).epsilon(1e-12));
  }

  SUBCASE("uniform prediction gives ln K for any epsilon") {
    for (double eps : {0.0, 0.1, 0.5, 0.9}) {
      Tape<double> t;
      auto loss = smoothed_ce(prob_leaf(t, uniform_pred(classes, h, w)), pseudo, eps);
      CHECK(loss.value()[0] == doctest::Approx(std::log(3.0)).epsilon(1e-9));
    }
  }

  SUBCASE("hand-evaluated two-class instance") {
    // K=2, p=(0.8, 0.2), label 0, eps=0.1:
    // 0.9*(-ln 0.8) + 0.1*(-0.5*ln 0.8 - 0.5*ln 0.2)
    const double want =
        0.9 * (-std::log(0.8)) + 0.1 * (-0.5 * std::log(0.8) - 0.5 * std::log(0.2));
    LabelMask one(1, 1, 0);
    TensorData<double> p({2, 1, 1}, {0.8, 0.2});
    Tape<double> t;
    auto loss = smoothed_ce(prob_leaf(t, p), one, 0.1);
    CHECK(loss.value()[0] == doctest::Approx(want).epsilon(1e-12));
    CHECK(loss.value()[0] == doctest::Approx(0.2924582789).epsilon(1e-8));
  }

  SUBCASE("epsilon out of range") {
    Tape<double> t;
    CHECK_THROWS_AS(smoothed_ce(prob_leaf(t, uniform_pred(classes, h, w)), pseudo, 1.0),
                    error);
    CHECK_THROWS_AS(smoothed_ce(prob_leaf(t, uniform_pred(classes, h, w)), pseudo, -0.1),
                    error);
  }
}

TEST_CASE("distance_entropy values") {
  const int classes = 3, h = 4, w = 4;
  DistanceMap d;
  d.height = h;
  d.width = w;
  d.kind = DistanceMap::Kind::scribble_ds;
  d.values.assign(static_cast<size_t>(h) * w, 1.0f);
  d.raw.assign(static_cast<size_t>(h) * w, 0);

  SUBCASE("one-hot prediction gives 0") {
    TensorData<double> p({classes, h, w});
    for (int i = 0; i < h * w; ++i) p[0 * h * w + i] = 1.0;
    Tape<double> t;
    auto loss = distance_entropy(prob_leaf(t, p), d);
    CHECK(loss.value()[0] == 0.0);
  }

  SUBCASE("uniform prediction with d=1 gives ln K") {
    Tape<double> t;
    auto loss = distance_entropy(prob_leaf(t, uniform_pred(classes, h, w)), d);
    CHECK(loss.value()[0] == doctest::Approx(std::log(3.0)).epsilon(1e-9));
  }

  SUBCASE("all-zero weights give 0 via the N=0 guard") {
    DistanceMap zero = d;
    std::fill(zero.values.begin(), zero.values.end(), 0.0f);
    Tape<double> t;
    int64_t n = -1;
    auto loss = distance_entropy(prob_leaf(t, uniform_pred(classes, h, w)), zero, false, &n);
    CHECK(loss.value()[0] == 0.0);
    CHECK(n == 0);
  }

  SUBCASE("paper-literal mode is the negative of the default") {
    Rng rng(79);
    DistanceMap mixed = d;
    for (auto& v : mixed.values) v = rng.bernoulli(0.4) ? 0.0f : static_cast<float>(rng.uniform());
    Tape<double> t;
    auto logits = t.constant(TensorData<double>::randn({classes, h, w}, rng));
    auto p = softmax(logits, 0);
    auto def = distance_entropy(p, mixed, false);
    auto lit = distance_entropy(p, mixed, true);
    CHECK(def.value()[0] == doctest::Approx(-lit.value()[0]).epsilon(1e-12));
    CHECK(def.value()[0] >= 0.0);
  }

  SUBCASE("zero-weight pixels receive exactly zero gradient") {
    DistanceMap sparse = d;
    std::fill(sparse.values.begin(), sparse.values.end(), 0.0f);
    sparse.values[5] = 0.7f;
    Rng rng(83);
    Tape<double> t;
    auto logits = t.leaf(TensorData<double>::randn({classes, h, w}, rng), true);
    t.backward(distance_entropy(softmax(logits, 0), sparse));
    const auto& g = logits.grad();
    for (int k = 0; k < classes; ++k)
      for (int i = 0; i < h * w; ++i)
        if (i != 5) CHECK(g[k * h * w + i] == 0.0);
  }
}

TEST_CASE("total_loss composition") {
  Tape<double> t;
  auto c = [&](double v) { return t.constant(TensorData<double>::scalar(v)); };

  SUBCASE("only segs enabled") {
    LossParts<double> parts;
    parts.segs = c(0.37);
    LossSwitches sw;
    sw.segs = true;
    LossReport rep;
    auto total = total_loss(t, parts, sw, &rep);
    CHECK(total.value()[0] == doctest::Approx(0.37));
    CHECK(rep.segs == doctest::Approx(0.37));
    CHECK(rep.segc == 0.0);
  }

  SUBCASE("all parts zero") {
    LossParts<double> parts;
    parts.segs = c(0.0);
    parts.segc = c(0.0);
    parts.ds = c(0.0);
    parts.dc = c(0.0);
    parts.lorm = c(0.0);
    auto sw = LossSwitches::parse("segs,segc,ds,dc,lorm");
    auto total = total_loss(t, parts, sw);
    CHECK(total.value()[0] == 0.0);
  }

  SUBCASE("random parts sum by hand") {
    Rng rng(89);
    const double a = rng.uniform(), b = rng.uniform(), cc = rng.uniform(),
                 dd = rng.uniform(), e = rng.uniform();
    LossParts<double> parts;
    parts.segs = c(a);
    parts.segc = c(b);
    parts.ds = c(cc);
    parts.dc = c(dd);
    parts.lorm = c(e);
    auto sw = LossSwitches::parse("segs,segc,ds,dc,lorm");
    LossReport rep;
    auto total = total_loss(t, parts, sw, &rep);
    CHECK(total.value()[0] == doctest::Approx(a + b + cc + dd + e).epsilon(1e-12));
    CHECK(rep.total == doctest::Approx(a + b + cc + dd + e).epsilon(1e-12));
  }

  SUBCASE("enabled but missing part errors") {
    LossParts<double> parts;
    LossSwitches sw;
    sw.lorm = true;
    CHECK_THROWS_AS(total_loss(t, parts, sw), error);
  }

  SUBCASE("switch parsing") {
    auto sw = LossSwitches::parse("segs,dc");
    CHECK(sw.segs);
    CHECK(sw.dc);
    CHECK(!sw.segc);
    CHECK(sw.to_string() == "segs,dc");
    CHECK_THROWS_AS(LossSwitches::parse("segs,bogus"), error);
  }
}

TEST_CASE("loss csv row format") {
  LossReport r;
  r.segs = 0.5;
  r.total = 0.5;
  CHECK(loss_csv_row(3, r) == "3,0.5,0,0,0,0,0.5");
  CHECK(std::string(loss_csv_header()) == "step,segs,segc,ds,dc,lorm,total");
}
