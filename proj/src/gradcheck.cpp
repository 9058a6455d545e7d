#include "cdsp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cdsp/lorm.hpp"
#include "cdsp/losses.hpp"

namespace cdsp {

double finite_diff_max_rel_err(std::vector<TensorData<double>> inputs,
                               const std::vector<bool>& wrt, const GraphBuilder& build,
                               double h) {
  CDSP_CHECK(inputs.size() == wrt.size(), "inputs/wrt size mismatch");

  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.leaf(inputs[i], wrt[i]));
  Var<double> loss = build(tape, leaves);
  tape.backward(loss);

  std::vector<TensorData<double>> analytic(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!wrt[i]) continue;
    analytic[i] = leaves[i].has_grad() ? leaves[i].node()->grad
                                       : TensorData<double>::zeros(inputs[i].shape);
  }

  auto eval = [&](const std::vector<TensorData<double>>& ins) {
    Tape<double> t;
    std::vector<Var<double>> ls;
    ls.reserve(ins.size());
    for (const auto& in : ins) ls.push_back(t.leaf(in, false));
    return build(t, ls).value()[0];
  };

  double max_rel = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!wrt[i]) continue;
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      const double x0 = inputs[i][j];
      const double step = h * std::max(1.0, std::abs(x0));
      inputs[i][j] = x0 + step;
      const double fp = eval(inputs);
      inputs[i][j] = x0 - step;
      const double fm = eval(inputs);
      inputs[i][j] = x0;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = analytic[i][j];
      const double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

namespace {

using D = TensorData<double>;

// N(0,1) values pushed away from zero; keeps relu/abs kinks outside the
// finite-difference step.
D randn_off_kink(Shape s, Rng& rng, double margin = 5e-2) {
  D t(std::move(s));
  for (auto& v : t.data) {
    double x = rng.normal();
    while (std::abs(x) < margin) x = rng.normal();
    v = x;
  }
  return t;
}

LabelMask random_mask(int classes, int h, int w, Rng& rng, double ignore_prob) {
  LabelMask m(h, w, LabelMask::kIgnore);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (!rng.bernoulli(ignore_prob))
        m.at(r, c) = static_cast<uint8_t>(rng.randint(0, classes - 1));
  return m;
}

DistanceMap random_distance_map(int h, int w, Rng& rng, DistanceMap::Kind kind) {
  DistanceMap d;
  d.height = h;
  d.width = w;
  d.kind = kind;
  d.lambda = 0.0;
  d.raw.resize(static_cast<size_t>(h) * w);
  d.values.resize(d.raw.size());
  for (size_t i = 0; i < d.raw.size(); ++i) {
    // quantized to the /255 grid like real maps, with a fat atom at zero
    const int r = rng.bernoulli(0.3) ? 0 : static_cast<int>(rng.randint(0, 255));
    d.raw[i] = static_cast<uint8_t>(r);
    d.values[i] = static_cast<float>(r) / 255.0f;
  }
  return d;
}

struct Suite {
  std::string name;
  // Runs one random instance, returns max relative error.
  std::function<double(Rng&)> instance;
};

double check_conv2d(Rng& rng) {
  const int ci = 2, co = 2, k = 3, h = 5, w = 5;
  const int stride = rng.bernoulli(0.5) ? 1 : 2;
  const int pad = rng.bernoulli(0.5) ? 1 : 0;
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  D probe = D::randn({co, ho, wo}, rng);
  auto build = [=](Tape<double>& t, const std::vector<Var<double>>& ls) {
    return sum(mul(conv2d(ls[0], ls[1], ls[2], stride, pad), t.constant(probe)));
  };
  return finite_diff_max_rel_err(
      {D::randn({ci, h, w}, rng), D::randn({co, ci, k, k}, rng), D::randn({co}, rng)},
      {true, true, true}, build);
}

double check_softmax(Rng& rng) {
  D probe = D::randn({4, 5}, rng);
  auto build = [=](Tape<double>& t, const std::vector<Var<double>>& ls) {
    return sum(mul(softmax(ls[0], 1), t.constant(probe)));
  };
  return finite_diff_max_rel_err({D::randn({4, 5}, rng)}, {true}, build);
}

double check_l2_normalize(Rng& rng) {
  D x({3, 4});
  for (;;) {  // keep slice norms clear of the eps guard
    for (auto& v : x.data) v = rng.normal();
    bool ok = true;
    for (int j = 0; j < 4; ++j) {
      double ss = 0;
      for (int i = 0; i < 3; ++i) ss += x.at(i, j) * x.at(i, j);
      if (std::sqrt(ss) < 0.3) ok = false;
    }
    if (ok) break;
  }
  D probe = D::randn({3, 4}, rng);
  auto build = [=](Tape<double>& t, const std::vector<Var<double>>& ls) {
    return sum(mul(l2_normalize(ls[0], 0), t.constant(probe)));
  };
  return finite_diff_max_rel_err({x}, {true}, build);
}

double check_matmul(Rng& rng) {
  D probe = D::randn({3, 2}, rng);
  auto build = [=](Tape<double>& t, const std::vector<Var<double>>& ls) {
    return sum(mul(matmul(ls[0], ls[1]), t.constant(probe)));
  };
  return finite_diff_max_rel_err({D::randn({3, 4}, rng), D::randn({4, 2}, rng)},
                                 {true, true}, build);
}

double check_elementwise(Rng& rng) {
  D c1 = D::randn({2, 3, 4}, rng);
  auto build = [=](Tape<double>& t, const std::vector<Var<double>>& ls) {
    Var<double> x = ls[0];
    Var<double> y = add(mul(relu(x), t.constant(c1)), exp_op(scale(x, 0.3)));
    Var<double> pos = add(mul(x, x), t.constant(D::full({2, 3, 4}, 0.5)));
    return add(sum(y), sum(log_guard(pos)));
  };
  return finite_diff_max_rel_err({randn_off_kink({2, 3, 4}, rng)}, {true}, build);
}

double check_mse_and_pool(Rng& rng) {
  D probe = D::randn({3}, rng);
  auto build = [=](Tape<double>& t, const std::vector<Var<double>>& ls) {
    return add(mse(ls[0], ls[1]), sum(mul(global_avg_pool(ls[0]), t.constant(probe))));
  };
  return finite_diff_max_rel_err({D::randn({3, 4, 4}, rng), D::randn({3, 4, 4}, rng)},
                                 {true, true}, build);
}

double check_upsample(Rng& rng) {
  D probe = D::randn({2, 6, 6}, rng);
  auto build = [=](Tape<double>& t, const std::vector<Var<double>>& ls) {
    return sum(mul(upsample_nearest(ls[0], 2), t.constant(probe)));
  };
  return finite_diff_max_rel_err({D::randn({2, 3, 3}, rng)}, {true}, build);
}

double check_bce(Rng& rng) {
  D targets({5});
  for (auto& v : targets.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  auto build = [=](Tape<double>&, const std::vector<Var<double>>& ls) {
    return multilabel_bce_logits(ls[0], targets);
  };
  return finite_diff_max_rel_err({D::randn({5}, rng)}, {true}, build);
}

double check_partial_ce(Rng& rng) {
  const int classes = 4, h = 5, w = 5;
  LabelMask scrib = random_mask(classes, h, w, rng, 0.7);
  auto build = [=](Tape<double>&, const std::vector<Var<double>>& ls) {
    return partial_ce(softmax(ls[0], 0), scrib);
  };
  return finite_diff_max_rel_err({D::randn({classes, h, w}, rng)}, {true}, build);
}

double check_smoothed_ce(Rng& rng) {
  const int classes = 4, h = 5, w = 5;
  LabelMask pseudo = random_mask(classes, h, w, rng, 0.1);
  auto build = [=](Tape<double>&, const std::vector<Var<double>>& ls) {
    return smoothed_ce(softmax(ls[0], 0), pseudo, 0.1);
  };
  return finite_diff_max_rel_err({D::randn({classes, h, w}, rng)}, {true}, build);
}

double check_distance_entropy(Rng& rng, bool paper_literal) {
  const int classes = 4, h = 5, w = 5;
  DistanceMap d = random_distance_map(h, w, rng, DistanceMap::Kind::scribble_ds);
  auto build = [=](Tape<double>&, const std::vector<Var<double>>& ls) {
    return distance_entropy(softmax(ls[0], 0), d, paper_literal);
  };
  return finite_diff_max_rel_err({D::randn({classes, h, w}, rng)}, {true}, build);
}

double check_lorm(Rng& rng) {
  const int c = 3, h = 3, w = 3;
  D mask({h * w});
  bool any = false;
  for (auto& v : mask.data) {
    v = rng.bernoulli(0.6) ? 1.0 : 0.0;
    any = any || v > 0;
  }
  if (!any) mask[0] = 1.0;
  auto build = [=](Tape<double>& t, const std::vector<Var<double>>& ls) {
    LormParams<double> p{ls[1], ls[2], ls[3]};
    return lorm_pipeline(ls[0], p, t.constant(mask));
  };
  D delta = D::scalar(1.0 + 0.2 * rng.normal());
  return finite_diff_max_rel_err({D::randn({c, h, w}, rng), D::randn({c, c, 1, 1}, rng),
                                  D::randn({c, c, 1, 1}, rng), delta},
                                 {true, true, true, true}, build);
}

}  // namespace

std::vector<GradCheckResult> run_all_grad_checks(int instances, uint64_t seed,
                                                 double tolerance) {
  std::vector<Suite> suites = {
      {"conv2d", check_conv2d},
      {"softmax", check_softmax},
      {"l2_normalize", check_l2_normalize},
      {"matmul", check_matmul},
      {"elementwise", check_elementwise},
      {"reductions", check_mse_and_pool},
      {"upsample_nearest", check_upsample},
      {"multilabel_bce", check_bce},
      {"partial_ce", check_partial_ce},
      {"smoothed_ce", check_smoothed_ce},
      {"distance_entropy", [](Rng& r) { return check_distance_entropy(r, false); }},
      {"distance_entropy_paper_literal",
       [](Rng& r) { return check_distance_entropy(r, true); }},
      {"lorm_loss", check_lorm},
  };
  std::vector<GradCheckResult> out;
  for (size_t si = 0; si < suites.size(); ++si) {
    GradCheckResult res;
    res.name = suites[si].name;
    res.instances = instances;
    res.pass = true;
    for (int i = 0; i < instances; ++i) {
      Rng rng(mix_seed(seed, si * 1000 + static_cast<uint64_t>(i)));
      const double err = suites[si].instance(rng);
      res.max_rel_err = std::max(res.max_rel_err, err);
      if (err >= tolerance) res.pass = false;
    }
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace cdsp
