#include <cmath>

#include "doctest.h"
#include "dismae/optim.hpp"

using namespace dismae;

namespace {

ParameterStore two_params() {
  ParameterStore s;
  Mat w(1, 2);
  w(0, 0) = 1.0;
  w(0, 1) = -2.0;
  s.add("w", ParamGroup::semantic, w, true);
  s.add("b", ParamGroup::semantic, Mat(1, 1, 0.5), false);
  return s;
}

}  // namespace

TEST_CASE("AdamW matches a hand-computed trajectory") {
  ParameterStore s = two_params();
  AdamWConfig cfg;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.95;
  cfg.eps = 1e-8;
  cfg.weight_decay = 0.1;
  AdamW opt(cfg);
  const std::vector<int> idx{0, 1};
  const double g[2][3] = {{0.5, -1.0, 2.0}, {0.25, 0.0, -4.0}};
  // reference: independent scalar recursion
  double w[3] = {1.0, -2.0, 0.5};
  double m[3] = {0, 0, 0}, v[3] = {0, 0, 0};
  const double lr = 0.01;
  for (int t = 1; t <= 2; ++t) {
    GradBuffer grads(2);
    grads[0] = Mat(1, 2);
    grads[0](0, 0) = g[t - 1][0];
    grads[0](0, 1) = g[t - 1][1];
    grads[1] = Mat(1, 1, g[t - 1][2]);
    opt.step(s, grads, idx, lr);
    for (int k = 0; k < 3; ++k) {
      if (k < 2) w[k] *= 1.0 - lr * 0.1;
      m[k] = 0.9 * m[k] + 0.1 * g[t - 1][k];
      v[k] = 0.95 * v[k] + 0.05 * g[t - 1][k] * g[t - 1][k];
      const double mh = m[k] / (1.0 - std::pow(0.9, t)), vh = v[k] / (1.0 - std::pow(0.95, t));
      w[k] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  CHECK(s[0].value(0, 0) == doctest::Approx(w[0]).epsilon(1e-14));
  CHECK(s[0].value(0, 1) == doctest::Approx(w[1]).epsilon(1e-14));
  CHECK(s[1].value(0, 0) == doctest::Approx(w[2]).epsilon(1e-14));
  CHECK(opt.steps == 2);
}

TEST_CASE("first AdamW step moves each coordinate by about lr") {
  ParameterStore s = two_params();
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  GradBuffer grads(2);
  grads[0] = Mat(1, 2, 3.0);
  grads[1] = Mat(1, 1, -0.001);
  const std::vector<int> idx{0, 1};
  opt.step(s, grads, idx, 0.1);
  CHECK(s[0].value(0, 0) == doctest::Approx(0.9));
  CHECK(s[1].value(0, 0) == doctest::Approx(0.6));
}

TEST_CASE("optimizers skip parameters outside the index set or without gradient") {
  ParameterStore s = two_params();
  const ParameterStore before = s;
  GradBuffer grads(2);
  grads[0] = Mat(1, 2, 1.0);
  AdamW a;
  a.step(s, grads, std::vector<int>{1}, 0.1);
  CHECK(s[0].value == before[0].value);
  CHECK(s[1].value == before[1].value);
  Sgd sgd;
  sgd.step(s, grads, std::vector<int>{1});
  CHECK(s[1].value == before[1].value);
}

TEST_CASE("SGD momentum seeds with the raw gradient then accumulates") {
  ParameterStore s;
  s.add("x", ParamGroup::domain_classifier, Mat(1, 1, 1.0), true);
  SgdConfig cfg;
  cfg.lr = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.5;
  Sgd opt(cfg);
  GradBuffer g(1);
  g[0] = Mat(1, 1, 2.0);
  const std::vector<int> idx{0};
  opt.step(s, g, idx);
  // d = 2 + 0.5·1 = 2.5; x = 1 − 0.25
  CHECK(s[0].value(0, 0) == doctest::Approx(0.75));
  opt.step(s, g, idx);
  // d = 2 + 0.375 = 2.375; buf = 0.9·2.5 + 2.375 = 4.625; x = 0.75 − 0.4625
  CHECK(s[0].value(0, 0) == doctest::Approx(0.2875));
}

TEST_CASE("gradient clipping") {
  GradBuffer g(3);
  g[0] = Mat(1, 2);
  g[0](0, 0) = 3.0;
  g[0](0, 1) = 4.0;
  g[2] = Mat(1, 1, 12.0);
  const std::vector<int> idx{0, 1, 2};
  const double n = clip_grad_norm(g, idx, 1.0);
  CHECK(n == doctest::Approx(13.0));
  const double after = std::sqrt(sum_squares(g[0]) + sum_squares(g[2]));
  CHECK(after == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(after <= 1.0);

  GradBuffer h(1);
  h[0] = Mat(1, 1, 0.5);
  CHECK(clip_grad_norm(h, std::vector<int>{0}, 1.0) == 0.5);
  CHECK(h[0](0, 0) == 0.5);
  h[0](0, 0) = 50.0;
  clip_grad_norm(h, std::vector<int>{0}, 0.0);
  CHECK(h[0](0, 0) == 50.0);
}
