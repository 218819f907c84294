#include <cmath>

#include <Eigen/Dense>

#include "doctest.h"

#include "dklearn/adam.hpp"
#include "dklearn/errors.hpp"

using namespace dklearn;

TEST_CASE("first step follows the bias-corrected closed form") {
  // With fresh moments, mhat = g and vhat = g^2, so the update is
  // lr * g / (|g| + eps) regardless of the gradient scale.
  AdamState st = AdamState::init(3, 0.01);
  Eigen::VectorXd p(3), g(3);
  p << 1.0, -2.0, 0.5;
  g << 0.3, -40.0, 1e-4;
  auto [p2, st2] = adam_update(st, p, g);
  for (int i = 0; i < 3; ++i) {
    const double expected =
        p[i] - st.lr * g[i] / (std::abs(g[i]) + st.eps);
    CHECK(p2[i] == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK(st2.step == 1);
  CHECK(st.step == 0);  // input state untouched
  CHECK(st.m.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("multi-step trajectory matches a hand-rolled reference") {
  const int n = 4;
  AdamState st = AdamState::init(n, 0.05);
  Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(n, -1.0, 2.0);

  Eigen::VectorXd rp = p;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  for (int t = 1; t <= 25; ++t) {
    const Eigen::VectorXd g = 2.0 * rp;  // d/dp of sum p^2
    auto [pn, stn] = adam_update(st, p, g);
    p = pn;
    st = stn;

    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g.array().square().matrix();
    const double bc1 = 1.0 - std::pow(0.9, t);
    const double bc2 = 1.0 - std::pow(0.999, t);
    for (int i = 0; i < n; ++i) {
      rp[i] -= 0.05 * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + 1e-8);
    }
    REQUIRE((p - rp).cwiseAbs().maxCoeff() < 1e-13);
  }
  CHECK(st.step == 25);
}

TEST_CASE("descends a quadratic to its minimum") {
  AdamState st = AdamState::init(2, 0.1);
  Eigen::VectorXd p(2);
  p << 8.0, -5.0;
  const Eigen::VectorXd target = Eigen::VectorXd::Constant(2, 3.0);
  for (int t = 0; t < 800; ++t) {
    const Eigen::VectorXd g = 2.0 * (p - target);
    auto [pn, stn] = adam_update(st, p, g);
    p = pn;
    st = stn;
  }
  CHECK((p - target).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("ascent works by negating the gradient") {
  AdamState st = AdamState::init(1, 0.1);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
  for (int t = 0; t < 400; ++t) {
    // maximize -(p-2)^2: gradient is -2(p-2), pass its negation
    const Eigen::VectorXd g = 2.0 * (p.array() - 2.0).matrix();
    auto [pn, stn] = adam_update(st, p, g);
    p = pn;
    st = stn;
  }
  CHECK(p[0] == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("shape and finiteness guards") {
  AdamState st = AdamState::init(3);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(adam_update(st, p, Eigen::VectorXd::Zero(2)), ShapeError);

  Eigen::VectorXd g = Eigen::VectorXd::Zero(3);
  g[1] = std::nan("");
  CHECK_THROWS_AS(adam_update(st, p, g), NumericError);
  try {
    adam_update(st, p, g);
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}
