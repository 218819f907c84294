#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "doctest.h"

#include "dklearn/errors.hpp"
#include "dklearn/gp.hpp"
#include "dklearn/rng.hpp"
#include "support/oracles.hpp"

using namespace dklearn;

namespace {

// Smallest rung of the factorization's jitter ladder, always on the diagonal.
constexpr double kBaseJitter = 1e-6;

Eigen::MatrixXd random_points(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd z(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) z(i, j) = rng.normal();
  }
  return z;
}

Eigen::VectorXd random_targets(int n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = rng.normal();
  return y;
}

}  // namespace

TEST_CASE("hyperparameter forms stay consistent") {
  auto h = GpHyperparams::from_constrained(2.0, 0.5, 0.01);
  CHECK(h.log_alpha == doctest::Approx(std::log(2.0)));
  CHECK(h.log_lengthscale == doctest::Approx(std::log(0.5)));
  CHECK(h.log_noise == doctest::Approx(std::log(0.01)));
  auto g = GpHyperparams::from_log(h.log_alpha, h.log_lengthscale,
                                   h.log_noise);
  CHECK(g.alpha == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(g.noise == doctest::Approx(0.01).epsilon(1e-14));

  CHECK_THROWS_AS(GpHyperparams::from_constrained(-1.0, 1.0, 0.1),
                  ConfigError);
  CHECK_THROWS_AS(GpHyperparams::from_constrained(1.0, 0.0, 0.1),
                  ConfigError);
  CHECK_THROWS_AS(GpHyperparams::from_constrained(1.0, 1.0, -0.1),
                  ConfigError);
}

TEST_CASE("rbf kernel matches the scalar formula") {
  const auto h = GpHyperparams::from_constrained(1.7, 0.8, 0.05);
  const Eigen::MatrixXd z1 = random_points(6, 3, 1);
  const Eigen::MatrixXd z2 = random_points(4, 3, 2);

  const KernelMatrix cross = rbf_kernel(z1, z2, h, false);
  const Eigen::MatrixXd want =
      oracles::dense_kernel(z1, z2, h.alpha, h.lengthscale, 0.0);
  CHECK((cross.values - want).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(cross.jitter == 0.0);

  const KernelMatrix self = rbf_kernel(z1, z1, h, true);
  const Eigen::MatrixXd want_self =
      oracles::dense_kernel(z1, z1, h.alpha, h.lengthscale, h.noise);
  CHECK((self.values - want_self).cwiseAbs().maxCoeff() < 1e-14);
  // Diagonal carries alpha + noise exactly (unsquared amplitudes).
  CHECK(self.values(0, 0) == doctest::Approx(h.alpha + h.noise));

  CHECK_THROWS_AS(rbf_kernel(z1, z2, h, true), ShapeError);
  CHECK_THROWS_AS(rbf_kernel(z1, random_points(4, 2, 3), h, false),
                  ShapeError);
}

TEST_CASE("posterior predictive matches the dense-inverse oracle") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 2 + static_cast<int>(rng.uniform_index(15));
    const int m = 1 + static_cast<int>(rng.uniform_index(8));
    const int d = 1 + static_cast<int>(rng.uniform_index(3));
    const auto h = GpHyperparams::from_constrained(
        rng.uniform(0.4, 2.5), rng.uniform(0.4, 2.0),
        rng.uniform(0.01, 0.4));
    const Eigen::MatrixXd zt = random_points(n, d, 100 + rep);
    const Eigen::VectorXd y = random_targets(n, 200 + rep);
    const Eigen::MatrixXd zs = random_points(m, d, 300 + rep);

    const PosteriorPredictive got = posterior_predictive(zt, y, zs, h);
    // The library factorizes K + base jitter; the oracle inverts the same
    // matrix explicitly.
    const auto want = oracles::gp_predict_dense(zt, y, zs, h.alpha,
                                                h.lengthscale,
                                                h.noise + kBaseJitter);
    CHECK(oracles::max_rel_err(got.mean, want.mean) < 1e-9);
    CHECK(oracles::max_rel_err(got.variance, want.variance) < 1e-9);
  }
}

TEST_CASE("posterior variance is clamped at zero") {
  // Prediction at a training point with tiny noise: the exact variance is
  // numerically ~0 and must never come back negative.
  const auto h = GpHyperparams::from_constrained(1.0, 1.0, 1e-9);
  const Eigen::MatrixXd zt = random_points(8, 2, 11);
  const Eigen::VectorXd y = random_targets(8, 12);
  const PosteriorPredictive pred = posterior_predictive(zt, y, zt, h);
  CHECK(pred.variance.minCoeff() >= 0.0);
  CHECK(pred.variance.maxCoeff() < 1e-5);
  // Near-interpolation of the targets.
  CHECK((pred.mean - y).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("log marginal likelihood value matches the dense oracle") {
  Rng rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 3 + static_cast<int>(rng.uniform_index(12));
    const int d = 1 + static_cast<int>(rng.uniform_index(3));
    const auto h = GpHyperparams::from_constrained(
        rng.uniform(0.4, 2.0), rng.uniform(0.5, 1.5),
        rng.uniform(0.05, 0.5));
    const Eigen::MatrixXd z = random_points(n, d, 400 + rep);
    const Eigen::VectorXd y = random_targets(n, 500 + rep);
    const LmlResult got = log_marginal_likelihood(z, y, h);
    const double want = oracles::lml_dense(z, y, h.alpha, h.lengthscale,
                                           h.noise + kBaseJitter);
    CHECK(got.value == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("lml gradients match finite differences") {
  Rng rng(31);
  for (int rep = 0; rep < 5; ++rep) {
    const int n = 4 + static_cast<int>(rng.uniform_index(6));
    const int d = 2;
    const Eigen::MatrixXd z = random_points(n, d, 600 + rep);
    const Eigen::VectorXd y = random_targets(n, 700 + rep);
    const auto h = GpHyperparams::from_constrained(
        rng.uniform(0.5, 1.5), rng.uniform(0.6, 1.2),
        rng.uniform(0.05, 0.3));
    const LmlResult res = log_marginal_likelihood(z, y, h);

    // Gradient w.r.t. the points, flattened row-major.
    auto f_z = [&](const Eigen::VectorXd& flat) {
      Eigen::MatrixXd zz(n, d);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) zz(i, j) = flat[i * d + j];
      }
      return log_marginal_likelihood(zz, y, h).value;
    };
    Eigen::VectorXd flat(n * d);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) flat[i * d + j] = z(i, j);
    }
    const Eigen::VectorXd fd = oracles::fd_gradient(f_z, flat, 1e-6);
    Eigen::VectorXd got(n * d);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) got[i * d + j] = res.grad_z(i, j);
    }
    CHECK(oracles::max_rel_err(got, fd, 1e-3) < 1e-6);

    // Log-hyperparameter gradients.
    auto f_h = [&](const Eigen::VectorXd& lh) {
      const auto hh = GpHyperparams::from_log(lh[0], lh[1], lh[2]);
      return log_marginal_likelihood(z, y, hh).value;
    };
    Eigen::VectorXd lh(3);
    lh << h.log_alpha, h.log_lengthscale, h.log_noise;
    const Eigen::VectorXd fdh = oracles::fd_gradient(f_h, lh, 1e-6);
    Eigen::VectorXd goth(3);
    goth << res.grad_log_alpha, res.grad_log_lengthscale, res.grad_log_noise;
    CHECK(oracles::max_rel_err(goth, fdh, 1e-3) < 1e-6);
  }
}

TEST_CASE("jitter ladder rescues a singular kernel") {
  // Duplicate points with zero noise: K is exactly rank-deficient.
  Eigen::MatrixXd z(4, 2);
  z << 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0;
  const auto h = GpHyperparams::from_constrained(1.0, 1.0, 0.0);
  KernelMatrix k = rbf_kernel(z, z, h, true);
  Eigen::LLT<Eigen::MatrixXd> llt;
  const double jitter = chol_with_jitter(k.values, llt);
  CHECK(jitter >= 1e-6);
  CHECK(jitter <= 1e-2);
  CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("unsalvageable matrices raise a numeric error with diagnostics") {
  Eigen::MatrixXd bad = -Eigen::MatrixXd::Identity(3, 3);
  Eigen::LLT<Eigen::MatrixXd> llt;
  CHECK_THROWS_AS(chol_with_jitter(bad, llt), NumericError);

  Eigen::MatrixXd bad2 = -Eigen::MatrixXd::Identity(3, 3);
  try {
    chol_with_jitter(bad2, llt);
  } catch (const NumericError& e) {
    const std::string what = e.what();
    CHECK(what.find("eigenvalues") != std::string::npos);
  }
  Eigen::MatrixXd rect = Eigen::MatrixXd::Zero(2, 3);
  CHECK_THROWS_AS(chol_with_jitter(rect, llt), ShapeError);
}

TEST_CASE("shape guards on the inference entry points") {
  const auto h = GpHyperparams{};
  const Eigen::MatrixXd z = random_points(5, 2, 41);
  const Eigen::VectorXd y = random_targets(5, 42);
  CHECK_THROWS_AS(log_marginal_likelihood(z, random_targets(4, 43), h),
                  ShapeError);
  CHECK_THROWS_AS(posterior_predictive(z, y, random_points(3, 3, 44), h),
                  ShapeError);
  CHECK_THROWS_AS(
      posterior_predictive(Eigen::MatrixXd(), Eigen::VectorXd(), z, h),
      ShapeError);
}
