#include "dklearn/gp.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "dklearn/errors.hpp"

namespace dklearn {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Pairwise squared Euclidean distances between rows, clamped at 0 against
// cancellation.
Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& z1,
                                  const Eigen::MatrixXd& z2) {
  Eigen::VectorXd n1 = z1.rowwise().squaredNorm();
  Eigen::VectorXd n2 = z2.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = -2.0 * (z1 * z2.transpose());
  d2.colwise() += n1;
  d2.rowwise() += n2.transpose();
  return d2.cwiseMax(0.0);
}

}  // namespace

GpHyperparams GpHyperparams::from_constrained(double alpha, double lengthscale,
                                              double noise) {
  if (!std::isfinite(alpha) || alpha <= 0.0)
    throw ConfigError("GpHyperparams: alpha must be positive and finite");
  if (!std::isfinite(lengthscale) || lengthscale <= 0.0)
    throw ConfigError("GpHyperparams: lengthscale must be positive and finite");
  if (!std::isfinite(noise) || noise < 0.0)
    throw ConfigError("GpHyperparams: noise must be non-negative and finite");
  GpHyperparams h;
  h.alpha = alpha;
  h.lengthscale = lengthscale;
  h.noise = noise;
  h.log_alpha = std::log(alpha);
  h.log_lengthscale = std::log(lengthscale);
  h.log_noise = std::log(noise);  // noise 0 maps to -inf and back exactly
  return h;
}

GpHyperparams GpHyperparams::from_log(double log_alpha, double log_lengthscale,
                                      double log_noise) {
  if (!std::isfinite(log_alpha) || !std::isfinite(log_lengthscale))
    throw ConfigError("GpHyperparams: log alpha/lengthscale must be finite");
  if (std::isnan(log_noise) ||
      log_noise == std::numeric_limits<double>::infinity())
    throw ConfigError("GpHyperparams: log noise must be finite or -inf");
  GpHyperparams h;
  h.log_alpha = log_alpha;
  h.log_lengthscale = log_lengthscale;
  h.log_noise = log_noise;
  h.alpha = std::exp(log_alpha);
  h.lengthscale = std::exp(log_lengthscale);
  h.noise = std::exp(log_noise);
  if (!std::isfinite(h.alpha) || !std::isfinite(h.lengthscale) ||
      !std::isfinite(h.noise) || h.alpha <= 0.0 || h.lengthscale <= 0.0)
    throw ConfigError("GpHyperparams: log values overflow the constrained form");
  return h;
}

KernelMatrix rbf_kernel(const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2,
                        const GpHyperparams& hyper, bool with_noise) {
  if (z1.cols() != z2.cols())
    throw ShapeError("rbf_kernel: point dimensions differ (" +
                     std::to_string(z1.cols()) + " vs " +
                     std::to_string(z2.cols()) + ")");
  if (with_noise) {
    const bool same_shape = z1.rows() == z2.rows() && z1.cols() == z2.cols();
    const bool same = same_shape && (z1.data() == z2.data() ||
                                     z1.cwiseEqual(z2).all());
    if (!same)
      throw ShapeError("rbf_kernel: with_noise requires identical point sets");
  }
  const double inv_l2 = 1.0 / (hyper.lengthscale * hyper.lengthscale);
  KernelMatrix k;
  k.values = (hyper.alpha *
              (-0.5 * inv_l2 * squared_distances(z1, z2).array()).exp())
                 .matrix();
  if (with_noise) k.values.diagonal().array() += hyper.noise;
  return k;
}

double chol_with_jitter(Eigen::MatrixXd& k, Eigen::LLT<Eigen::MatrixXd>& llt) {
  if (k.rows() != k.cols())
    throw ShapeError("chol_with_jitter: matrix is not square");
  static constexpr double kJitters[] = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2};
  double added = 0.0;
  for (double jitter : kJitters) {
    k.diagonal().array() += jitter - added;
    added = jitter;
    llt.compute(k);
    if (llt.info() == Eigen::Success) return added;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k, Eigen::EigenvaluesOnly);
  std::ostringstream msg;
  msg << "chol_with_jitter: factorization failed with jitter up to " << added;
  if (es.info() == Eigen::Success && k.rows() > 0) {
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    msg << "; eigenvalues in [" << lo << ", " << hi << "]";
    if (lo > 0.0) msg << ", condition ~ " << hi / lo;
  }
  throw NumericError(msg.str());
}

LmlResult log_marginal_likelihood(const Eigen::MatrixXd& z,
                                  const Eigen::VectorXd& y,
                                  const GpHyperparams& hyper) {
  const Eigen::Index n = z.rows();
  if (n < 1) throw ShapeError("log_marginal_likelihood: no points");
  if (y.size() != n)
    throw ShapeError("log_marginal_likelihood: y length " +
                     std::to_string(y.size()) + " does not match " +
                     std::to_string(n) + " points");

  const double inv_l2 = 1.0 / (hyper.lengthscale * hyper.lengthscale);
  Eigen::MatrixXd d2 = squared_distances(z, z);
  Eigen::MatrixXd kt =
      (hyper.alpha * (-0.5 * inv_l2 * d2.array()).exp()).matrix();
  Eigen::MatrixXd k = kt;
  k.diagonal().array() += hyper.noise;
  Eigen::LLT<Eigen::MatrixXd> llt;
  chol_with_jitter(k, llt);

  Eigen::VectorXd beta = llt.solve(y);
  const double log_det =
      2.0 * llt.matrixLLT().diagonal().array().log().sum();

  LmlResult res;
  res.value = -0.5 * y.dot(beta) - 0.5 * log_det -
              0.5 * static_cast<double>(n) * kLog2Pi;

  // dL/dK = 0.5 (beta beta' - K^{-1}); chain through the kernel to the
  // points and the log hyperparameters.
  Eigen::MatrixXd kinv =
      llt.solve(Eigen::MatrixXd::Identity(n, n));
  Eigen::MatrixXd g = 0.5 * (beta * beta.transpose() - kinv);
  Eigen::MatrixXd a = g.cwiseProduct(kt);
  res.grad_log_alpha = a.sum();
  res.grad_log_lengthscale = a.cwiseProduct(d2).sum() * inv_l2;
  res.grad_log_noise = hyper.noise * g.trace();
  Eigen::VectorXd rowsum = a.rowwise().sum();
  res.grad_z = 2.0 * inv_l2 * (a * z - rowsum.asDiagonal() * z);
  return res;
}

PosteriorPredictive posterior_predictive(const Eigen::MatrixXd& ztrain,
                                         const Eigen::VectorXd& y,
                                         const Eigen::MatrixXd& zstar,
                                         const GpHyperparams& hyper) {
  if (ztrain.rows() < 1)
    throw ShapeError("posterior_predictive: empty training set");
  if (zstar.rows() < 1)
    throw ShapeError("posterior_predictive: empty test set");
  if (ztrain.cols() != zstar.cols())
    throw ShapeError("posterior_predictive: point dimensions differ");
  if (y.size() != ztrain.rows())
    throw ShapeError("posterior_predictive: y length does not match points");

  KernelMatrix ktrain = rbf_kernel(ztrain, ztrain, hyper, true);
  Eigen::LLT<Eigen::MatrixXd> llt;
  chol_with_jitter(ktrain.values, llt);
  KernelMatrix kcross = rbf_kernel(zstar, ztrain, hyper, false);

  PosteriorPredictive out;
  out.mean = kcross.values * llt.solve(y);
  Eigen::MatrixXd v = llt.matrixL().solve(kcross.values.transpose());
  Eigen::VectorXd explained = v.colwise().squaredNorm().transpose();
  out.variance = (hyper.alpha - explained.array()).max(0.0).matrix();
  return out;
}

}  // namespace dklearn
