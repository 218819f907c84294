#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace dklearn {

// Kernel hyperparameters carried in both constrained and log form so that
// optimizer/sampler code (which works in log space) and kernel evaluation
// never re-derive one from the other.  alpha > 0, lengthscale > 0,
// noise >= 0; noise enters the kernel diagonal additively (a variance).
struct GpHyperparams {
  double alpha = 1.0;
  double lengthscale = 1.0;
  double noise = 1.0;
  double log_alpha = 0.0;
  double log_lengthscale = 0.0;
  double log_noise = 0.0;

  static GpHyperparams from_constrained(double alpha, double lengthscale,
                                        double noise);
  static GpHyperparams from_log(double log_alpha, double log_lengthscale,
                                double log_noise);
};

// Dense kernel evaluation result.  jitter records what was actually added
// to the diagonal by a factorization step (0 straight out of rbf_kernel).
struct KernelMatrix {
  Eigen::MatrixXd values;
  double jitter = 0.0;
};

// K_ij = alpha * exp(-0.5 * |z1_i - z2_j|^2 / l^2), plus noise on the
// diagonal when with_noise is set.  with_noise requires z1 and z2 to be
// the same point set.
KernelMatrix rbf_kernel(const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2,
                        const GpHyperparams& hyper, bool with_noise);

// Cholesky with diagonal jitter starting at 1e-6, escalating tenfold up to
// 1e-2 before giving up with a NumericError carrying a condition estimate.
// k is modified in place (jitter added); returns the jitter used.
double chol_with_jitter(Eigen::MatrixXd& k, Eigen::LLT<Eigen::MatrixXd>& llt);

struct LmlResult {
  double value = 0.0;
  Eigen::MatrixXd grad_z;          // same shape as the input points
  double grad_log_alpha = 0.0;
  double grad_log_lengthscale = 0.0;
  double grad_log_noise = 0.0;
};

// Log density of y under a zero-mean GP with the RBF kernel at z, together
// with exact gradients w.r.t. z and the log hyperparameters.
LmlResult log_marginal_likelihood(const Eigen::MatrixXd& z,
                                  const Eigen::VectorXd& y,
                                  const GpHyperparams& hyper);

struct PosteriorPredictive {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // per-point, clamped at 0
};

// Exact GP posterior at zstar.  Noise enters the training kernel only; the
// reported variance is that of the latent function (no noise on the test
// diagonal).
PosteriorPredictive posterior_predictive(const Eigen::MatrixXd& ztrain,
                                         const Eigen::VectorXd& y,
                                         const Eigen::MatrixXd& zstar,
                                         const GpHyperparams& hyper);

}  // namespace dklearn
