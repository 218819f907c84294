#pragma once

#include <utility>

#include <Eigen/Dense>

namespace dklearn {

// Moment accumulators over a flat parameter vector.  Callers flatten
// whatever structure they train (net weights plus kernel hyperparameters)
// into one vector; the optimizer is agnostic to the layout.
struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init(Eigen::Index n_params, double lr = 1e-3);
};

// One bias-corrected Adam step in the descent direction of grads; negate
// the gradient to ascend.  Pure: returns the updated parameters and state.
// Throws NumericError naming the first non-finite gradient component.
std::pair<Eigen::VectorXd, AdamState> adam_update(const AdamState& state,
                                                  const Eigen::VectorXd& params,
                                                  const Eigen::VectorXd& grads);

}  // namespace dklearn
