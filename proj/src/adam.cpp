#include "dklearn/adam.hpp"

#include <cmath>
#include <string>

#include "dklearn/errors.hpp"

namespace dklearn {

AdamState AdamState::init(Eigen::Index n_params, double lr) {
  AdamState state;
  state.m = Eigen::VectorXd::Zero(n_params);
  state.v = Eigen::VectorXd::Zero(n_params);
  state.lr = lr;
  return state;
}

std::pair<Eigen::VectorXd, AdamState> adam_update(
    const AdamState& state, const Eigen::VectorXd& params,
    const Eigen::VectorXd& grads) {
  if (params.size() != state.m.size() || grads.size() != state.m.size())
    throw ShapeError("adam_update: parameter/gradient size mismatch");
  for (Eigen::Index i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads(i)))
      throw NumericError("adam_update: non-finite gradient at component " +
                         std::to_string(i));

  AdamState next = state;
  next.step = state.step + 1;
  next.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  next.v = state.beta2 * state.v.array() +
           (1.0 - state.beta2) * grads.array().square();
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(next.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(next.step));
  Eigen::VectorXd updated =
      params.array() - state.lr * (next.m.array() / bc1) /
                           ((next.v.array() / bc2).sqrt() + state.eps);
  return {std::move(updated), std::move(next)};
}

}  // namespace dklearn
