#include "dklearn/mlp.hpp"

#include <cmath>
#include <string>

#include "dklearn/errors.hpp"

namespace dklearn {

Eigen::Index MlpParams::input_dim() const {
  return weights.empty() ? 0 : weights.front().cols();
}

Eigen::Index MlpParams::output_dim() const {
  return weights.empty() ? 0 : weights.back().rows();
}

std::vector<int> MlpParams::layer_sizes() const {
  std::vector<int> sizes;
  if (weights.empty()) return sizes;
  sizes.push_back(static_cast<int>(weights.front().cols()));
  for (const auto& w : weights) sizes.push_back(static_cast<int>(w.rows()));
  return sizes;
}

std::size_t MlpParams::num_params() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  return n;
}

void mlp_validate(const MlpParams& params) {
  if (params.weights.empty())
    throw ConfigError("mlp: network has no layers");
  if (params.biases.size() != params.weights.size())
    throw ShapeError("mlp: weight/bias layer counts differ");
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    const auto& w = params.weights[l];
    const auto& b = params.biases[l];
    if (w.rows() <= 0 || w.cols() <= 0)
      throw ShapeError("mlp: empty weight matrix in layer " +
                       std::to_string(l));
    if (b.size() != w.rows())
      throw ShapeError("mlp: bias length mismatch in layer " +
                       std::to_string(l));
    if (l > 0 && w.cols() != params.weights[l - 1].rows())
      throw ShapeError("mlp: layer sizes do not chain at layer " +
                       std::to_string(l));
    if (!w.allFinite() || !b.allFinite())
      throw NumericError("mlp: non-finite parameter in layer " +
                         std::to_string(l));
  }
}

MlpParams mlp_init(const std::vector<int>& layer_sizes, Rng& rng) {
  if (layer_sizes.size() < 2)
    throw ConfigError("mlp_init: need at least two layer sizes");
  for (int s : layer_sizes)
    if (s <= 0) throw ConfigError("mlp_init: layer sizes must be positive");

  MlpParams params;
  const std::size_t n_layers = layer_sizes.size() - 1;
  params.weights.reserve(n_layers);
  params.biases.reserve(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    const double sd = std::sqrt(1.0 / static_cast<double>(fan_in));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) w(i, j) = sd * rng.normal();
    params.weights.push_back(std::move(w));
    params.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return params;
}

Eigen::MatrixXd mlp_forward(const MlpParams& params, const Eigen::MatrixXd& x,
                            MlpWorkspace* ws) {
  if (params.weights.empty())
    throw ConfigError("mlp_forward: network has no layers");
  if (x.cols() != params.input_dim())
    throw ShapeError("mlp_forward: input has " + std::to_string(x.cols()) +
                     " features, network expects " +
                     std::to_string(params.input_dim()));

  const std::size_t n_layers = params.weights.size();
  if (ws) {
    ws->activations.resize(n_layers + 1);
    ws->activations[0] = x;
  }
  Eigen::MatrixXd z = x;
  for (std::size_t l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd pre = z * params.weights[l].transpose();
    pre.rowwise() += params.biases[l].transpose();
    if (l + 1 < n_layers) {
      // tanh(x) = 1 - 2/(e^{2x}+1): exp vectorizes for doubles, tanh does
      // not; saturation falls out of the limits (e^{inf}->inf, e^{-inf}->0).
      pre = 1.0 - 2.0 * ((2.0 * pre.array()).exp() + 1.0).inverse();
    }
    z = std::move(pre);
    if (ws) ws->activations[l + 1] = z;
  }
  return z;
}

MlpParams mlp_backward(const MlpParams& params, const MlpWorkspace& ws,
                       const Eigen::MatrixXd& upstream,
                       Eigen::MatrixXd* grad_input) {
  const std::size_t n_layers = params.weights.size();
  if (ws.activations.size() != n_layers + 1)
    throw ShapeError("mlp_backward: workspace does not match network depth");
  if (upstream.rows() != ws.activations[0].rows() ||
      upstream.cols() != params.output_dim())
    throw ShapeError("mlp_backward: upstream shape mismatch");

  MlpParams grads;
  grads.weights.resize(n_layers);
  grads.biases.resize(n_layers);
  // delta holds the gradient w.r.t. the pre-activation of the current layer;
  // the final layer is linear so it starts as the upstream itself.
  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = n_layers; l-- > 0;) {
    grads.weights[l] = delta.transpose() * ws.activations[l];
    grads.biases[l] = delta.colwise().sum().transpose();
    if (l > 0) {
      delta = ((delta * params.weights[l]).array() *
               (1.0 - ws.activations[l].array().square()))
                  .matrix();
    } else if (grad_input) {
      *grad_input = delta * params.weights[0];
    }
  }
  return grads;
}

MlpParams mlp_backward(const MlpParams& params, const Eigen::MatrixXd& x,
                       const Eigen::MatrixXd& upstream,
                       Eigen::MatrixXd* grad_input) {
  MlpWorkspace ws;
  mlp_forward(params, x, &ws);
  return mlp_backward(params, ws, upstream, grad_input);
}

std::size_t mlp_param_count(const std::vector<int>& layer_sizes) {
  if (layer_sizes.size() < 2)
    throw ConfigError("mlp_param_count: need at least two layer sizes");
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    if (layer_sizes[l] <= 0 || layer_sizes[l + 1] <= 0)
      throw ConfigError("mlp_param_count: layer sizes must be positive");
    n += static_cast<std::size_t>(layer_sizes[l]) * layer_sizes[l + 1] +
         static_cast<std::size_t>(layer_sizes[l + 1]);
  }
  return n;
}

Eigen::VectorXd mlp_flatten(const MlpParams& params) {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(params.num_params()));
  mlp_flatten_into(params, flat.data());
  return flat;
}

void mlp_flatten_into(const MlpParams& params, double* out) {
  std::size_t k = 0;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    const auto& w = params.weights[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) out[k++] = w(i, j);
    const auto& b = params.biases[l];
    for (Eigen::Index i = 0; i < b.size(); ++i) out[k++] = b(i);
  }
}

MlpParams mlp_unflatten(const std::vector<int>& layer_sizes,
                        const double* flat) {
  mlp_param_count(layer_sizes);  // validates sizes
  MlpParams params;
  std::size_t k = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    Eigen::MatrixXd w(layer_sizes[l + 1], layer_sizes[l]);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = flat[k++];
    Eigen::VectorXd b(layer_sizes[l + 1]);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = flat[k++];
    params.weights.push_back(std::move(w));
    params.biases.push_back(std::move(b));
  }
  return params;
}

}  // namespace dklearn
