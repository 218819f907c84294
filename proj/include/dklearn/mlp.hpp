#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "dklearn/rng.hpp"

namespace dklearn {

// Fully-connected net, tanh on every layer except the last (the last is
// linear).  weights[l] is out×in; biases[l] is out.  Doubles throughout.
struct MlpParams {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  std::size_t num_layers() const { return weights.size(); }
  Eigen::Index input_dim() const;
  Eigen::Index output_dim() const;
  std::vector<int> layer_sizes() const;
  std::size_t num_params() const;
};

// Throws if layer shapes do not chain, bias lengths disagree with weight
// rows, or any entry is non-finite.  Used on deserialization paths.
void mlp_validate(const MlpParams& params);

// Weights ~ N(0, 1/fan_in), biases zero.  layer_sizes = [in, ..., out],
// at least two entries, all positive.  Draw order is fixed (layer by layer,
// weight rows outer loop) so results are reproducible across platforms.
MlpParams mlp_init(const std::vector<int>& layer_sizes, Rng& rng);

// Per-layer activations captured during a forward pass; activations[0] is
// the input batch and activations[num_layers()] the network output.
struct MlpWorkspace {
  std::vector<Eigen::MatrixXd> activations;
};

// Rows of x are samples.  When ws is non-null the intermediate activations
// are stored for a subsequent backward pass.
Eigen::MatrixXd mlp_forward(const MlpParams& params, const Eigen::MatrixXd& x,
                            MlpWorkspace* ws = nullptr);

// Vector-Jacobian product: gradient of sum_ij upstream_ij * output_ij with
// respect to every weight and bias, returned in MlpParams shape.  ws must
// come from a forward pass of the same params.  If grad_input is non-null
// it receives the gradient with respect to the input batch.
MlpParams mlp_backward(const MlpParams& params, const MlpWorkspace& ws,
                       const Eigen::MatrixXd& upstream,
                       Eigen::MatrixXd* grad_input = nullptr);

// Convenience overload that runs its own forward pass.
MlpParams mlp_backward(const MlpParams& params, const Eigen::MatrixXd& x,
                       const Eigen::MatrixXd& upstream,
                       Eigen::MatrixXd* grad_input = nullptr);

// Canonical flat layout: per layer, weight entries row-major, then the
// bias.  unflatten is the exact inverse for matching layer_sizes.
std::size_t mlp_param_count(const std::vector<int>& layer_sizes);
Eigen::VectorXd mlp_flatten(const MlpParams& params);
void mlp_flatten_into(const MlpParams& params, double* out);
MlpParams mlp_unflatten(const std::vector<int>& layer_sizes,
                        const double* flat);

}  // namespace dklearn
