#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "dklearn/rng.hpp"

namespace dklearn {

struct LogDensityResult {
  double value = 0.0;
  Eigen::VectorXd grad;
};

// Differentiable log-density contract: callers fold any change-of-variable
// Jacobians into the returned value/gradient themselves.
using LogDensityFn = std::function<LogDensityResult(const Eigen::VectorXd&)>;

struct HmcConfig {
  int warmup_steps = 1000;
  int samples = 1000;
  int chains = 1;
  double target_accept = 0.8;
  int max_tree_depth = 8;
  std::uint64_t seed = 0;
  bool parallel_chains = false;

  void validate() const;  // throws ConfigError
};

struct SampleSet {
  Eigen::MatrixXd draws;        // (chains*samples) × P, chain-major rows
  Eigen::VectorXd log_density;  // per draw
  double mean_accept = 0.0;
  std::vector<double> chain_mean_accept;
  long divergences = 0;             // post-warmup transitions only
  bool divergence_warning = false;  // divergences exceed 10% of kept draws
  std::vector<double> step_sizes;   // adapted step size per chain
};

// Position/momentum pair with the cached log-density and gradient at q.
// divergent marks a non-finite evaluation encountered while moving here.
struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  double logp = 0.0;
  Eigen::VectorXd grad;
  bool divergent = false;
};

// One velocity-Verlet step with unit mass matrix; eps carries the sign of
// the integration direction.  Exactly reversible for finite trajectories.
PhasePoint leapfrog(const LogDensityFn& target, const PhasePoint& z,
                    double eps);

// No-U-Turn sampler with slice termination and dual-averaging step-size
// adaptation during warmup.  Chains run from derived seeds
// (config.seed, chain index) and assemble chain-major regardless of
// parallel_chains.  Throws NumericError if the target is not finite at
// init.
SampleSet nuts_sample(const LogDensityFn& target, const Eigen::VectorXd& init,
                      const HmcConfig& config);

}  // namespace dklearn
