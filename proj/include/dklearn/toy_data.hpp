#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

namespace dklearn {

struct PeakLatents {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;
  Eigen::VectorXd amp;
};

// Two co-registered channels of noisy Gaussian peaks over a shared grid.
// Channel 1 peaks at mu; channel 2 at mu + shift with its own noise stream,
// so channel 1 (index 0) is the informative one for the target.
struct ToyDataset {
  Eigen::VectorXd grid;      // d sample positions
  Eigen::MatrixXd channel1;  // n×d
  Eigen::MatrixXd channel2;  // n×d
  PeakLatents latents;
  Eigen::VectorXd shifts;   // per-row peak displacement of channel 2
  Eigen::VectorXd targets;  // y_i = target_fn(mu_i, sigma_i)
  int correct_channel = 0;
};

struct ToyRanges {
  double mu_min = 0.25, mu_max = 0.75;
  double sigma_min = 0.03, sigma_max = 0.10;
  double amp_min = 0.5, amp_max = 2.0;
};

struct ToyConfig {
  int n = 1000;
  int d = 64;
  double grid_min = 0.0;
  double grid_max = 1.0;
  double noise_std = 0.125;
  double shift_range = 0.1;  // shift ~ Uniform(-shift_range, +shift_range)
  ToyRanges ranges;
};

// A * exp(-(t - mu)^2 / (2 sigma^2)) on the grid; sigma must be positive.
Eigen::VectorXd peak_curve(double mu, double sigma, double amp,
                           const Eigen::VectorXd& grid);

// y = 0.5 mu^3 + 4 sigma^2; amplitude plays no role.
double target_fn(double mu, double sigma);

// Deterministic per seed; latents, shifts and the two channel noise fields
// each consume an independent derived stream so channel noise is
// independent and generation order never leaks between components.
ToyDataset generate_toy(const ToyConfig& config, std::uint64_t seed);

// Container round-trip, bit-exact; the manifest records the generator
// settings and seed.
void save_toy_dataset(const std::string& dir, const ToyDataset& dataset,
                      const ToyConfig& config, std::uint64_t seed);
ToyDataset load_toy_dataset(const std::string& dir);

}  // namespace dklearn
