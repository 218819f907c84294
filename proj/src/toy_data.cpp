#include "dklearn/toy_data.hpp"

#include <cmath>
#include <map>

#include "dklearn/container.hpp"
#include "dklearn/errors.hpp"
#include "dklearn/rng.hpp"

#include "json.hpp"

namespace dklearn {

Eigen::VectorXd peak_curve(double mu, double sigma, double amp,
                           const Eigen::VectorXd& grid) {
  if (!(sigma > 0.0))
    throw ConfigError("peak_curve: sigma must be positive");
  const double inv = 1.0 / (2.0 * sigma * sigma);
  return (amp * (-(grid.array() - mu).square() * inv).exp()).matrix();
}

double target_fn(double mu, double sigma) {
  return 0.5 * mu * mu * mu + 4.0 * sigma * sigma;
}

ToyDataset generate_toy(const ToyConfig& config, std::uint64_t seed) {
  if (config.n < 1) throw ConfigError("generate_toy: n must be >= 1");
  if (config.d < 2) throw ConfigError("generate_toy: d must be >= 2");
  if (!(config.noise_std >= 0.0))
    throw ConfigError("generate_toy: noise_std must be >= 0");
  if (!(config.shift_range >= 0.0))
    throw ConfigError("generate_toy: shift_range must be >= 0");
  if (!(config.grid_min < config.grid_max))
    throw ConfigError("generate_toy: degenerate grid range");
  const auto& r = config.ranges;
  if (!(r.mu_min < r.mu_max) || !(r.sigma_min < r.sigma_max) ||
      !(r.amp_min < r.amp_max))
    throw ConfigError("generate_toy: degenerate latent range");
  if (!(r.sigma_min > 0.0))
    throw ConfigError("generate_toy: sigma range must be positive");
  if (!(r.amp_min > 0.0))
    throw ConfigError("generate_toy: amplitude range must be positive");

  ToyDataset ds;
  ds.grid = Eigen::VectorXd::LinSpaced(config.d, config.grid_min,
                                       config.grid_max);

  Rng latents_rng(derive_seed(seed, "toy-latents"));
  Rng shift_rng(derive_seed(seed, "toy-shifts"));
  Rng noise1_rng(derive_seed(seed, "toy-noise", 0));
  Rng noise2_rng(derive_seed(seed, "toy-noise", 1));

  const int n = config.n;
  ds.latents.mu.resize(n);
  ds.latents.sigma.resize(n);
  ds.latents.amp.resize(n);
  ds.shifts.resize(n);
  ds.targets.resize(n);
  ds.channel1.resize(n, config.d);
  ds.channel2.resize(n, config.d);

  for (int i = 0; i < n; ++i) {
    const double mu = latents_rng.uniform(r.mu_min, r.mu_max);
    const double sigma = latents_rng.uniform(r.sigma_min, r.sigma_max);
    const double amp = latents_rng.uniform(r.amp_min, r.amp_max);
    const double shift =
        shift_rng.uniform(-config.shift_range, config.shift_range);
    ds.latents.mu(i) = mu;
    ds.latents.sigma(i) = sigma;
    ds.latents.amp(i) = amp;
    ds.shifts(i) = shift;
    ds.targets(i) = target_fn(mu, sigma);

    Eigen::VectorXd row1 = peak_curve(mu, sigma, amp, ds.grid);
    Eigen::VectorXd row2 = peak_curve(mu + shift, sigma, amp, ds.grid);
    for (int j = 0; j < config.d; ++j) {
      row1(j) += config.noise_std * noise1_rng.normal();
      row2(j) += config.noise_std * noise2_rng.normal();
    }
    ds.channel1.row(i) = row1.transpose();
    ds.channel2.row(i) = row2.transpose();
  }
  return ds;
}

void save_toy_dataset(const std::string& dir, const ToyDataset& dataset,
                      const ToyConfig& config, std::uint64_t seed) {
  std::map<std::string, StoredArray> arrays;
  arrays["grid"] = StoredArray::from_vector(dataset.grid);
  arrays["channel1"] = StoredArray::from_matrix(dataset.channel1);
  arrays["channel2"] = StoredArray::from_matrix(dataset.channel2);
  arrays["mu"] = StoredArray::from_vector(dataset.latents.mu);
  arrays["sigma"] = StoredArray::from_vector(dataset.latents.sigma);
  arrays["amp"] = StoredArray::from_vector(dataset.latents.amp);
  arrays["shifts"] = StoredArray::from_vector(dataset.shifts);
  arrays["targets"] = StoredArray::from_vector(dataset.targets);

  nlohmann::json meta;
  meta["kind"] = "toy-dataset";
  meta["n"] = dataset.channel1.rows();
  meta["d"] = dataset.channel1.cols();
  meta["correct_channel"] = dataset.correct_channel;
  meta["seed"] = seed;
  meta["generator"] = {
      {"n", config.n},
      {"d", config.d},
      {"grid_min", config.grid_min},
      {"grid_max", config.grid_max},
      {"noise_std", config.noise_std},
      {"shift_range", config.shift_range},
  };
  write_container(dir, arrays, meta);
}

ToyDataset load_toy_dataset(const std::string& dir) {
  ContainerData container = read_container(dir);
  const std::map<std::string, StoredArray>& arrays = container.arrays;
  const nlohmann::json& meta = container.meta;
  if (!meta.contains("kind") ||
      meta.at("kind").get<std::string>() != "toy-dataset") {
    throw IngestError("load_toy_dataset: '" + dir + "' is not a toy dataset");
  }
  const auto fetch = [&](const std::string& name) -> const StoredArray& {
    auto it = arrays.find(name);
    if (it == arrays.end()) {
      throw IngestError("load_toy_dataset: manifest lists no array '" + name +
                        "'");
    }
    return it->second;
  };

  ToyDataset ds;
  ds.grid = fetch("grid").as_vector();
  ds.channel1 = fetch("channel1").as_matrix();
  ds.channel2 = fetch("channel2").as_matrix();
  ds.latents.mu = fetch("mu").as_vector();
  ds.latents.sigma = fetch("sigma").as_vector();
  ds.latents.amp = fetch("amp").as_vector();
  ds.shifts = fetch("shifts").as_vector();
  ds.targets = fetch("targets").as_vector();
  if (meta.contains("correct_channel")) {
    ds.correct_channel = meta.at("correct_channel").get<int>();
  }

  const Eigen::Index n = ds.channel1.rows();
  const Eigen::Index d = ds.channel1.cols();
  if (ds.channel2.rows() != n || ds.channel2.cols() != d ||
      ds.grid.size() != d || ds.targets.size() != n ||
      ds.latents.mu.size() != n || ds.latents.sigma.size() != n ||
      ds.latents.amp.size() != n || ds.shifts.size() != n) {
    throw IngestError("load_toy_dataset: array shapes are inconsistent");
  }
  return ds;
}

}  // namespace dklearn
