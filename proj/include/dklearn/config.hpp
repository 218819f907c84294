#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dklearn/active_loop.hpp"
#include "dklearn/dkl.hpp"
#include "dklearn/normalize.hpp"

#include "json.hpp"

namespace dklearn {

// Everything a run needs beyond the dataset.  Parsing is strict: unknown
// keys abort before any computation.
struct RunConfig {
  DklBackend backend = DklBackend::kSingle;
  std::uint64_t seed = 0;
  double init_fraction = 0.02;
  long init_count = -1;  // overrides init_fraction when positive
  int warmup_steps = 5;
  int explore_steps = 20;
  double eps_start = 0.4;
  double eps_end = 0.1;
  NormMode input_norm = NormMode::kStandardize;
  NormMode target_norm = NormMode::kStandardize;
  bool count_all_in_warmup = true;

  int train_steps = 500;
  double lr = 1e-3;
  int ensemble_size = 5;
  // -1 picks the context default: the reduced in-loop budget (500/500) or
  // the full standalone budget (2000/2000).
  int hmc_warmup = -1;
  int hmc_samples = -1;
  int hmc_chains = 1;
  int hmc_max_depth = -1;  // -1 keeps the fit default
  int warm_start_steps = 100;
  int predict_thin = 100;

  std::vector<int> hidden = {64, 32};
  int latent = 2;

  // Imaging runs only; patch -1 picks 3 for synthetic and 8 for real data.
  int patch = -1;
  std::string scalarizer = "polarization_loop_area";

  void validate() const;
};

// CLI backend names: mle | ensemble | hmc.
std::string run_backend_name(DklBackend backend);
DklBackend parse_run_backend(const std::string& name);

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& config);

// in_loop selects the reduced per-step HMC budget.
DklBackendOptions make_backend_options(const RunConfig& config, bool in_loop,
                                       bool parallel);
LoopConfig make_loop_config(const RunConfig& config, bool parallel);

}  // namespace dklearn
