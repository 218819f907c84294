#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dklearn/dkl.hpp"
#include "dklearn/normalize.hpp"
#include "dklearn/rng.hpp"

#include "json.hpp"

namespace dklearn {

// Competing feature sources over one shared row index, plus the oracle that
// delivers a measurement for a row.  measured/unmeasured partition the rows.
struct ChannelDataset {
  std::vector<Eigen::MatrixXd> channels;
  std::vector<std::string> channel_names;  // empty or one per channel
  std::function<double(Eigen::Index)> oracle;
  int correct_channel = -1;  // designated ground truth; -1 when unknown
  std::vector<Eigen::Index> measured;
  std::vector<Eigen::Index> unmeasured;

  Eigen::Index rows() const;
  void validate() const;
};

// Convenience oracle: direct lookup into a target vector.
std::function<double(Eigen::Index)> lookup_oracle(Eigen::VectorXd targets);

struct ChannelRewards {
  std::vector<double> cumulative;
  std::vector<long> times_sampled;

  static ChannelRewards zeros(std::size_t n_channels);
  std::size_t size() const { return cumulative.size(); }
  // Sample-averaged reward R_a; 0 for a never-sampled channel.
  double sample_average(std::size_t channel) const;
};

struct StepRecord {
  int step = 0;
  std::string phase;  // "warmup" or "explore"
  std::vector<int> channels_evaluated;
  std::vector<double> vm;            // aligned with channels_evaluated
  std::vector<double> reward_delta;  // one entry per channel
  int chosen_channel = -1;
  long chosen_point = -1;
  double measured_value = 0.0;
  double epsilon = -1.0;  // -1 during warmup (no policy draw)
};

struct ExperimentTrace {
  int n_channels = 0;
  std::vector<std::string> channel_names;
  std::vector<StepRecord> steps;
  ChannelRewards rewards;
  bool completed_early = false;  // ran out of unmeasured points
  nlohmann::json config_snapshot;
};

void save_trace_json(const ExperimentTrace& trace, const std::string& path);
void save_trace_csv(const ExperimentTrace& trace, const std::string& path);
ExperimentTrace load_trace_json(const std::string& path);

// Index of the largest predictive variance (ties to the lowest index);
// empty prediction signals experiment completion.
std::optional<Eigen::Index> acquisition_max_variance(
    const PosteriorPredictive& pred);

// Linear schedule hitting eps_start at step 0 and eps_end at the final
// step; a one-step schedule stays at eps_start.
double anneal_epsilon(int step, int total_steps, double eps_start,
                      double eps_end);

// With probability eps a uniform channel, otherwise the best sample-
// averaged reward (ties to the lowest index).
std::size_t epsilon_greedy_select(const ChannelRewards& rewards, double eps,
                                  Rng& rng);

// Model abstraction the loop drives once per (step, channel): fit on the
// measured rows, predict over the unmeasured ones.  Mock implementations
// make the bookkeeping testable without any GP in the loop.
class LoopBackend {
 public:
  virtual ~LoopBackend() = default;
  virtual PosteriorPredictive fit_predict(int channel,
                                          const Eigen::MatrixXd& xtrain,
                                          const Eigen::VectorXd& ytrain,
                                          const Eigen::MatrixXd& xstar,
                                          std::uint64_t seed) = 0;
};

struct DklBackendOptions {
  DklBackend backend = DklBackend::kSingle;
  DklArch arch;
  TrainConfig train;  // mle/ensemble knobs and target normalization
  int ensemble_size = 5;
  DklPriors priors;
  HmcFitConfig hmc;  // bayes knobs
  bool parallel = false;
};

class DklLoopBackend : public LoopBackend {
 public:
  explicit DklLoopBackend(DklBackendOptions options);
  PosteriorPredictive fit_predict(int channel, const Eigen::MatrixXd& xtrain,
                                  const Eigen::VectorXd& ytrain,
                                  const Eigen::MatrixXd& xstar,
                                  std::uint64_t seed) override;

 private:
  DklBackendOptions options_;
};

struct LoopConfig {
  int warmup_steps = 5;
  int explore_steps = 20;
  double eps_start = 0.4;
  double eps_end = 0.1;
  double init_fraction = 0.02;  // ignored when init_count > 0
  long init_count = -1;
  NormMode input_norm = NormMode::kStandardize;
  // Warm-up ledger policy: all channels were trained, so all counts grow;
  // the alternative counts only the winner.
  bool count_all_in_warmup = true;
  bool parallel_warmup = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// Mutable loop state threaded through the step operations.  features hold
// the per-channel matrices normalized once over the full data; last_vm is
// each channel's most recent mean uncertainty (NaN before first
// evaluation).
struct LoopState {
  ChannelDataset data;
  std::vector<Eigen::MatrixXd> features;
  std::vector<double> measured_y;  // aligned with data.measured
  ChannelRewards rewards;
  std::vector<double> last_vm;
  int step_index = 0;
  Rng policy_rng{0};
  std::uint64_t seed = 0;
  bool parallel_warmup = false;
  bool count_all_in_warmup = true;
};

LoopState init_loop_state(const ChannelDataset& dataset,
                          const LoopConfig& config);

// One warm-up iteration: every channel trained, lowest mean uncertainty
// rewarded +1, winner's prediction drives the acquisition, chosen point
// measured and moved to D.  Fit errors carry the channel index.
StepRecord warmup_step(LoopState& state, LoopBackend& backend);

// One exploration iteration: eps-greedy channel choice, +1 on a strict
// decrease of that channel's mean uncertainty since its previous
// evaluation and -1 otherwise (also -1 when it has no baseline).
StepRecord explore_step(LoopState& state, LoopBackend& backend,
                        double epsilon);

// Algorithm 1 end-to-end.  The initial measured set is drawn without
// replacement from a derived stream; the trace is truncated with
// completed_early when the unmeasured pool runs dry.  When partial is
// given the evolving trace is built in place there, so callers can flush
// everything recorded before a numeric failure escaped.
ExperimentTrace run_active_learning(const ChannelDataset& dataset,
                                    LoopBackend& backend,
                                    const LoopConfig& config,
                                    ExperimentTrace* partial = nullptr);

struct BenchmarkRow {
  double fraction = 0.0;
  double accuracy = 0.0;
  int trials = 0;
  double wall_seconds = 0.0;
};

// Static channel identification: per fraction and trial, a fresh random
// train split and per-channel fit; a trial succeeds when the designated
// correct channel has strictly the lowest mean uncertainty.
std::vector<BenchmarkRow> static_channel_benchmark(
    const ChannelDataset& dataset, LoopBackend& backend,
    const std::vector<double>& fractions, int trials, NormMode input_norm,
    std::uint64_t seed);

}  // namespace dklearn
