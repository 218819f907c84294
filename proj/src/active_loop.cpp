#include "dklearn/active_loop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <utility>

#include "dklearn/errors.hpp"
#include "dklearn/parallel.hpp"

namespace dklearn {
namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m,
                            const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(),
                                           static_cast<Eigen::Index>(v.size()));
}

// Measures row `local` of the unmeasured pool and moves it into D.
double measure_point(LoopState& state, Eigen::Index local) {
  const Eigen::Index row = state.data.unmeasured[static_cast<std::size_t>(local)];
  const double y = state.data.oracle(row);
  state.data.measured.push_back(row);
  state.measured_y.push_back(y);
  state.data.unmeasured.erase(state.data.unmeasured.begin() + local);
  return y;
}

long initial_count(const LoopConfig& config, Eigen::Index rows) {
  long count = config.init_count > 0
                   ? config.init_count
                   : std::lround(config.init_fraction *
                                 static_cast<double>(rows));
  if (count < 2)
    throw ConfigError("active loop: initial set needs at least 2 points");
  if (count > rows)
    throw ConfigError("active loop: initial set exceeds available rows");
  return count;
}

// Partial Fisher-Yates: first `count` entries form the draw.
std::vector<Eigen::Index> draw_split(Eigen::Index rows, long count, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(rows));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  for (long i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(i) +
                   rng.uniform_index(static_cast<std::uint64_t>(rows - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  return idx;
}

}  // namespace

Eigen::Index ChannelDataset::rows() const {
  return channels.empty() ? 0 : channels.front().rows();
}

void ChannelDataset::validate() const {
  if (channels.empty())
    throw ConfigError("ChannelDataset: no channels");
  const Eigen::Index n = channels.front().rows();
  if (n < 1) throw ShapeError("ChannelDataset: channels have no rows");
  for (const auto& c : channels)
    if (c.rows() != n)
      throw ShapeError("ChannelDataset: channel row counts differ");
  if (!channel_names.empty() && channel_names.size() != channels.size())
    throw ShapeError("ChannelDataset: channel name count mismatch");
  if (!oracle) throw ConfigError("ChannelDataset: oracle not set");
  if (correct_channel >= static_cast<int>(channels.size()))
    throw ConfigError("ChannelDataset: correct_channel out of range");
  if (measured.empty() && unmeasured.empty()) return;  // not yet split
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  auto mark = [&](const std::vector<Eigen::Index>& v) {
    for (Eigen::Index i : v) {
      if (i < 0 || i >= n)
        throw ShapeError("ChannelDataset: row index out of range");
      if (seen[static_cast<std::size_t>(i)]++)
        throw ShapeError("ChannelDataset: row indexed twice in the split");
    }
  };
  mark(measured);
  mark(unmeasured);
  if (measured.size() + unmeasured.size() != static_cast<std::size_t>(n))
    throw ShapeError("ChannelDataset: split does not cover all rows");
}

std::function<double(Eigen::Index)> lookup_oracle(Eigen::VectorXd targets) {
  return [targets = std::move(targets)](Eigen::Index i) {
    if (i < 0 || i >= targets.size())
      throw ShapeError("lookup_oracle: row index out of range");
    return targets(i);
  };
}

ChannelRewards ChannelRewards::zeros(std::size_t n_channels) {
  ChannelRewards r;
  r.cumulative.assign(n_channels, 0.0);
  r.times_sampled.assign(n_channels, 0);
  return r;
}

double ChannelRewards::sample_average(std::size_t channel) const {
  if (channel >= cumulative.size())
    throw ShapeError("ChannelRewards: channel out of range");
  const long n = times_sampled[channel];
  return n > 0 ? cumulative[channel] / static_cast<double>(n) : 0.0;
}

std::optional<Eigen::Index> acquisition_max_variance(
    const PosteriorPredictive& pred) {
  if (pred.variance.size() == 0) return std::nullopt;
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < pred.variance.size(); ++i)
    if (pred.variance(i) > pred.variance(best)) best = i;
  return best;
}

double anneal_epsilon(int step, int total_steps, double eps_start,
                      double eps_end) {
  if (total_steps < 1)
    throw ConfigError("anneal_epsilon: total_steps must be >= 1");
  if (step < 0 || step >= total_steps)
    throw ConfigError("anneal_epsilon: step out of range");
  if (total_steps == 1) return eps_start;
  // Endpoints are exact; interpolation only in between.
  if (step == total_steps - 1) return eps_end;
  const double t =
      static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return eps_start + t * (eps_end - eps_start);
}

std::size_t epsilon_greedy_select(const ChannelRewards& rewards, double eps,
                                  Rng& rng) {
  const std::size_t n = rewards.size();
  if (n == 0) throw ConfigError("epsilon_greedy_select: no channels");
  if (!(eps >= 0.0 && eps <= 1.0))
    throw ConfigError("epsilon_greedy_select: eps must lie in [0,1]");
  if (rng.uniform() < eps)
    return static_cast<std::size_t>(rng.uniform_index(n));
  std::size_t best = 0;
  for (std::size_t c = 1; c < n; ++c)
    if (rewards.sample_average(c) > rewards.sample_average(best)) best = c;
  return best;
}

DklLoopBackend::DklLoopBackend(DklBackendOptions options)
    : options_(std::move(options)) {}

PosteriorPredictive DklLoopBackend::fit_predict(int channel,
                                                const Eigen::MatrixXd& xtrain,
                                                const Eigen::VectorXd& ytrain,
                                                const Eigen::MatrixXd& xstar,
                                                std::uint64_t seed) {
  (void)channel;
  // The loop normalizes features once over the full data, so the per-fit
  // input transform must stay off; targets renormalize on every fit.
  TrainConfig train = options_.train;
  train.input_norm = NormMode::kNone;

  DklModel model;
  switch (options_.backend) {
    case DklBackend::kSingle:
      model = fit_mle(xtrain, ytrain, options_.arch, train, seed);
      break;
    case DklBackend::kEnsemble:
      model = fit_ensemble(xtrain, ytrain, options_.arch, train,
                           options_.ensemble_size, seed, options_.parallel);
      break;
    case DklBackend::kBayes: {
      HmcFitConfig hmc = options_.hmc;
      hmc.warm_start = train;
      hmc.hmc.parallel_chains = options_.parallel;
      model = fit_hmc(xtrain, ytrain, options_.arch, options_.priors, hmc,
                      seed);
      break;
    }
  }
  return predict(model, xstar);
}

void LoopConfig::validate() const {
  if (warmup_steps < 0)
    throw ConfigError("LoopConfig: warmup_steps must be >= 0");
  if (explore_steps < 0)
    throw ConfigError("LoopConfig: explore_steps must be >= 0");
  if (!(eps_start >= 0.0 && eps_start <= 1.0) ||
      !(eps_end >= 0.0 && eps_end <= 1.0))
    throw ConfigError("LoopConfig: eps endpoints must lie in [0,1]");
  if (init_count <= 0 && !(init_fraction > 0.0 && init_fraction <= 1.0))
    throw ConfigError("LoopConfig: init_fraction must lie in (0,1]");
}

LoopState init_loop_state(const ChannelDataset& dataset,
                          const LoopConfig& config) {
  config.validate();
  dataset.validate();

  LoopState state;
  state.data = dataset;
  state.seed = config.seed;
  state.parallel_warmup = config.parallel_warmup;
  state.count_all_in_warmup = config.count_all_in_warmup;
  state.policy_rng = Rng(derive_seed(config.seed, "policy"));

  const std::size_t n_channels = state.data.channels.size();
  state.rewards = ChannelRewards::zeros(n_channels);
  state.last_vm.assign(n_channels,
                       std::numeric_limits<double>::quiet_NaN());

  state.features.reserve(n_channels);
  for (const auto& channel : state.data.channels)
    state.features.push_back(
        fit_column_transform(channel, config.input_norm).apply(channel));

  if (state.data.measured.empty() && state.data.unmeasured.empty()) {
    const Eigen::Index rows = state.data.rows();
    const long count = initial_count(config, rows);
    Rng split_rng(derive_seed(config.seed, "init-split"));
    std::vector<Eigen::Index> idx = draw_split(rows, count, split_rng);
    state.data.measured.assign(idx.begin(), idx.begin() + count);
    state.data.unmeasured.assign(idx.begin() + count, idx.end());
    std::sort(state.data.unmeasured.begin(), state.data.unmeasured.end());
  }
  state.measured_y.reserve(state.data.measured.size());
  for (Eigen::Index row : state.data.measured)
    state.measured_y.push_back(state.data.oracle(row));
  return state;
}

StepRecord warmup_step(LoopState& state, LoopBackend& backend) {
  const std::size_t n_channels = state.features.size();
  if (state.data.unmeasured.empty())
    throw ConfigError("warmup_step: no unmeasured points left");

  const Eigen::VectorXd ytrain = to_vector(state.measured_y);
  std::vector<PosteriorPredictive> preds(n_channels);
  for_each_index(n_channels, state.parallel_warmup, [&](std::size_t c) {
    try {
      preds[c] = backend.fit_predict(
          static_cast<int>(c), gather_rows(state.features[c], state.data.measured),
          ytrain, gather_rows(state.features[c], state.data.unmeasured),
          derive_seed(state.seed, "fit",
                      static_cast<std::uint64_t>(state.step_index),
                      static_cast<std::uint64_t>(c)));
    } catch (const NumericError& e) {
      throw NumericError("warmup_step: channel " + std::to_string(c) + ": " +
                         e.what());
    }
  });

  StepRecord rec;
  rec.step = state.step_index;
  rec.phase = "warmup";
  rec.reward_delta.assign(n_channels, 0.0);
  std::size_t winner = 0;
  for (std::size_t c = 0; c < n_channels; ++c) {
    const double vm = mean_uncertainty(preds[c]);
    rec.channels_evaluated.push_back(static_cast<int>(c));
    rec.vm.push_back(vm);
    state.last_vm[c] = vm;
    if (vm < rec.vm[winner]) winner = c;
  }

  rec.reward_delta[winner] = 1.0;
  state.rewards.cumulative[winner] += 1.0;
  for (std::size_t c = 0; c < n_channels; ++c)
    if (state.count_all_in_warmup || c == winner)
      state.rewards.times_sampled[c] += 1;

  const auto local = acquisition_max_variance(preds[winner]);
  rec.chosen_channel = static_cast<int>(winner);
  rec.chosen_point = static_cast<long>(
      state.data.unmeasured[static_cast<std::size_t>(*local)]);
  rec.measured_value = measure_point(state, *local);
  ++state.step_index;
  return rec;
}

StepRecord explore_step(LoopState& state, LoopBackend& backend,
                        double epsilon) {
  const std::size_t n_channels = state.features.size();
  if (state.data.unmeasured.empty())
    throw ConfigError("explore_step: no unmeasured points left");

  const std::size_t chosen =
      epsilon_greedy_select(state.rewards, epsilon, state.policy_rng);
  const Eigen::VectorXd ytrain = to_vector(state.measured_y);
  PosteriorPredictive pred;
  try {
    pred = backend.fit_predict(
        static_cast<int>(chosen),
        gather_rows(state.features[chosen], state.data.measured), ytrain,
        gather_rows(state.features[chosen], state.data.unmeasured),
        derive_seed(state.seed, "fit",
                    static_cast<std::uint64_t>(state.step_index),
                    static_cast<std::uint64_t>(chosen)));
  } catch (const NumericError& e) {
    throw NumericError("explore_step: channel " + std::to_string(chosen) +
                       ": " + e.what());
  }

  const double vm = mean_uncertainty(pred);
  const double reward = vm < state.last_vm[chosen] ? 1.0 : -1.0;
  state.last_vm[chosen] = vm;
  state.rewards.cumulative[chosen] += reward;
  state.rewards.times_sampled[chosen] += 1;

  StepRecord rec;
  rec.step = state.step_index;
  rec.phase = "explore";
  rec.channels_evaluated = {static_cast<int>(chosen)};
  rec.vm = {vm};
  rec.reward_delta.assign(n_channels, 0.0);
  rec.reward_delta[chosen] = reward;
  rec.chosen_channel = static_cast<int>(chosen);
  rec.epsilon = epsilon;

  const auto local = acquisition_max_variance(pred);
  rec.chosen_point = static_cast<long>(
      state.data.unmeasured[static_cast<std::size_t>(*local)]);
  rec.measured_value = measure_point(state, *local);
  ++state.step_index;
  return rec;
}

ExperimentTrace run_active_learning(const ChannelDataset& dataset,
                                    LoopBackend& backend,
                                    const LoopConfig& config,
                                    ExperimentTrace* partial) {
  LoopState state = init_loop_state(dataset, config);

  ExperimentTrace local;
  ExperimentTrace& trace = partial != nullptr ? *partial : local;
  trace = ExperimentTrace{};
  trace.n_channels = static_cast<int>(state.data.channels.size());
  trace.channel_names = state.data.channel_names;
  trace.config_snapshot = {
      {"warmup_steps", config.warmup_steps},
      {"explore_steps", config.explore_steps},
      {"eps_start", config.eps_start},
      {"eps_end", config.eps_end},
      {"init_fraction", config.init_fraction},
      {"init_count", config.init_count},
      {"input_norm", norm_mode_name(config.input_norm)},
      {"count_all_in_warmup", config.count_all_in_warmup},
      {"seed", config.seed},
      {"initial_measured", state.data.measured.size()}};
  trace.rewards = state.rewards;

  for (int t = 0; t < config.warmup_steps; ++t) {
    if (state.data.unmeasured.empty()) {
      trace.completed_early = true;
      break;
    }
    trace.steps.push_back(warmup_step(state, backend));
    trace.rewards = state.rewards;
  }
  if (!trace.completed_early) {
    for (int t = 0; t < config.explore_steps; ++t) {
      if (state.data.unmeasured.empty()) {
        trace.completed_early = true;
        break;
      }
      const double eps =
          anneal_epsilon(t, config.explore_steps, config.eps_start,
                         config.eps_end);
      trace.steps.push_back(explore_step(state, backend, eps));
      trace.rewards = state.rewards;
    }
  }
  trace.rewards = state.rewards;
  return trace;
}

std::vector<BenchmarkRow> static_channel_benchmark(
    const ChannelDataset& dataset, LoopBackend& backend,
    const std::vector<double>& fractions, int trials, NormMode input_norm,
    std::uint64_t seed) {
  dataset.validate();
  if (dataset.correct_channel < 0)
    throw ConfigError(
        "static_channel_benchmark: dataset has no correct-channel label");
  if (trials < 1)
    throw ConfigError("static_channel_benchmark: trials must be >= 1");
  if (fractions.empty())
    throw ConfigError("static_channel_benchmark: no fractions given");

  const Eigen::Index rows = dataset.rows();
  const std::size_t n_channels = dataset.channels.size();
  std::vector<Eigen::MatrixXd> features;
  features.reserve(n_channels);
  for (const auto& channel : dataset.channels)
    features.push_back(
        fit_column_transform(channel, input_norm).apply(channel));

  std::vector<BenchmarkRow> table;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    const double fraction = fractions[fi];
    const long count = std::lround(fraction * static_cast<double>(rows));
    if (count < 2)
      throw ConfigError(
          "static_channel_benchmark: fraction yields fewer than 2 training "
          "points");
    if (count > rows - 1)
      throw ConfigError(
          "static_channel_benchmark: fraction leaves no evaluation points");

    const auto t0 = std::chrono::steady_clock::now();
    int successes = 0;
    for (int trial = 0; trial < trials; ++trial) {
      Rng split_rng(derive_seed(seed, "bench-split",
                                static_cast<std::uint64_t>(fi),
                                static_cast<std::uint64_t>(trial)));
      std::vector<Eigen::Index> idx = draw_split(rows, count, split_rng);
      const std::vector<Eigen::Index> train(idx.begin(), idx.begin() + count);
      std::vector<Eigen::Index> test(idx.begin() + count, idx.end());
      std::sort(test.begin(), test.end());
      Eigen::VectorXd ytrain(count);
      for (long i = 0; i < count; ++i)
        ytrain(i) = dataset.oracle(train[static_cast<std::size_t>(i)]);

      const std::uint64_t trial_seed =
          derive_seed(seed, "bench-trial", static_cast<std::uint64_t>(fi),
                      static_cast<std::uint64_t>(trial));
      std::vector<double> vm(n_channels);
      for (std::size_t c = 0; c < n_channels; ++c) {
        const PosteriorPredictive pred = backend.fit_predict(
            static_cast<int>(c), gather_rows(features[c], train), ytrain,
            gather_rows(features[c], test),
            derive_seed(trial_seed, "bench-fit",
                        static_cast<std::uint64_t>(c)));
        vm[c] = mean_uncertainty(pred);
      }
      bool best = true;
      for (std::size_t c = 0; c < n_channels; ++c)
        if (c != static_cast<std::size_t>(dataset.correct_channel) &&
            !(vm[static_cast<std::size_t>(dataset.correct_channel)] < vm[c]))
          best = false;
      if (best) ++successes;
    }
    const auto t1 = std::chrono::steady_clock::now();
    BenchmarkRow row;
    row.fraction = fraction;
    row.accuracy = static_cast<double>(successes) / trials;
    row.trials = trials;
    row.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    table.push_back(row);
  }
  return table;
}

namespace {

nlohmann::json record_to_json(const StepRecord& rec) {
  return {{"step", rec.step},
          {"phase", rec.phase},
          {"channels_evaluated", rec.channels_evaluated},
          {"vm", rec.vm},
          {"reward_delta", rec.reward_delta},
          {"chosen_channel", rec.chosen_channel},
          {"chosen_point", rec.chosen_point},
          {"measured_value", rec.measured_value},
          {"epsilon", rec.epsilon}};
}

StepRecord record_from_json(const nlohmann::json& j) {
  StepRecord rec;
  try {
    rec.step = j.at("step").get<int>();
    rec.phase = j.at("phase").get<std::string>();
    rec.channels_evaluated =
        j.at("channels_evaluated").get<std::vector<int>>();
    rec.vm = j.at("vm").get<std::vector<double>>();
    rec.reward_delta = j.at("reward_delta").get<std::vector<double>>();
    rec.chosen_channel = j.at("chosen_channel").get<int>();
    rec.chosen_point = j.at("chosen_point").get<long>();
    rec.measured_value = j.at("measured_value").get<double>();
    rec.epsilon = j.at("epsilon").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("trace: bad step record: " + std::string(e.what()));
  }
  return rec;
}

}  // namespace

void save_trace_json(const ExperimentTrace& trace, const std::string& path) {
  nlohmann::json j;
  j["kind"] = "experiment-trace";
  j["n_channels"] = trace.n_channels;
  j["channel_names"] = trace.channel_names;
  j["completed_early"] = trace.completed_early;
  j["config"] = trace.config_snapshot;
  j["rewards"] = {{"cumulative", trace.rewards.cumulative},
                  {"times_sampled", trace.rewards.times_sampled}};
  std::vector<double> averages;
  for (std::size_t c = 0; c < trace.rewards.size(); ++c)
    averages.push_back(trace.rewards.sample_average(c));
  j["rewards"]["sample_average"] = averages;
  j["steps"] = nlohmann::json::array();
  for (const auto& rec : trace.steps) j["steps"].push_back(record_to_json(rec));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestError("save_trace_json: cannot open " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IngestError("save_trace_json: write failed for " + path);
}

void save_trace_csv(const ExperimentTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestError("save_trace_csv: cannot open " + path);
  out << "step,phase,channel,vm,reward,point,epsilon\n";
  for (const auto& rec : trace.steps) {
    const auto chosen = static_cast<std::size_t>(rec.chosen_channel);
    double vm = 0.0;
    for (std::size_t i = 0; i < rec.channels_evaluated.size(); ++i)
      if (rec.channels_evaluated[i] == rec.chosen_channel) vm = rec.vm[i];
    out << rec.step << ',' << rec.phase << ',' << rec.chosen_channel << ','
        << format_double(vm) << ',' << format_double(rec.reward_delta[chosen])
        << ',' << rec.chosen_point << ',' << format_double(rec.epsilon)
        << '\n';
  }
  if (!out) throw IngestError("save_trace_csv: write failed for " + path);
}

ExperimentTrace load_trace_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("load_trace_json: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("load_trace_json: parse error: " + std::string(e.what()));
  }
  if (!j.contains("kind") || j["kind"] != "experiment-trace")
    throw IngestError("load_trace_json: field 'kind' is not experiment-trace");

  ExperimentTrace trace;
  try {
    trace.n_channels = j.at("n_channels").get<int>();
    trace.channel_names =
        j.value("channel_names", std::vector<std::string>{});
    trace.completed_early = j.at("completed_early").get<bool>();
    trace.config_snapshot = j.value("config", nlohmann::json::object());
    trace.rewards.cumulative =
        j.at("rewards").at("cumulative").get<std::vector<double>>();
    trace.rewards.times_sampled =
        j.at("rewards").at("times_sampled").get<std::vector<long>>();
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("load_trace_json: bad field: " + std::string(e.what()));
  }
  if (!j.contains("steps") || !j["steps"].is_array())
    throw IngestError("load_trace_json: field 'steps' missing or not a list");
  for (const auto& rec : j["steps"])
    trace.steps.push_back(record_from_json(rec));
  return trace;
}

}  // namespace dklearn
