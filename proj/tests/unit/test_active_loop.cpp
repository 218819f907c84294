#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"

#include "dklearn/active_loop.hpp"
#include "dklearn/errors.hpp"

using namespace dklearn;
namespace fs = std::filesystem;

namespace {

// Scripted backend: constant per-channel variance levels, so the warm-up
// winner and the acquisition argmax are known in advance.  Variance at
// candidate k is level * (1 + k) so the last unmeasured row always wins
// the acquisition.
class ScriptedBackend : public LoopBackend {
 public:
  explicit ScriptedBackend(std::vector<double> levels)
      : levels_(std::move(levels)) {}

  PosteriorPredictive fit_predict(int channel, const Eigen::MatrixXd&,
                                  const Eigen::VectorXd&,
                                  const Eigen::MatrixXd& xstar,
                                  std::uint64_t) override {
    ++fit_calls;
    PosteriorPredictive out;
    out.mean = Eigen::VectorXd::Zero(xstar.rows());
    out.variance.resize(xstar.rows());
    const double level = levels_[static_cast<std::size_t>(channel)];
    for (Eigen::Index k = 0; k < xstar.rows(); ++k) {
      out.variance[k] = level * static_cast<double>(1 + k);
    }
    return out;
  }

  int fit_calls = 0;

 private:
  std::vector<double> levels_;
};

// Variance decays with every call on a channel: every re-evaluation of the
// same channel sees lower mean uncertainty, so explore rewards are +1.
class DecayingBackend : public LoopBackend {
 public:
  PosteriorPredictive fit_predict(int channel, const Eigen::MatrixXd&,
                                  const Eigen::VectorXd&,
                                  const Eigen::MatrixXd& xstar,
                                  std::uint64_t) override {
    const auto c = static_cast<std::size_t>(channel);
    if (calls_.size() <= c) calls_.resize(c + 1, 0);
    ++calls_[c];
    PosteriorPredictive out;
    out.mean = Eigen::VectorXd::Zero(xstar.rows());
    out.variance =
        Eigen::VectorXd::Constant(xstar.rows(),
                                  1.0 / static_cast<double>(calls_[c]));
    return out;
  }

 private:
  std::vector<long> calls_;
};

class ThrowingBackend : public LoopBackend {
 public:
  explicit ThrowingBackend(int fail_at) : fail_at_(fail_at) {}
  PosteriorPredictive fit_predict(int, const Eigen::MatrixXd&,
                                  const Eigen::VectorXd&,
                                  const Eigen::MatrixXd& xstar,
                                  std::uint64_t) override {
    if (++calls_ >= fail_at_) throw NumericError("scripted failure");
    PosteriorPredictive out;
    out.mean = Eigen::VectorXd::Zero(xstar.rows());
    out.variance = Eigen::VectorXd::Ones(xstar.rows());
    return out;
  }

 private:
  int fail_at_;
  int calls_ = 0;
};

ChannelDataset make_dataset(int rows, int n_channels) {
  ChannelDataset data;
  for (int c = 0; c < n_channels; ++c) {
    Eigen::MatrixXd x(rows, 3);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < 3; ++j) x(i, j) = c * 100.0 + i + 0.1 * j;
    }
    data.channels.push_back(x);
    data.channel_names.push_back("ch" + std::to_string(c));
  }
  Eigen::VectorXd targets =
      Eigen::VectorXd::LinSpaced(rows, 0.0, rows - 1.0);
  data.oracle = lookup_oracle(targets);
  data.correct_channel = 0;
  return data;
}

LoopConfig quick_config(int warmup, int explore, long init_count) {
  LoopConfig cfg;
  cfg.warmup_steps = warmup;
  cfg.explore_steps = explore;
  cfg.init_count = init_count;
  cfg.seed = 3;
  return cfg;
}

void check_ledger(const ChannelDataset& data, Eigen::Index rows) {
  std::set<Eigen::Index> seen;
  for (auto r : data.measured) seen.insert(r);
  for (auto r : data.unmeasured) seen.insert(r);
  CHECK(static_cast<Eigen::Index>(seen.size()) == rows);
  CHECK(static_cast<Eigen::Index>(data.measured.size() +
                                  data.unmeasured.size()) == rows);
}

}  // namespace

TEST_CASE("epsilon schedule endpoints and linear interior") {
  CHECK(anneal_epsilon(0, 20, 0.4, 0.1) == 0.4);
  CHECK(anneal_epsilon(19, 20, 0.4, 0.1) == 0.1);
  CHECK(anneal_epsilon(0, 1, 0.4, 0.1) == 0.4);
  // Midpoint of an odd-length schedule.
  CHECK(anneal_epsilon(10, 21, 0.4, 0.1) == doctest::Approx(0.25));
  CHECK_THROWS_AS(anneal_epsilon(5, 5, 0.4, 0.1), ConfigError);
  CHECK_THROWS_AS(anneal_epsilon(0, 0, 0.4, 0.1), ConfigError);
}

TEST_CASE("epsilon greedy exploits and explores") {
  ChannelRewards rewards = ChannelRewards::zeros(3);
  rewards.cumulative = {1.0, 5.0, 2.0};
  rewards.times_sampled = {2, 2, 2};

  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    CHECK(epsilon_greedy_select(rewards, 0.0, rng) == 1);
  }

  // eps = 1: uniform over all channels.
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 30000; ++i) {
    ++counts[epsilon_greedy_select(rewards, 1.0, rng)];
  }
  for (int c = 0; c < 3; ++c) {
    CHECK(counts[c] > 9000);
    CHECK(counts[c] < 11000);
  }

  // Ties break to the lowest index.
  ChannelRewards tied = ChannelRewards::zeros(3);
  tied.cumulative = {3.0, 3.0, 1.0};
  tied.times_sampled = {1, 1, 1};
  CHECK(epsilon_greedy_select(tied, 0.0, rng) == 0);
}

TEST_CASE("sample average handles unsampled channels") {
  ChannelRewards r = ChannelRewards::zeros(2);
  CHECK(r.sample_average(0) == 0.0);
  r.cumulative[1] = -3.0;
  r.times_sampled[1] = 4;
  CHECK(r.sample_average(1) == doctest::Approx(-0.75));
}

TEST_CASE("acquisition takes the first maximal variance") {
  PosteriorPredictive pred;
  pred.mean = Eigen::VectorXd::Zero(4);
  pred.variance.resize(4);
  pred.variance << 1.0, 7.0, 7.0, 2.0;
  auto pick = acquisition_max_variance(pred);
  REQUIRE(pick.has_value());
  CHECK(*pick == 1);

  PosteriorPredictive empty;
  empty.mean.resize(0);
  empty.variance.resize(0);
  CHECK(!acquisition_max_variance(empty).has_value());
}

TEST_CASE("init state draws the requested split") {
  const ChannelDataset data = make_dataset(20, 2);
  LoopState st = init_loop_state(data, quick_config(2, 3, 6));
  CHECK(st.data.measured.size() == 6);
  CHECK(st.data.unmeasured.size() == 14);
  CHECK(st.measured_y.size() == 6);
  for (std::size_t i = 0; i < st.data.measured.size(); ++i) {
    CHECK(st.measured_y[i] ==
          static_cast<double>(st.data.measured[i]));
  }
  check_ledger(st.data, 20);
  CHECK(st.rewards.size() == 2);
  CHECK(std::isnan(st.last_vm[0]));

  // Fractional sizing.
  LoopConfig frac = quick_config(2, 3, -1);
  frac.init_fraction = 0.25;
  LoopState st2 = init_loop_state(data, frac);
  CHECK(st2.data.measured.size() == 5);

  LoopConfig tiny = quick_config(2, 3, 1);
  CHECK_THROWS_AS(init_loop_state(data, tiny), ConfigError);
  LoopConfig huge = quick_config(2, 3, 21);
  CHECK_THROWS_AS(init_loop_state(data, huge), ConfigError);
}

TEST_CASE("warm-up evaluates everyone and rewards the sharpest channel") {
  const ChannelDataset data = make_dataset(12, 3);
  // Channel 1 has the lowest variance level.
  ScriptedBackend backend({3.0, 1.0, 2.0});
  LoopState st = init_loop_state(data, quick_config(1, 0, 4));
  StepRecord rec = warmup_step(st, backend);

  CHECK(rec.phase == "warmup");
  CHECK(rec.channels_evaluated == std::vector<int>{0, 1, 2});
  REQUIRE(rec.vm.size() == 3);
  CHECK(rec.vm[1] < rec.vm[0]);
  CHECK(rec.vm[1] < rec.vm[2]);
  CHECK(rec.chosen_channel == 1);
  CHECK(rec.epsilon == -1.0);
  CHECK(rec.reward_delta == std::vector<double>{0.0, 1.0, 0.0});
  CHECK(st.rewards.cumulative[1] == 1.0);
  // count_all_in_warmup: every channel's ledger grows.
  CHECK(st.rewards.times_sampled == std::vector<long>{1, 1, 1});
  CHECK(backend.fit_calls == 3);

  // The acquisition took the largest variance among the 8 candidates,
  // which the script places on the last unmeasured row.
  CHECK(st.data.measured.size() == 5);
  CHECK(rec.chosen_point == st.data.measured.back());
  check_ledger(st.data, 12);
}

TEST_CASE("warm-up can count only the winner") {
  const ChannelDataset data = make_dataset(12, 3);
  ScriptedBackend backend({3.0, 1.0, 2.0});
  LoopConfig cfg = quick_config(1, 0, 4);
  cfg.count_all_in_warmup = false;
  LoopState st = init_loop_state(data, cfg);
  warmup_step(st, backend);
  CHECK(st.rewards.times_sampled == std::vector<long>{0, 1, 0});
  CHECK(st.rewards.cumulative[1] == 1.0);
}

TEST_CASE("explore rewards strict uncertainty decreases") {
  const ChannelDataset data = make_dataset(30, 2);
  DecayingBackend backend;
  LoopState st = init_loop_state(data, quick_config(0, 0, 3));

  // eps = 0 exploits; all rewards start level at 0 so channel 0 is chosen.
  StepRecord first = explore_step(st, backend, 0.0);
  CHECK(first.phase == "explore");
  CHECK(first.chosen_channel == 0);
  // No baseline yet: judged -1.
  CHECK(first.reward_delta[0] == -1.0);
  CHECK(st.rewards.times_sampled[0] == 1);

  // Second visit to channel 0: variance decayed, judged +1.  Channel 1's
  // average (0, unsampled) now beats channel 0's (-1), but with eps = 0
  // the tie-free argmax picks channel 1; force channel 0 by making its
  // average win.
  st.rewards.cumulative[0] = 2.0;  // average 2 > 0
  StepRecord second = explore_step(st, backend, 0.0);
  CHECK(second.chosen_channel == 0);
  CHECK(second.reward_delta[0] == 1.0);
  check_ledger(st.data, 30);
}

TEST_CASE("explore punishes an uncertainty increase") {
  class RisingBackend : public LoopBackend {
   public:
    PosteriorPredictive fit_predict(int, const Eigen::MatrixXd&,
                                    const Eigen::VectorXd&,
                                    const Eigen::MatrixXd& xstar,
                                    std::uint64_t) override {
      ++calls_;
      PosteriorPredictive out;
      out.mean = Eigen::VectorXd::Zero(xstar.rows());
      out.variance = Eigen::VectorXd::Constant(xstar.rows(),
                                               static_cast<double>(calls_));
      return out;
    }

   private:
    int calls_ = 0;
  };

  const ChannelDataset data = make_dataset(20, 1);
  RisingBackend backend;
  LoopState st = init_loop_state(data, quick_config(0, 0, 3));
  explore_step(st, backend, 0.0);
  StepRecord rec = explore_step(st, backend, 0.0);
  CHECK(rec.reward_delta[0] == -1.0);
  CHECK(st.rewards.cumulative[0] == -2.0);
}

TEST_CASE("full loop bookkeeping and trace layout") {
  const ChannelDataset data = make_dataset(40, 2);
  ScriptedBackend backend({2.0, 1.0});
  LoopConfig cfg = quick_config(3, 5, 4);
  ExperimentTrace trace = run_active_learning(data, backend, cfg);

  CHECK(trace.n_channels == 2);
  CHECK(trace.channel_names == std::vector<std::string>{"ch0", "ch1"});
  REQUIRE(trace.steps.size() == 8);
  CHECK(!trace.completed_early);
  for (int s = 0; s < 3; ++s) {
    CHECK(trace.steps[static_cast<std::size_t>(s)].phase == "warmup");
    CHECK(trace.steps[static_cast<std::size_t>(s)].step == s);
  }
  for (int s = 3; s < 8; ++s) {
    CHECK(trace.steps[static_cast<std::size_t>(s)].phase == "explore");
  }
  // Explore epsilons anneal from eps_start to eps_end.
  CHECK(trace.steps[3].epsilon == doctest::Approx(0.4));
  CHECK(trace.steps[7].epsilon == doctest::Approx(0.1));

  // Ledger conservation: 4 initial + one measurement per step.
  long total_sampled = 0;
  for (std::size_t c = 0; c < trace.rewards.size(); ++c) {
    total_sampled += trace.rewards.times_sampled[c];
  }
  // Warmup counts both channels each step; explore counts one.
  CHECK(total_sampled == 3 * 2 + 5);
  double cum = 0.0;
  for (const auto& rec : trace.steps) {
    for (double d : rec.reward_delta) cum += d;
  }
  double cum_ledger = 0.0;
  for (std::size_t c = 0; c < trace.rewards.size(); ++c) {
    cum_ledger += trace.rewards.cumulative[c];
  }
  CHECK(cum == doctest::Approx(cum_ledger));
}

TEST_CASE("loop truncates when the pool runs dry") {
  const ChannelDataset data = make_dataset(6, 2);
  ScriptedBackend backend({1.0, 2.0});
  LoopConfig cfg = quick_config(2, 10, 4);
  ExperimentTrace trace = run_active_learning(data, backend, cfg);
  CHECK(trace.completed_early);
  CHECK(trace.steps.size() == 2);  // 4 init + 2 steps exhaust 6 rows
}

TEST_CASE("loop is deterministic in the seed") {
  const ChannelDataset data = make_dataset(30, 2);
  LoopConfig cfg = quick_config(2, 6, 4);
  ScriptedBackend b1({1.0, 2.0}), b2({1.0, 2.0});
  ExperimentTrace t1 = run_active_learning(data, b1, cfg);
  ExperimentTrace t2 = run_active_learning(data, b2, cfg);
  REQUIRE(t1.steps.size() == t2.steps.size());
  for (std::size_t s = 0; s < t1.steps.size(); ++s) {
    CHECK(t1.steps[s].chosen_channel == t2.steps[s].chosen_channel);
    CHECK(t1.steps[s].chosen_point == t2.steps[s].chosen_point);
    CHECK(t1.steps[s].measured_value == t2.steps[s].measured_value);
  }
}

TEST_CASE("numeric failure leaves a usable partial trace") {
  const ChannelDataset data = make_dataset(30, 2);
  // Warm-up step costs 2 fits; fail inside the third step's first fit.
  ThrowingBackend backend(5);
  LoopConfig cfg = quick_config(4, 2, 4);
  ExperimentTrace partial;
  CHECK_THROWS_AS(
      run_active_learning(data, backend, cfg, &partial), NumericError);
  CHECK(partial.steps.size() == 2);
  CHECK(partial.n_channels == 2);
  long sampled = 0;
  for (std::size_t c = 0; c < partial.rewards.size(); ++c) {
    sampled += partial.rewards.times_sampled[c];
  }
  CHECK(sampled == 4);  // two completed warm-up steps, both channels
}

TEST_CASE("trace json and csv round-trip") {
  const ChannelDataset data = make_dataset(25, 2);
  ScriptedBackend backend({2.0, 1.0});
  ExperimentTrace trace =
      run_active_learning(data, backend, quick_config(2, 3, 4));
  trace.config_snapshot["note"] = "unit";

  const fs::path dir = fs::temp_directory_path() / "dklearn-test-trace";
  fs::create_directories(dir);
  const std::string jpath = (dir / "trace.json").string();
  const std::string cpath = (dir / "trace.csv").string();
  save_trace_json(trace, jpath);
  save_trace_csv(trace, cpath);

  const ExperimentTrace back = load_trace_json(jpath);
  CHECK(back.n_channels == trace.n_channels);
  CHECK(back.channel_names == trace.channel_names);
  REQUIRE(back.steps.size() == trace.steps.size());
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    CHECK(back.steps[s].phase == trace.steps[s].phase);
    CHECK(back.steps[s].chosen_channel == trace.steps[s].chosen_channel);
    CHECK(back.steps[s].chosen_point == trace.steps[s].chosen_point);
    CHECK(back.steps[s].measured_value ==
          trace.steps[s].measured_value);
    CHECK(back.steps[s].epsilon == trace.steps[s].epsilon);
    CHECK(back.steps[s].vm == trace.steps[s].vm);
  }
  CHECK(back.rewards.cumulative == trace.rewards.cumulative);
  CHECK(back.config_snapshot.at("note") == "unit");

  std::ifstream csv(cpath);
  std::string header;
  std::getline(csv, header);
  CHECK(header.find("step") != std::string::npos);
  CHECK(header.find("phase") != std::string::npos);
  int lines = 0;
  for (std::string line; std::getline(csv, line);) {
    if (!line.empty()) ++lines;
  }
  CHECK(lines == static_cast<int>(trace.steps.size()));
  fs::remove_all(dir);
}

TEST_CASE("static benchmark reports exact accuracies") {
  const ChannelDataset data = make_dataset(40, 2);
  // Channel 0 (the designated correct one) always has lower variance.
  ScriptedBackend good({1.0, 2.0});
  auto rows = static_channel_benchmark(data, good, {0.1, 0.2}, 5,
                                       NormMode::kStandardize, 7);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].fraction == 0.1);
  CHECK(rows[0].accuracy == 1.0);
  CHECK(rows[1].accuracy == 1.0);
  CHECK(rows[0].trials == 5);

  ScriptedBackend bad({2.0, 1.0});
  auto rows2 = static_channel_benchmark(data, bad, {0.1}, 4,
                                        NormMode::kStandardize, 7);
  CHECK(rows2[0].accuracy == 0.0);
}

TEST_CASE("dataset validation catches inconsistencies") {
  ChannelDataset data = make_dataset(10, 2);
  CHECK_NOTHROW(data.validate());

  ChannelDataset mismatched = make_dataset(10, 2);
  mismatched.channels[1] = Eigen::MatrixXd::Zero(8, 3);
  CHECK_THROWS_AS(mismatched.validate(), ShapeError);

  ChannelDataset unnamed = make_dataset(10, 2);
  unnamed.channel_names = {"only-one"};
  CHECK_THROWS_AS(unnamed.validate(), ShapeError);

  ChannelDataset no_oracle = make_dataset(10, 2);
  no_oracle.oracle = nullptr;
  CHECK_THROWS_AS(no_oracle.validate(), ConfigError);

  ChannelDataset empty;
  CHECK_THROWS_AS(empty.validate(), ConfigError);
}

TEST_CASE("loop config validation") {
  LoopConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  LoopConfig bad = cfg;
  bad.warmup_steps = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.explore_steps = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.eps_start = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.eps_end = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.init_fraction = 0.0;
  bad.init_count = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
