#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dklearn/active_loop.hpp"
#include "dklearn/config.hpp"
#include "dklearn/dkl.hpp"
#include "dklearn/errors.hpp"
#include "dklearn/imaging.hpp"
#include "dklearn/rng.hpp"
#include "dklearn/toy_data.hpp"

namespace fs = std::filesystem;
using namespace dklearn;

namespace {

std::string fmt(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

// A dataset container resolved into Algorithm-1 channels, keeping the raw
// toy/image payload around for embedding columns.
struct DatasetBundle {
  std::string kind;
  ToyDataset toy;
  ImageDataset image;
  ChannelDataset channels;
  int patch = 0;
};

std::string container_kind(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) {
    throw IngestError("cannot open manifest in '" + dir + "'");
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("malformed manifest in '" + dir + "': " + e.what());
  }
  if (!j.contains("kind") || !j.at("kind").is_string()) {
    throw IngestError("manifest in '" + dir + "' has no 'kind' field");
  }
  return j.at("kind").get<std::string>();
}

DatasetBundle load_bundle(const std::string& dir, const RunConfig& config) {
  DatasetBundle b;
  b.kind = container_kind(dir);
  if (b.kind == "toy-dataset") {
    b.toy = load_toy_dataset(dir);
    b.channels.channels = {b.toy.channel1, b.toy.channel2};
    b.channels.channel_names = {"channel1", "channel2"};
    b.channels.oracle = lookup_oracle(b.toy.targets);
    b.channels.correct_channel = b.toy.correct_channel;
  } else if (b.kind == "image-dataset") {
    b.image = load_dataset(dir);
    // Synthetic images (labeled ground truth) default to small patches.
    b.patch = config.patch > 0 ? config.patch
                               : (b.image.informative.empty() ? 8 : 3);
    b.channels = build_patch_dataset(b.image, config.scalarizer, b.patch);
  } else {
    throw IngestError("unsupported dataset kind '" + b.kind + "' in '" + dir +
                      "'");
  }
  return b;
}

std::string channel_label(const ExperimentTrace& trace, std::size_t c) {
  if (c < trace.channel_names.size() && !trace.channel_names[c].empty()) {
    return trace.channel_names[c];
  }
  return "ch" + std::to_string(c);
}

void print_reward_table(const ExperimentTrace& trace) {
  std::cout << "final sample-averaged rewards\n";
  std::cout << std::left << std::setw(16) << "  channel" << std::right
            << std::setw(10) << "sampled" << std::setw(12) << "R_a" << "\n";
  for (std::size_t c = 0; c < trace.rewards.size(); ++c) {
    std::cout << "  " << std::left << std::setw(14) << channel_label(trace, c)
              << std::right << std::setw(10) << trace.rewards.times_sampled[c]
              << std::setw(12) << std::fixed << std::setprecision(4)
              << trace.rewards.sample_average(c) << "\n";
  }
  std::cout.unsetf(std::ios::floatfield);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IngestError("cannot open '" + path + "' for writing");
  }
  return out;
}

int cmd_generate(const std::string& kind, const std::string& out,
                 std::uint64_t seed, const ToyConfig& toy,
                 const SynthImageConfig& image) {
  if (kind == "toy") {
    ToyDataset ds = generate_toy(toy, seed);
    save_toy_dataset(out, ds, toy, seed);
    std::cout << "toy dataset: n=" << toy.n << " d=" << toy.d
              << " channels=2 seed=" << seed << " -> " << out << "\n";
  } else {
    ImageDataset ds = generate_synth_image(image, seed);
    save_dataset(out, ds);
    std::cout << "synth-image dataset: " << image.m << "x" << image.n
              << " channels=" << image.channels << " v=" << image.v
              << " seed=" << seed << " -> " << out << "\n";
  }
  return 0;
}

int cmd_run(const RunConfig& config, const std::string& data_path,
            const std::string& out_dir, bool parallel) {
  DatasetBundle data = load_bundle(data_path, config);
  DklLoopBackend backend(make_backend_options(config, true, parallel));
  LoopConfig lc = make_loop_config(config, parallel);
  fs::create_directories(out_dir);

  ExperimentTrace trace;
  try {
    run_active_learning(data.channels, backend, lc, &trace);
  } catch (const NumericError& e) {
    trace.config_snapshot["aborted"] = e.what();
    save_trace_json(trace, out_dir + "/trace.json");
    save_trace_csv(trace, out_dir + "/trace.csv");
    std::cerr << "numeric failure: " << e.what() << "\n"
              << "partial trace flushed to " << out_dir << "\n";
    return 4;
  }
  trace.config_snapshot["run_config"] = run_config_to_json(config);
  save_trace_json(trace, out_dir + "/trace.json");
  save_trace_csv(trace, out_dir + "/trace.csv");

  std::cout << "steps recorded: " << trace.steps.size()
            << (trace.completed_early ? " (pool exhausted early)" : "")
            << "\n";
  print_reward_table(trace);
  std::cout << "trace written to " << out_dir << "/trace.{json,csv}\n";
  return 0;
}

int cmd_bench(const RunConfig& config, const std::string& data_path,
              const std::string& out_csv, std::vector<double> fractions,
              int trials, const std::vector<std::string>& backend_names,
              bool parallel) {
  std::vector<DklBackend> backends;
  if (backend_names.empty()) {
    backends.push_back(config.backend);
  } else {
    for (const auto& name : backend_names) {
      backends.push_back(parse_run_backend(name));
    }
  }
  DatasetBundle data = load_bundle(data_path, config);

  std::ofstream out = open_out(out_csv);
  out << "backend,fraction,accuracy,trials,wall_seconds\n";
  std::cout << std::left << std::setw(10) << "backend" << std::right
            << std::setw(10) << "fraction" << std::setw(10) << "accuracy"
            << std::setw(8) << "trials" << std::setw(10) << "wall_s" << "\n";
  for (DklBackend b : backends) {
    RunConfig per = config;
    per.backend = b;
    DklLoopBackend lb(make_backend_options(per, false, parallel));
    const auto rows = static_channel_benchmark(
        data.channels, lb, fractions, trials, config.input_norm, config.seed);
    for (const auto& row : rows) {
      out << run_backend_name(b) << ',' << fmt(row.fraction) << ','
          << fmt(row.accuracy) << ',' << row.trials << ','
          << fmt(row.wall_seconds) << '\n';
      std::cout << std::left << std::setw(10) << run_backend_name(b)
                << std::right << std::fixed << std::setprecision(3)
                << std::setw(10) << row.fraction << std::setw(10)
                << row.accuracy << std::setw(8) << row.trials
                << std::setprecision(1) << std::setw(10) << row.wall_seconds
                << "\n";
      std::cout.unsetf(std::ios::floatfield);
    }
    out.flush();
  }
  if (!out) {
    throw IngestError("write failed for '" + out_csv + "'");
  }
  std::cout << "benchmark written to " << out_csv << "\n";
  return 0;
}

int cmd_embed(const RunConfig& config, const std::string& data_path,
              const std::string& model_dir, const std::string& out_csv,
              int channel, long train_count, bool parallel) {
  DatasetBundle data = load_bundle(data_path, config);
  if (channel < 0 ||
      channel >= static_cast<int>(data.channels.channels.size())) {
    throw ConfigError("embed: channel index out of range");
  }
  const Eigen::MatrixXd& x = data.channels.channels[static_cast<std::size_t>(
      channel)];

  DklModel model;
  if (!model_dir.empty()) {
    model = load_model(model_dir);
  } else {
    Eigen::VectorXd y(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      y[r] = data.channels.oracle(r);
    }
    Eigen::MatrixXd xtrain = x;
    Eigen::VectorXd ytrain = y;
    if (train_count > 0 && train_count < x.rows()) {
      // Random train subset; the embedding is still exported for all rows.
      Rng rng(derive_seed(config.seed, "embed-split"));
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        idx[static_cast<std::size_t>(i)] = i;
      }
      for (long k = 0; k < train_count; ++k) {
        const auto j =
            k + static_cast<long>(rng.uniform_index(
                    static_cast<std::size_t>(x.rows() - k)));
        std::swap(idx[static_cast<std::size_t>(k)],
                  idx[static_cast<std::size_t>(j)]);
      }
      xtrain.resize(train_count, x.cols());
      ytrain.resize(train_count);
      for (long k = 0; k < train_count; ++k) {
        xtrain.row(k) = x.row(idx[static_cast<std::size_t>(k)]);
        ytrain[k] = y[idx[static_cast<std::size_t>(k)]];
      }
    }
    const DklBackendOptions opts = make_backend_options(config, false,
                                                        parallel);
    const std::uint64_t seed = derive_seed(config.seed, "embed-fit");
    switch (opts.backend) {
      case DklBackend::kSingle:
        model = fit_mle(xtrain, ytrain, opts.arch, opts.train, seed);
        break;
      case DklBackend::kEnsemble:
        model = fit_ensemble(xtrain, ytrain, opts.arch, opts.train,
                             opts.ensemble_size, seed, parallel);
        break;
      case DklBackend::kBayes:
        model = fit_hmc(xtrain, ytrain, opts.arch, opts.priors, opts.hmc,
                        seed);
        break;
    }
  }

  const Embedding emb = embed(model, x);
  const bool with_latents = data.kind == "toy-dataset";

  std::ofstream out = open_out(out_csv);
  out << "index";
  for (Eigen::Index k = 0; k < emb.z.cols(); ++k) {
    out << ",z" << (k + 1);
  }
  if (with_latents) {
    out << ",mu,sigma,amp,y";
  }
  out << '\n';
  for (Eigen::Index r = 0; r < emb.z.rows(); ++r) {
    out << r;
    for (Eigen::Index k = 0; k < emb.z.cols(); ++k) {
      out << ',' << fmt(emb.z(r, k));
    }
    if (with_latents) {
      out << ',' << fmt(data.toy.latents.mu[r]) << ','
          << fmt(data.toy.latents.sigma[r]) << ','
          << fmt(data.toy.latents.amp[r]) << ',' << fmt(data.toy.targets[r]);
    }
    out << '\n';
  }
  if (!out) {
    throw IngestError("write failed for '" + out_csv + "'");
  }
  std::cout << "embedding (" << emb.source << "): " << emb.z.rows()
            << " rows -> " << out_csv << "\n";
  return 0;
}

int cmd_report(const std::string& trace_path, const std::string& out_dir) {
  const ExperimentTrace trace = load_trace_json(trace_path);
  fs::create_directories(out_dir);

  {
    std::ofstream out = open_out(out_dir + "/uncertainty.csv");
    out << "step,phase,channel,vm\n";
    for (const auto& rec : trace.steps) {
      for (std::size_t i = 0; i < rec.channels_evaluated.size(); ++i) {
        out << rec.step << ',' << rec.phase << ','
            << channel_label(trace,
                             static_cast<std::size_t>(
                                 rec.channels_evaluated[i]))
            << ',' << fmt(rec.vm[i]) << '\n';
      }
    }
  }
  {
    std::ofstream out = open_out(out_dir + "/rewards.csv");
    out << "channel,times_sampled,sample_average\n";
    for (std::size_t c = 0; c < trace.rewards.size(); ++c) {
      out << channel_label(trace, c) << ',' << trace.rewards.times_sampled[c]
          << ',' << fmt(trace.rewards.sample_average(c)) << '\n';
    }
  }
  {
    std::ofstream out = open_out(out_dir + "/explore.csv");
    out << "step,epsilon,channel,reward,point,value\n";
    for (const auto& rec : trace.steps) {
      if (rec.phase != "explore") continue;
      const auto chosen = static_cast<std::size_t>(rec.chosen_channel);
      out << rec.step << ',' << fmt(rec.epsilon) << ','
          << channel_label(trace, chosen) << ','
          << fmt(rec.reward_delta[chosen]) << ',' << rec.chosen_point << ','
          << fmt(rec.measured_value) << '\n';
    }
  }
  std::cout << "report written to " << out_dir
            << "/{uncertainty,rewards,explore}.csv\n";
  return 0;
}

template <typename Body>
int guarded(bool report_mode, Body body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IngestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return report_mode ? 5 : 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"active channel selection via deep kernel learning"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "write a dataset container");
  std::string gen_kind = "toy";
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  ToyConfig toy;
  SynthImageConfig synth;
  gen->add_option("--kind", gen_kind, "toy or synth-image")
      ->check(CLI::IsMember({"toy", "synth-image"}));
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--n", toy.n, "toy: number of curves");
  gen->add_option("--d", toy.d, "toy: points per curve");
  gen->add_option("--noise", toy.noise_std, "toy: noise std");
  gen->add_option("--shift", toy.shift_range, "toy: channel-2 shift range");
  gen->add_option("--rows", synth.m, "synth-image: image rows");
  gen->add_option("--cols", synth.n, "synth-image: image cols");
  gen->add_option("--channels", synth.channels, "synth-image: channel count");
  gen->add_option("--v", synth.v, "synth-image: loop points");
  gen->add_option("--blobs", synth.blobs, "synth-image: field complexity");
  gen->add_option("--informative-pol", synth.informative_polarization,
                  "synth-image: channel driving the polarization loops");
  gen->add_option("--informative-freq", synth.informative_frequency,
                  "synth-image: channel driving the frequency loops");

  std::string cfg_path, data_path, out_path, model_dir, trace_path;
  std::vector<double> fractions = {0.05, 0.10, 0.20};
  std::vector<std::string> backend_names;
  int trials = 30;
  int channel = 0;
  long train_count = 0;
  bool parallel = false;
  std::uint64_t seed_override = 0;

  auto* run = app.add_subcommand("run", "active-learning experiment");
  run->add_option("--config", cfg_path, "run config JSON")->required();
  run->add_option("--data", data_path, "dataset directory")->required();
  run->add_option("--out", out_path, "output directory")->required();
  run->add_flag("--parallel", parallel, "parallel warm-up fits");
  auto* run_seed = run->add_option("--seed", seed_override,
                                   "override the config seed");

  auto* bench = app.add_subcommand("bench", "static channel benchmark");
  bench->add_option("--config", cfg_path, "run config JSON")->required();
  bench->add_option("--data", data_path, "dataset directory")->required();
  bench->add_option("--out", out_path, "output CSV path")->required();
  bench->add_option("--fractions", fractions, "training fractions")
      ->delimiter(',');
  bench->add_option("--trials", trials, "random splits per fraction");
  bench->add_option("--backends", backend_names,
                    "comma-separated backends (default: config backend)")
      ->delimiter(',');
  bench->add_flag("--parallel", parallel, "parallel member fits");
  auto* bench_seed = bench->add_option("--seed", seed_override,
                                       "override the config seed");

  auto* embed_cmd = app.add_subcommand("embed", "export latent coordinates");
  embed_cmd->add_option("--config", cfg_path, "run config JSON");
  embed_cmd->add_option("--model", model_dir, "trained model directory");
  embed_cmd->add_option("--data", data_path, "dataset directory")->required();
  embed_cmd->add_option("--out", out_path, "output CSV path")->required();
  embed_cmd->add_option("--channel", channel, "channel to embed");
  embed_cmd->add_option("--train-count", train_count,
                        "rows used to train (<=0: all)");
  embed_cmd->add_flag("--parallel", parallel, "parallel member fits");
  auto* embed_seed = embed_cmd->add_option("--seed", seed_override,
                                           "override the config seed");

  auto* report = app.add_subcommand("report", "emit plot-ready CSV series");
  report->add_option("--trace", trace_path, "trace JSON path")->required();
  report->add_option("--out", out_path, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) {
    return guarded(false, [&] {
      return cmd_generate(gen_kind, gen_out, gen_seed, toy, synth);
    });
  }
  if (run->parsed()) {
    return guarded(false, [&] {
      RunConfig config = load_run_config(cfg_path);
      if (run_seed->count() > 0) config.seed = seed_override;
      return cmd_run(config, data_path, out_path, parallel);
    });
  }
  if (bench->parsed()) {
    return guarded(false, [&] {
      RunConfig config = load_run_config(cfg_path);
      if (bench_seed->count() > 0) config.seed = seed_override;
      return cmd_bench(config, data_path, out_path, fractions, trials,
                       backend_names, parallel);
    });
  }
  if (embed_cmd->parsed()) {
    return guarded(false, [&] {
      if (cfg_path.empty() && model_dir.empty()) {
        throw ConfigError("embed: need --config or --model");
      }
      RunConfig config;
      if (!cfg_path.empty()) config = load_run_config(cfg_path);
      if (embed_seed->count() > 0) config.seed = seed_override;
      return cmd_embed(config, data_path, model_dir, out_path, channel,
                       train_count, parallel);
    });
  }
  return guarded(true, [&] { return cmd_report(trace_path, out_path); });
}
