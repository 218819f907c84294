#include "dklearn/config.hpp"

#include <climits>
#include <fstream>
#include <set>

#include "dklearn/errors.hpp"

namespace dklearn {

using nlohmann::json;

void RunConfig::validate() const {
  if (train_steps < 1) {
    throw ConfigError("config: train_steps must be positive");
  }
  if (!(lr > 0.0)) {
    throw ConfigError("config: lr must be positive");
  }
  if (ensemble_size < 1) {
    throw ConfigError("config: ensemble_size must be positive");
  }
  if (hmc_chains < 1) {
    throw ConfigError("config: hmc_chains must be positive");
  }
  if (warm_start_steps < 1) {
    throw ConfigError("config: warm_start_steps must be positive");
  }
  if (latent < 1) {
    throw ConfigError("config: latent must be positive");
  }
  for (int width : hidden) {
    if (width < 1) {
      throw ConfigError("config: hidden sizes must be positive");
    }
  }
  if (!(eps_start >= 0.0 && eps_start <= 1.0) ||
      !(eps_end >= 0.0 && eps_end <= 1.0)) {
    throw ConfigError("config: epsilon must lie in [0, 1]");
  }
  if (patch != -1 && patch < 1) {
    throw ConfigError("config: patch must be positive");
  }
  if (scalarizer.empty()) {
    throw ConfigError("config: scalarizer must be non-empty");
  }
  // Loop knobs share LoopConfig's rules.
  LoopConfig probe;
  probe.warmup_steps = warmup_steps;
  probe.explore_steps = explore_steps;
  probe.eps_start = eps_start;
  probe.eps_end = eps_end;
  probe.init_fraction = init_fraction;
  probe.init_count = init_count;
  probe.validate();
}

std::string run_backend_name(DklBackend backend) {
  switch (backend) {
    case DklBackend::kSingle:
      return "mle";
    case DklBackend::kEnsemble:
      return "ensemble";
    case DklBackend::kBayes:
      return "hmc";
  }
  throw ConfigError("run_backend_name: unknown backend");
}

DklBackend parse_run_backend(const std::string& name) {
  if (name == "mle") return DklBackend::kSingle;
  if (name == "ensemble") return DklBackend::kEnsemble;
  if (name == "hmc") return DklBackend::kBayes;
  throw ConfigError("config: unknown backend '" + name +
                    "' (expected mle, ensemble or hmc)");
}

namespace {

void require_type(const json& value, const std::string& key, bool ok) {
  if (!ok) {
    throw ConfigError("config: bad value for key '" + key + "'");
  }
}

double as_double(const json& value, const std::string& key) {
  require_type(value, key, value.is_number());
  return value.get<double>();
}

long as_long(const json& value, const std::string& key) {
  require_type(value, key, value.is_number_integer());
  return value.get<long>();
}

int as_int(const json& value, const std::string& key) {
  const long v = as_long(value, key);
  require_type(value, key, v >= INT_MIN && v <= INT_MAX);
  return static_cast<int>(v);
}

std::uint64_t as_seed(const json& value, const std::string& key) {
  require_type(value, key,
               value.is_number_unsigned() ||
                   (value.is_number_integer() && value.get<long long>() >= 0));
  return value.get<std::uint64_t>();
}

bool as_bool(const json& value, const std::string& key) {
  require_type(value, key, value.is_boolean());
  return value.get<bool>();
}

std::string as_string(const json& value, const std::string& key) {
  require_type(value, key, value.is_string());
  return value.get<std::string>();
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) {
    throw ConfigError("config: expected a JSON object");
  }
  static const std::set<std::string> known = {
      "backend",        "seed",           "init_fraction",
      "init_count",     "warmup_steps",   "explore_steps",
      "eps_start",      "eps_end",        "input_norm",
      "target_norm",    "count_all_in_warmup",
      "train_steps",    "lr",             "ensemble_size",
      "hmc_warmup",     "hmc_samples",    "hmc_chains",
      "hmc_max_depth",  "warm_start_steps", "predict_thin", "hidden",
      "latent",         "patch",          "scalarizer",
  };
  for (const auto& [key, value] : j.items()) {
    if (known.count(key) == 0) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }

  RunConfig c;
  if (j.contains("backend")) {
    c.backend = parse_run_backend(as_string(j.at("backend"), "backend"));
  }
  if (j.contains("seed")) c.seed = as_seed(j.at("seed"), "seed");
  if (j.contains("init_fraction")) {
    c.init_fraction = as_double(j.at("init_fraction"), "init_fraction");
  }
  if (j.contains("init_count")) {
    c.init_count = as_long(j.at("init_count"), "init_count");
  }
  if (j.contains("warmup_steps")) {
    c.warmup_steps = as_int(j.at("warmup_steps"), "warmup_steps");
  }
  if (j.contains("explore_steps")) {
    c.explore_steps = as_int(j.at("explore_steps"), "explore_steps");
  }
  if (j.contains("eps_start")) {
    c.eps_start = as_double(j.at("eps_start"), "eps_start");
  }
  if (j.contains("eps_end")) c.eps_end = as_double(j.at("eps_end"), "eps_end");
  if (j.contains("input_norm")) {
    c.input_norm = parse_norm_mode(as_string(j.at("input_norm"), "input_norm"));
  }
  if (j.contains("target_norm")) {
    c.target_norm =
        parse_norm_mode(as_string(j.at("target_norm"), "target_norm"));
  }
  if (j.contains("count_all_in_warmup")) {
    c.count_all_in_warmup =
        as_bool(j.at("count_all_in_warmup"), "count_all_in_warmup");
  }
  if (j.contains("train_steps")) {
    c.train_steps = as_int(j.at("train_steps"), "train_steps");
  }
  if (j.contains("lr")) c.lr = as_double(j.at("lr"), "lr");
  if (j.contains("ensemble_size")) {
    c.ensemble_size = as_int(j.at("ensemble_size"), "ensemble_size");
  }
  if (j.contains("hmc_warmup")) {
    c.hmc_warmup = as_int(j.at("hmc_warmup"), "hmc_warmup");
  }
  if (j.contains("hmc_samples")) {
    c.hmc_samples = as_int(j.at("hmc_samples"), "hmc_samples");
  }
  if (j.contains("hmc_chains")) {
    c.hmc_chains = as_int(j.at("hmc_chains"), "hmc_chains");
  }
  if (j.contains("hmc_max_depth")) {
    c.hmc_max_depth = as_int(j.at("hmc_max_depth"), "hmc_max_depth");
  }
  if (j.contains("warm_start_steps")) {
    c.warm_start_steps = as_int(j.at("warm_start_steps"), "warm_start_steps");
  }
  if (j.contains("predict_thin")) {
    c.predict_thin = as_int(j.at("predict_thin"), "predict_thin");
  }
  if (j.contains("hidden")) {
    const json& arr = j.at("hidden");
    require_type(arr, "hidden", arr.is_array());
    c.hidden.clear();
    for (const auto& width : arr) {
      c.hidden.push_back(as_int(width, "hidden"));
    }
  }
  if (j.contains("latent")) c.latent = as_int(j.at("latent"), "latent");
  if (j.contains("patch")) c.patch = as_int(j.at("patch"), "patch");
  if (j.contains("scalarizer")) {
    c.scalarizer = as_string(j.at("scalarizer"), "scalarizer");
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IngestError("config: cannot open '" + path + "'");
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: failed to parse '" + path + "': " + e.what());
  }
  return parse_run_config(j);
}

json run_config_to_json(const RunConfig& config) {
  json j;
  j["backend"] = run_backend_name(config.backend);
  j["seed"] = config.seed;
  j["init_fraction"] = config.init_fraction;
  j["init_count"] = config.init_count;
  j["warmup_steps"] = config.warmup_steps;
  j["explore_steps"] = config.explore_steps;
  j["eps_start"] = config.eps_start;
  j["eps_end"] = config.eps_end;
  j["input_norm"] = norm_mode_name(config.input_norm);
  j["target_norm"] = norm_mode_name(config.target_norm);
  j["count_all_in_warmup"] = config.count_all_in_warmup;
  j["train_steps"] = config.train_steps;
  j["lr"] = config.lr;
  j["ensemble_size"] = config.ensemble_size;
  j["hmc_warmup"] = config.hmc_warmup;
  j["hmc_samples"] = config.hmc_samples;
  j["hmc_chains"] = config.hmc_chains;
  j["hmc_max_depth"] = config.hmc_max_depth;
  j["warm_start_steps"] = config.warm_start_steps;
  j["predict_thin"] = config.predict_thin;
  j["hidden"] = config.hidden;
  j["latent"] = config.latent;
  j["patch"] = config.patch;
  j["scalarizer"] = config.scalarizer;
  return j;
}

DklBackendOptions make_backend_options(const RunConfig& config, bool in_loop,
                                       bool parallel) {
  DklBackendOptions o;
  o.backend = config.backend;
  o.arch.hidden = config.hidden;
  o.arch.latent = config.latent;
  o.train.steps = config.train_steps;
  o.train.lr = config.lr;
  o.train.input_norm = config.input_norm;
  o.train.target_norm = config.target_norm;
  o.ensemble_size = config.ensemble_size;

  const int budget = in_loop ? 500 : 2000;
  o.hmc.hmc.warmup_steps =
      config.hmc_warmup > 0 ? config.hmc_warmup : budget;
  o.hmc.hmc.samples = config.hmc_samples > 0 ? config.hmc_samples : budget;
  o.hmc.hmc.chains = config.hmc_chains;
  if (config.hmc_max_depth > 0) o.hmc.hmc.max_tree_depth = config.hmc_max_depth;
  o.hmc.warm_start_steps = config.warm_start_steps;
  o.hmc.predict_thin = config.predict_thin;
  o.hmc.warm_start = o.train;
  o.parallel = parallel;
  return o;
}

LoopConfig make_loop_config(const RunConfig& config, bool parallel) {
  LoopConfig lc;
  lc.warmup_steps = config.warmup_steps;
  lc.explore_steps = config.explore_steps;
  lc.eps_start = config.eps_start;
  lc.eps_end = config.eps_end;
  lc.init_fraction = config.init_fraction;
  lc.init_count = config.init_count;
  lc.input_norm = config.input_norm;
  lc.count_all_in_warmup = config.count_all_in_warmup;
  lc.parallel_warmup = parallel;
  lc.seed = config.seed;
  return lc;
}

}  // namespace dklearn
