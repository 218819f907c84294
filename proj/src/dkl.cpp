#include "dklearn/dkl.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <utility>

#include "dklearn/adam.hpp"
#include "dklearn/container.hpp"
#include "dklearn/errors.hpp"
#include "dklearn/parallel.hpp"

namespace dklearn {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct JointEval {
  double value = 0.0;
  Eigen::VectorXd grad;
};

// Marginal likelihood of the deep kernel at a flat parameter vector, with
// the full gradient chained through the RBF kernel and the net.
JointEval joint_lml(const Eigen::VectorXd& flat, const Eigen::MatrixXd& xnorm,
                    const Eigen::VectorXd& ynorm, const ParamLayout& layout) {
  MlpParams net = layout.net_from(flat);
  GpHyperparams hypers = layout.hypers_from(flat);
  MlpWorkspace ws;
  Eigen::MatrixXd z = mlp_forward(net, xnorm, &ws);
  LmlResult lml = log_marginal_likelihood(z, ynorm, hypers);
  MlpParams net_grads = mlp_backward(net, ws, lml.grad_z);

  JointEval out;
  out.value = lml.value;
  out.grad.resize(flat.size());
  mlp_flatten_into(net_grads, out.grad.data());
  const auto p = static_cast<Eigen::Index>(layout.net_params());
  out.grad(p) = lml.grad_log_alpha;
  out.grad(p + 1) = lml.grad_log_lengthscale;
  out.grad(p + 2) = lml.grad_log_noise;
  return out;
}

void validate_training_inputs(const Eigen::MatrixXd& x,
                              const Eigen::VectorXd& y,
                              const TrainConfig& config) {
  if (x.rows() < 2) throw ShapeError("dkl fit: need at least 2 points");
  if (y.size() != x.rows())
    throw ShapeError("dkl fit: target length does not match inputs");
  if (config.steps < 0) throw ConfigError("dkl fit: steps must be >= 0");
  if (!(config.lr > 0.0)) throw ConfigError("dkl fit: lr must be positive");
}

DklMember fit_single_core(const Eigen::MatrixXd& xnorm,
                          const Eigen::VectorXd& ynorm,
                          const ParamLayout& layout, const TrainConfig& config,
                          std::uint64_t seed) {
  Rng rng(derive_seed(seed, "dkl-init"));
  MlpParams net = mlp_init(layout.layer_sizes, rng);
  Eigen::VectorXd flat = layout.flatten(net, config.init_hypers());
  AdamState adam = AdamState::init(flat.size(), config.lr);

  DklMember member;
  member.lml_trajectory.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    try {
      JointEval eval = joint_lml(flat, xnorm, ynorm, layout);
      member.lml_trajectory.push_back(eval.value);
      auto [next, state] = adam_update(adam, flat, -eval.grad);
      flat = std::move(next);
      adam = std::move(state);
    } catch (const NumericError& e) {
      throw NumericError("dkl fit: step " + std::to_string(step) + ": " +
                         e.what());
    }
  }
  member.net = layout.net_from(flat);
  member.hypers = layout.hypers_from(flat);
  return member;
}

void fit_transforms(DklModel& model, const Eigen::MatrixXd& x,
                    const Eigen::VectorXd& y, const TrainConfig& config) {
  model.input_tf = fit_column_transform(x, config.input_norm);
  model.target_tf = fit_scalar_transform(y, config.target_norm);
  model.train_x = model.input_tf.apply(x);
  model.train_y = model.target_tf.apply(y);
}

PosteriorPredictive member_predict(const DklModel& model, const MlpParams& net,
                                   const GpHyperparams& hypers,
                                   const Eigen::MatrixXd& xstar_norm) {
  Eigen::MatrixXd ztrain = mlp_forward(net, model.train_x);
  Eigen::MatrixXd zstar = mlp_forward(net, xstar_norm);
  PosteriorPredictive pp =
      posterior_predictive(ztrain, model.train_y, zstar, hypers);
  for (Eigen::Index i = 0; i < pp.mean.size(); ++i) {
    pp.mean(i) = model.target_tf.invert_mean(pp.mean(i));
    pp.variance(i) = model.target_tf.invert_variance(pp.variance(i));
  }
  return pp;
}

// Law of total variance across members: mean of means; mean of variances
// plus the population variance of the means.
PosteriorPredictive combine_members(
    const std::vector<PosteriorPredictive>& parts) {
  const auto k = static_cast<double>(parts.size());
  PosteriorPredictive out;
  out.mean = Eigen::VectorXd::Zero(parts.front().mean.size());
  out.variance = Eigen::VectorXd::Zero(parts.front().mean.size());
  for (const auto& p : parts) {
    out.mean += p.mean;
    out.variance += p.variance;
  }
  out.mean /= k;
  out.variance /= k;
  for (const auto& p : parts)
    out.variance += (p.mean - out.mean).cwiseAbs2() / k;
  return out;
}

std::vector<Eigen::Index> thin_indices(Eigen::Index total, int keep) {
  std::vector<Eigen::Index> idx;
  if (keep <= 0 || static_cast<Eigen::Index>(keep) >= total) {
    idx.resize(static_cast<std::size_t>(total));
    for (Eigen::Index i = 0; i < total; ++i)
      idx[static_cast<std::size_t>(i)] = i;
    return idx;
  }
  if (keep == 1) return {0};
  idx.reserve(static_cast<std::size_t>(keep));
  for (int k = 0; k < keep; ++k)
    idx.push_back(static_cast<Eigen::Index>(
        (static_cast<long>(k) * (total - 1)) / (keep - 1)));
  return idx;
}

}  // namespace

std::vector<int> DklArch::layer_sizes(int input_dim) const {
  if (input_dim < 1) throw ConfigError("DklArch: input dimension must be >= 1");
  if (latent < 1) throw ConfigError("DklArch: latent dimension must be >= 1");
  std::vector<int> sizes;
  sizes.push_back(input_dim);
  for (int h : hidden) {
    if (h < 1) throw ConfigError("DklArch: hidden sizes must be >= 1");
    sizes.push_back(h);
  }
  sizes.push_back(latent);
  return sizes;
}

GpHyperparams TrainConfig::init_hypers() const {
  return GpHyperparams::from_constrained(init_alpha, init_lengthscale,
                                         init_noise);
}

std::string backend_name(DklBackend backend) {
  switch (backend) {
    case DklBackend::kSingle:
      return "single";
    case DklBackend::kEnsemble:
      return "ensemble";
    case DklBackend::kBayes:
      return "bayes";
  }
  return "single";
}

DklBackend parse_backend(const std::string& name) {
  if (name == "single") return DklBackend::kSingle;
  if (name == "ensemble") return DklBackend::kEnsemble;
  if (name == "bayes") return DklBackend::kBayes;
  throw ConfigError("unknown backend '" + name + "'");
}

Eigen::VectorXd ParamLayout::flatten(const MlpParams& net,
                                     const GpHyperparams& hypers) const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(total_params()));
  mlp_flatten_into(net, flat.data());
  const auto p = static_cast<Eigen::Index>(net_params());
  flat(p) = hypers.log_alpha;
  flat(p + 1) = hypers.log_lengthscale;
  flat(p + 2) = hypers.log_noise;
  return flat;
}

MlpParams ParamLayout::net_from(const Eigen::VectorXd& flat) const {
  if (flat.size() != static_cast<Eigen::Index>(total_params()))
    throw ShapeError("ParamLayout: flat vector has wrong length");
  return mlp_unflatten(layer_sizes, flat.data());
}

GpHyperparams ParamLayout::hypers_from(const Eigen::VectorXd& flat) const {
  if (flat.size() != static_cast<Eigen::Index>(total_params()))
    throw ShapeError("ParamLayout: flat vector has wrong length");
  const auto p = static_cast<Eigen::Index>(net_params());
  return GpHyperparams::from_log(flat(p), flat(p + 1), flat(p + 2));
}

DklModel fit_mle(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                 const DklArch& arch, const TrainConfig& config,
                 std::uint64_t seed) {
  validate_training_inputs(x, y, config);
  DklModel model;
  model.backend = DklBackend::kSingle;
  model.layout.layer_sizes = arch.layer_sizes(static_cast<int>(x.cols()));
  fit_transforms(model, x, y, config);
  model.members.push_back(
      fit_single_core(model.train_x, model.train_y, model.layout, config, seed));
  return model;
}

DklModel fit_ensemble(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                      const DklArch& arch, const TrainConfig& config,
                      int n_models, std::uint64_t seed, bool parallel) {
  validate_training_inputs(x, y, config);
  if (n_models < 2) throw ConfigError("fit_ensemble: n_models must be >= 2");
  DklModel model;
  model.backend = DklBackend::kEnsemble;
  model.layout.layer_sizes = arch.layer_sizes(static_cast<int>(x.cols()));
  fit_transforms(model, x, y, config);

  model.members.resize(static_cast<std::size_t>(n_models));
  for_each_index(static_cast<std::size_t>(n_models), parallel,
                 [&](std::size_t i) {
                   try {
                     model.members[i] = fit_single_core(
                         model.train_x, model.train_y, model.layout, config,
                         derive_seed(seed, "ensemble-member",
                                     static_cast<std::uint64_t>(i)));
                   } catch (const NumericError& e) {
                     throw NumericError("fit_ensemble: member " +
                                        std::to_string(i) + ": " + e.what());
                   }
                 });
  return model;
}

DklModel fit_hmc(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                 const DklArch& arch, const DklPriors& priors,
                 const HmcFitConfig& config, std::uint64_t seed) {
  validate_training_inputs(x, y, config.warm_start);
  if (config.warm_start_steps < 0)
    throw ConfigError("fit_hmc: warm_start_steps must be >= 0");
  config.hmc.validate();

  DklModel model;
  model.backend = DklBackend::kBayes;
  model.layout.layer_sizes = arch.layer_sizes(static_cast<int>(x.cols()));
  fit_transforms(model, x, y, config.warm_start);

  TrainConfig warm = config.warm_start;
  warm.steps = config.warm_start_steps;
  DklMember start = fit_single_core(model.train_x, model.train_y, model.layout,
                                    warm, derive_seed(seed, "hmc-warmstart"));
  Eigen::VectorXd init = model.layout.flatten(start.net, start.hypers);

  LogDensityFn target =
      make_dkl_target(model.train_x, model.train_y, model.layout, priors);
  HmcConfig hmc = config.hmc;
  hmc.seed = derive_seed(seed, "dkl-hmc");
  model.posterior = nuts_sample(target, init, hmc);
  model.predict_thin = config.predict_thin;
  return model;
}

PosteriorPredictive predict(const DklModel& model,
                            const Eigen::MatrixXd& xstar) {
  if (model.train_x.rows() == 0)
    throw ConfigError("predict: model retains no training data");
  if (xstar.rows() == 0) throw ShapeError("predict: empty test set");
  if (xstar.cols() != model.train_x.cols())
    throw ShapeError("predict: test features have " +
                     std::to_string(xstar.cols()) + " columns, expected " +
                     std::to_string(model.train_x.cols()));

  const Eigen::MatrixXd xs = model.input_tf.apply(xstar);
  std::vector<PosteriorPredictive> parts;
  switch (model.backend) {
    case DklBackend::kSingle:
    case DklBackend::kEnsemble: {
      if (model.members.empty())
        throw ConfigError("predict: model has no members");
      for (const auto& m : model.members)
        parts.push_back(member_predict(model, m.net, m.hypers, xs));
      break;
    }
    case DklBackend::kBayes: {
      if (model.posterior.draws.rows() == 0)
        throw ConfigError("predict: model has no posterior draws");
      for (Eigen::Index i :
           thin_indices(model.posterior.draws.rows(), model.predict_thin)) {
        const Eigen::VectorXd draw = model.posterior.draws.row(i).transpose();
        parts.push_back(member_predict(model, model.layout.net_from(draw),
                                       model.layout.hypers_from(draw), xs));
      }
      break;
    }
  }
  return combine_members(parts);
}

Embedding embed(const DklModel& model, const Eigen::MatrixXd& x,
                EmbedSource source) {
  if (source == EmbedSource::kDefault)
    source = model.backend == DklBackend::kBayes ? EmbedSource::kPosteriorMean
                                                 : EmbedSource::kFirstMember;
  Embedding out;
  if (source == EmbedSource::kFirstMember) {
    if (model.members.empty())
      throw ConfigError("embed: model has no members");
    out.z = mlp_forward(model.members.front().net, model.input_tf.apply(x));
    out.source = "member-0";
    return out;
  }
  if (model.posterior.draws.rows() == 0)
    throw ConfigError("embed: model has no posterior draws");
  const Eigen::VectorXd mean_draw = model.posterior.draws.colwise().mean();
  out.z = mlp_forward(model.layout.net_from(mean_draw),
                      model.input_tf.apply(x));
  out.source = "posterior-mean";
  return out;
}

double mean_uncertainty(const PosteriorPredictive& pred) {
  if (pred.variance.size() == 0)
    throw ShapeError("mean_uncertainty: empty prediction");
  return pred.variance.mean();
}

LogDensityFn make_dkl_target(const Eigen::MatrixXd& xnorm,
                             const Eigen::VectorXd& ynorm,
                             const ParamLayout& layout, const DklPriors& priors,
                             const DklTargetOptions& options) {
  if (xnorm.rows() != ynorm.size())
    throw ShapeError("make_dkl_target: target length does not match inputs");
  if (!layout.layer_sizes.empty() &&
      layout.layer_sizes.front() != static_cast<int>(xnorm.cols()))
    throw ShapeError("make_dkl_target: layout does not match feature count");
  if (!(priors.weight_sd > 0.0) || !(priors.log_hyper_sd > 0.0))
    throw ConfigError("make_dkl_target: prior scales must be positive");

  return [xnorm, ynorm, layout, priors, options](
             const Eigen::VectorXd& v) -> LogDensityResult {
    const auto total = static_cast<Eigen::Index>(layout.total_params());
    if (v.size() != total)
      throw ShapeError("dkl target: parameter vector has wrong length");
    LogDensityResult res;
    res.value = 0.0;
    res.grad = Eigen::VectorXd::Zero(total);
    const auto reject = [total]() {
      LogDensityResult r;
      r.value = -std::numeric_limits<double>::infinity();
      r.grad = Eigen::VectorXd::Zero(total);
      return r;
    };

    if (options.include_likelihood) {
      try {
        JointEval eval = joint_lml(v, xnorm, ynorm, layout);
        if (!std::isfinite(eval.value) || !eval.grad.allFinite())
          return reject();
        res.value += eval.value;
        res.grad += eval.grad;
      } catch (const NumericError&) {
        return reject();
      } catch (const ConfigError&) {
        return reject();
      }
    }
    if (options.include_prior) {
      const auto np = static_cast<Eigen::Index>(layout.net_params());
      const double wvar = priors.weight_sd * priors.weight_sd;
      const auto w = v.head(np);
      res.value += -0.5 * w.squaredNorm() / wvar -
                   static_cast<double>(np) *
                       (std::log(priors.weight_sd) + 0.5 * kLog2Pi);
      res.grad.head(np) -= w / wvar;

      const double hvar = priors.log_hyper_sd * priors.log_hyper_sd;
      const Eigen::Vector3d h =
          v.tail(3).array() - priors.log_hyper_mean;
      res.value += -0.5 * h.squaredNorm() / hvar -
                   3.0 * (std::log(priors.log_hyper_sd) + 0.5 * kLog2Pi);
      res.grad.tail(3) -= h / hvar;
    }
    return res;
  };
}

void save_model(const DklModel& model, const std::string& dir) {
  std::map<std::string, StoredArray> arrays;
  arrays["train_x"] = StoredArray::from_matrix(model.train_x);
  arrays["train_y"] = StoredArray::from_vector(model.train_y);
  arrays["input_shift"] = StoredArray::from_vector(model.input_tf.shift);
  arrays["input_scale"] = StoredArray::from_vector(model.input_tf.scale);
  Eigen::VectorXd flags(
      static_cast<Eigen::Index>(model.input_tf.constant.size()));
  for (Eigen::Index i = 0; i < flags.size(); ++i)
    flags(i) = model.input_tf.constant[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  arrays["input_constant"] = StoredArray::from_vector(flags);

  nlohmann::json meta;
  meta["kind"] = "dkl-model";
  meta["backend"] = backend_name(model.backend);
  meta["layer_sizes"] = model.layout.layer_sizes;
  meta["predict_thin"] = model.predict_thin;
  meta["input_norm"] = norm_mode_name(model.input_tf.mode);
  meta["target_norm"] = {{"mode", norm_mode_name(model.target_tf.mode)},
                         {"shift", model.target_tf.shift},
                         {"scale", model.target_tf.scale},
                         {"constant", model.target_tf.constant}};

  meta["n_members"] = model.members.size();
  for (std::size_t k = 0; k < model.members.size(); ++k) {
    const auto& m = model.members[k];
    const std::string tag = "member" + std::to_string(k);
    arrays[tag + ".params"] =
        StoredArray::from_vector(model.layout.flatten(m.net, m.hypers));
    Eigen::VectorXd traj(static_cast<Eigen::Index>(m.lml_trajectory.size()));
    for (Eigen::Index i = 0; i < traj.size(); ++i)
      traj(i) = m.lml_trajectory[static_cast<std::size_t>(i)];
    arrays[tag + ".lml"] = StoredArray::from_vector(traj);
  }

  if (model.backend == DklBackend::kBayes) {
    arrays["draws"] = StoredArray::from_matrix(model.posterior.draws);
    arrays["draw_logdensity"] =
        StoredArray::from_vector(model.posterior.log_density);
    meta["posterior"] = {
        {"mean_accept", model.posterior.mean_accept},
        {"chain_mean_accept", model.posterior.chain_mean_accept},
        {"divergences", model.posterior.divergences},
        {"divergence_warning", model.posterior.divergence_warning},
        {"step_sizes", model.posterior.step_sizes}};
  }
  write_container(dir, arrays, meta);
}

DklModel load_model(const std::string& dir) {
  ContainerData c = read_container(dir);
  auto need = [&](const std::string& name) -> const StoredArray& {
    auto it = c.arrays.find(name);
    if (it == c.arrays.end())
      throw IngestError("load_model: missing array '" + name + "'");
    return it->second;
  };
  if (!c.meta.contains("kind") || c.meta["kind"] != "dkl-model")
    throw IngestError("load_model: container is not a dkl model");

  DklModel model;
  try {
    model.backend = parse_backend(c.meta.at("backend").get<std::string>());
    model.layout.layer_sizes =
        c.meta.at("layer_sizes").get<std::vector<int>>();
    model.predict_thin = c.meta.at("predict_thin").get<int>();
    model.input_tf.mode =
        parse_norm_mode(c.meta.at("input_norm").get<std::string>());
    const auto& tn = c.meta.at("target_norm");
    model.target_tf.mode = parse_norm_mode(tn.at("mode").get<std::string>());
    model.target_tf.shift = tn.at("shift").get<double>();
    model.target_tf.scale = tn.at("scale").get<double>();
    model.target_tf.constant = tn.at("constant").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("load_model: bad manifest: " + std::string(e.what()));
  }

  model.train_x = need("train_x").as_matrix();
  model.train_y = need("train_y").as_vector();
  model.input_tf.shift = need("input_shift").as_vector();
  model.input_tf.scale = need("input_scale").as_vector();
  const Eigen::VectorXd flags = need("input_constant").as_vector();
  model.input_tf.constant.resize(static_cast<std::size_t>(flags.size()));
  for (Eigen::Index i = 0; i < flags.size(); ++i)
    model.input_tf.constant[static_cast<std::size_t>(i)] = flags(i) != 0.0;

  const auto n_members = c.meta.value("n_members", std::size_t{0});
  for (std::size_t k = 0; k < n_members; ++k) {
    const std::string tag = "member" + std::to_string(k);
    const Eigen::VectorXd flat = need(tag + ".params").as_vector();
    DklMember m;
    m.net = model.layout.net_from(flat);
    m.hypers = model.layout.hypers_from(flat);
    mlp_validate(m.net);
    const Eigen::VectorXd traj = need(tag + ".lml").as_vector();
    m.lml_trajectory.assign(traj.data(), traj.data() + traj.size());
    model.members.push_back(std::move(m));
  }

  if (model.backend == DklBackend::kBayes) {
    model.posterior.draws = need("draws").as_matrix();
    model.posterior.log_density = need("draw_logdensity").as_vector();
    if (model.posterior.draws.cols() !=
        static_cast<Eigen::Index>(model.layout.total_params()))
      throw IngestError("load_model: draw width does not match layout");
    if (model.posterior.draws.rows() != model.posterior.log_density.size())
      throw IngestError("load_model: draw/log-density count mismatch");
    if (c.meta.contains("posterior")) {
      const auto& p = c.meta["posterior"];
      model.posterior.mean_accept = p.value("mean_accept", 0.0);
      model.posterior.chain_mean_accept =
          p.value("chain_mean_accept", std::vector<double>{});
      model.posterior.divergences = p.value("divergences", 0L);
      model.posterior.divergence_warning =
          p.value("divergence_warning", false);
      model.posterior.step_sizes = p.value("step_sizes", std::vector<double>{});
    }
  }

  if (model.train_x.rows() == 0)
    throw IngestError("load_model: model retains no training data");
  if (model.backend == DklBackend::kSingle && model.members.size() != 1)
    throw IngestError("load_model: single backend requires exactly 1 member");
  if (model.backend == DklBackend::kEnsemble && model.members.size() < 2)
    throw IngestError("load_model: ensemble backend requires >= 2 members");
  if (model.backend == DklBackend::kBayes &&
      model.posterior.draws.rows() == 0)
    throw IngestError("load_model: bayes backend requires posterior draws");
  return model;
}

}  // namespace dklearn
