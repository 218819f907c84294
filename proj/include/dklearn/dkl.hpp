#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dklearn/gp.hpp"
#include "dklearn/mlp.hpp"
#include "dklearn/normalize.hpp"
#include "dklearn/nuts.hpp"

namespace dklearn {

// Feature-extractor architecture: input -> hidden... -> latent.
struct DklArch {
  std::vector<int> hidden = {64, 32};
  int latent = 2;

  std::vector<int> layer_sizes(int input_dim) const;
};

struct TrainConfig {
  int steps = 500;
  double lr = 1e-3;
  NormMode input_norm = NormMode::kStandardize;
  NormMode target_norm = NormMode::kStandardize;
  // Start point of the joint ascent; the kernel scale/lengthscale start at
  // the prior median, the noise term below it.
  double init_alpha = 1.0;
  double init_lengthscale = 1.0;
  double init_noise = 0.1;

  GpHyperparams init_hypers() const;
};

struct HmcFitConfig {
  // Reduced tree-depth cap: these posteriors adapt to deep trajectories,
  // and capping trades a little mixing per iteration for a hard bound on
  // gradient evaluations.
  HmcConfig hmc{2000, 2000, 1, 0.8, 6};
  int warm_start_steps = 100;  // Adam steps before sampling starts
  int predict_thin = 100;      // draws used by predict; <=0 keeps all
  TrainConfig warm_start;      // steps field ignored (warm_start_steps wins)
};

// Independent normal priors in the unconstrained space: N(0, weight_sd) on
// every net parameter and N(log_hyper_mean, log_hyper_sd) on each log
// hyperparameter, the latter being LogNormal on the constrained scale with
// the change-of-variables Jacobian already absorbed.
struct DklPriors {
  double weight_sd = 1.0;
  double log_hyper_mean = 0.0;
  double log_hyper_sd = 1.0;
};

// Flat parameter vector layout: net parameters in canonical mlp order,
// then [log_alpha, log_lengthscale, log_noise].
struct ParamLayout {
  std::vector<int> layer_sizes;

  std::size_t net_params() const { return mlp_param_count(layer_sizes); }
  std::size_t total_params() const { return net_params() + 3; }
  Eigen::VectorXd flatten(const MlpParams& net,
                          const GpHyperparams& hypers) const;
  MlpParams net_from(const Eigen::VectorXd& flat) const;
  GpHyperparams hypers_from(const Eigen::VectorXd& flat) const;
};

enum class DklBackend { kSingle, kEnsemble, kBayes };

std::string backend_name(DklBackend backend);
DklBackend parse_backend(const std::string& name);

struct DklMember {
  MlpParams net;
  GpHyperparams hypers;
  std::vector<double> lml_trajectory;  // LML at the start of each step
};

struct DklModel {
  DklBackend backend = DklBackend::kSingle;
  std::vector<DklMember> members;  // single: 1, ensemble: >=2, bayes: empty
  SampleSet posterior;             // bayes only
  ParamLayout layout;
  Eigen::MatrixXd train_x;  // normalized
  Eigen::VectorXd train_y;  // normalized
  ColumnTransform input_tf;
  ScalarTransform target_tf;
  int predict_thin = 100;
};

// Joint MLE: Adam ascent on the marginal likelihood over net weights and
// log kernel hyperparameters, full batch.  Deterministic given seed.
// Numeric failures carry the training step index.
DklModel fit_mle(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                 const DklArch& arch, const TrainConfig& config,
                 std::uint64_t seed);

// n_models independent MLE fits from seeds derived as (seed, member index);
// members share the normalization fitted on the full data.  Assembly is
// order-stable whether or not members run in parallel.
DklModel fit_ensemble(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                      const DklArch& arch, const TrainConfig& config,
                      int n_models, std::uint64_t seed, bool parallel = false);

// Fully Bayesian treatment: NUTS over the flat parameter vector with
// target = marginal likelihood + priors, started from a short MLE warm
// start.
DklModel fit_hmc(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                 const DklArch& arch, const DklPriors& priors,
                 const HmcFitConfig& config, std::uint64_t seed);

// Posterior predictive at xstar (original feature units), reported in
// original target units.  Ensemble and bayes backends combine members or
// thinned draws by the law of total variance; member-mean spread uses the
// population variance.
PosteriorPredictive predict(const DklModel& model, const Eigen::MatrixXd& xstar);

enum class EmbedSource { kDefault, kFirstMember, kPosteriorMean };

struct Embedding {
  Eigen::MatrixXd z;
  std::string source;  // "member-0" or "posterior-mean"
};

// Latent coordinates of x under the trained feature extractor.  kDefault
// resolves to the first member for single/ensemble and the posterior mean
// for bayes.
Embedding embed(const DklModel& model, const Eigen::MatrixXd& x,
                EmbedSource source = EmbedSource::kDefault);

// Arithmetic mean of the predictive variance entries.
double mean_uncertainty(const PosteriorPredictive& pred);

// Differentiable log target over a flat parameter vector for the sampler.
// Returns -inf (zero gradient) instead of throwing when a proposed point
// is numerically unusable, so the sampler treats it as a divergence.  The
// two switches exist so tests can sample the prior alone.
struct DklTargetOptions {
  bool include_likelihood = true;
  bool include_prior = true;
};

LogDensityFn make_dkl_target(const Eigen::MatrixXd& xnorm,
                             const Eigen::VectorXd& ynorm,
                             const ParamLayout& layout, const DklPriors& priors,
                             const DklTargetOptions& options = {});

// Model container round-trip (manifest + flat f8 arrays).
void save_model(const DklModel& model, const std::string& dir);
DklModel load_model(const std::string& dir);

}  // namespace dklearn
