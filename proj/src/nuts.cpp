#include "dklearn/nuts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "dklearn/errors.hpp"
#include "dklearn/parallel.hpp"

namespace dklearn {
namespace {

constexpr double kDeltaMax = 1000.0;  // divergence threshold on the joint

bool finite_point(const PhasePoint& z) {
  return std::isfinite(z.logp) && z.grad.allFinite() && z.q.allFinite();
}

double joint_energy(const PhasePoint& z) {
  return z.logp - 0.5 * z.p.squaredNorm();
}

// Nesterov dual averaging on log step size (gamma=0.05, t0=10, kappa=0.75,
// mu = log(10 eps0)).
class DualAverage {
 public:
  DualAverage(double eps0, double target)
      : mu_(std::log(10.0 * eps0)), target_(target) {}

  double update(double accept_prob) {
    ++m_;
    const double eta = 1.0 / (static_cast<double>(m_) + t0_);
    hbar_ = (1.0 - eta) * hbar_ + eta * (target_ - accept_prob);
    const double log_eps =
        mu_ - std::sqrt(static_cast<double>(m_)) / gamma_ * hbar_;
    const double w = std::pow(static_cast<double>(m_), -kappa_);
    log_eps_bar_ = w * log_eps + (1.0 - w) * log_eps_bar_;
    return std::exp(log_eps);
  }

  double adapted() const { return std::exp(log_eps_bar_); }

 private:
  double mu_;
  double target_;
  double gamma_ = 0.05;
  double t0_ = 10.0;
  double kappa_ = 0.75;
  double hbar_ = 0.0;
  double log_eps_bar_ = 0.0;
  long m_ = 0;
};

double find_reasonable_epsilon(const LogDensityFn& target, const PhasePoint& z0,
                               Rng& rng) {
  PhasePoint z = z0;
  z.p.resize(z.q.size());
  for (Eigen::Index i = 0; i < z.p.size(); ++i) z.p(i) = rng.normal();
  const double joint0 = joint_energy(z);

  double eps = 1.0;
  auto ratio_at = [&](double e) {
    PhasePoint z1 = leapfrog(target, z, e);
    if (z1.divergent) return 0.0;
    const double r = std::exp(joint_energy(z1) - joint0);
    return std::isfinite(r) ? r : 0.0;
  };
  double ratio = ratio_at(eps);
  const double dir = ratio > 0.5 ? 1.0 : -1.0;
  for (int it = 0; it < 60; ++it) {
    if (dir > 0.0 && ratio <= 0.5) break;
    if (dir < 0.0 && ratio >= 0.5) break;
    eps *= dir > 0.0 ? 2.0 : 0.5;
    if (eps > 1e6 || eps < 1e-10) break;
    ratio = ratio_at(eps);
  }
  return eps;
}

struct TreeResult {
  PhasePoint minus;
  PhasePoint plus;
  Eigen::VectorXd q_prop;
  Eigen::VectorXd grad_prop;
  double logp_prop = 0.0;
  long n = 0;        // slice-admissible leaves
  bool cont = false;  // subtree valid (no divergence, no u-turn)
  double alpha_sum = 0.0;
  long n_alpha = 0;
  long divergences = 0;
};

bool no_uturn(const PhasePoint& minus, const PhasePoint& plus) {
  double along_minus = 0.0;
  double along_plus = 0.0;
  for (Eigen::Index i = 0; i < minus.q.size(); ++i) {
    const double dq = plus.q(i) - minus.q(i);
    along_minus += dq * minus.p(i);
    along_plus += dq * plus.p(i);
  }
  return along_minus >= 0.0 && along_plus >= 0.0;
}

TreeResult build_tree(const LogDensityFn& target, const PhasePoint& from,
                      double v_eps, int depth, double joint0, double log_u,
                      Rng& rng) {
  if (depth == 0) {
    TreeResult t;
    t.plus = leapfrog(target, from, v_eps);
    const double joint1 = t.plus.divergent
                              ? -std::numeric_limits<double>::infinity()
                              : joint_energy(t.plus);
    const bool divergent = t.plus.divergent || log_u - joint1 > kDeltaMax;
    t.n = (!divergent && log_u <= joint1) ? 1 : 0;
    t.cont = !divergent;
    t.divergences = divergent ? 1 : 0;
    double a = std::exp(joint1 - joint0);
    if (!std::isfinite(a)) a = 0.0;
    t.alpha_sum = std::min(1.0, a);
    t.n_alpha = 1;
    if (t.n > 0) {
      t.q_prop = t.plus.q;
      t.grad_prop = t.plus.grad;
      t.logp_prop = t.plus.logp;
    }
    t.minus = t.plus;
    return t;
  }

  TreeResult t1 = build_tree(target, from, v_eps, depth - 1, joint0, log_u, rng);
  if (!t1.cont) return t1;
  const PhasePoint& edge = v_eps < 0.0 ? t1.minus : t1.plus;
  TreeResult t2 = build_tree(target, edge, v_eps, depth - 1, joint0, log_u, rng);

  TreeResult t;
  t.minus = v_eps < 0.0 ? std::move(t2.minus) : std::move(t1.minus);
  t.plus = v_eps < 0.0 ? std::move(t1.plus) : std::move(t2.plus);
  const long total = t1.n + t2.n;
  if (t2.n > 0 &&
      rng.uniform() * static_cast<double>(total) < static_cast<double>(t2.n)) {
    t.q_prop = std::move(t2.q_prop);
    t.grad_prop = std::move(t2.grad_prop);
    t.logp_prop = t2.logp_prop;
  } else {
    t.q_prop = std::move(t1.q_prop);
    t.grad_prop = std::move(t1.grad_prop);
    t.logp_prop = t1.logp_prop;
  }
  t.n = total;
  t.cont = t2.cont && no_uturn(t.minus, t.plus);
  t.alpha_sum = t1.alpha_sum + t2.alpha_sum;
  t.n_alpha = t1.n_alpha + t2.n_alpha;
  t.divergences = t1.divergences + t2.divergences;
  return t;
}

struct ChainResult {
  Eigen::MatrixXd draws;
  Eigen::VectorXd log_density;
  double mean_accept = 0.0;
  long divergences = 0;
  double step_size = 0.0;
};

ChainResult run_chain(const LogDensityFn& target, const Eigen::VectorXd& init,
                      const HmcConfig& cfg, std::uint64_t chain_seed) {
  Rng rng(chain_seed);
  const Eigen::Index dim = init.size();

  LogDensityResult f0 = target(init);
  if (!std::isfinite(f0.value) || !f0.grad.allFinite())
    throw NumericError("nuts_sample: log-density not finite at init");

  PhasePoint cur;
  cur.q = init;
  cur.logp = f0.value;
  cur.grad = std::move(f0.grad);

  double eps = find_reasonable_epsilon(target, cur, rng);
  DualAverage da(eps, cfg.target_accept);

  ChainResult out;
  out.draws.resize(cfg.samples, dim);
  out.log_density.resize(cfg.samples);
  double accept_total = 0.0;

  const int total_iters = cfg.warmup_steps + cfg.samples;
  for (int m = 0; m < total_iters; ++m) {
    PhasePoint z = cur;
    z.p.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) z.p(i) = rng.normal();
    const double joint0 = joint_energy(z);
    const double log_u = joint0 - rng.exponential();

    PhasePoint minus = z;
    PhasePoint plus = z;
    Eigen::VectorXd q_prop = z.q;
    Eigen::VectorXd grad_prop = z.grad;
    double logp_prop = z.logp;
    long n = 1;
    bool cont = true;
    bool moved = false;
    double alpha_sum = 0.0;
    long n_alpha = 0;
    long divergences = 0;

    for (int depth = 0; cont && depth < cfg.max_tree_depth; ++depth) {
      const double v = rng.uniform() < 0.5 ? -1.0 : 1.0;
      const PhasePoint& edge = v < 0.0 ? minus : plus;
      TreeResult t =
          build_tree(target, edge, v * eps, depth, joint0, log_u, rng);
      if (v < 0.0)
        minus = std::move(t.minus);
      else
        plus = std::move(t.plus);
      if (t.cont && t.n > 0 &&
          rng.uniform() * static_cast<double>(n) < static_cast<double>(t.n)) {
        q_prop = std::move(t.q_prop);
        grad_prop = std::move(t.grad_prop);
        logp_prop = t.logp_prop;
        moved = true;
      }
      n += t.n;
      alpha_sum += t.alpha_sum;
      n_alpha += t.n_alpha;
      divergences += t.divergences;
      cont = t.cont && no_uturn(minus, plus);
    }

    if (moved) {
      cur.q = std::move(q_prop);
      cur.logp = logp_prop;
      cur.grad = std::move(grad_prop);
    }

    const double accept_stat =
        n_alpha > 0 ? alpha_sum / static_cast<double>(n_alpha) : 0.0;
    if (m < cfg.warmup_steps) {
      eps = da.update(accept_stat);
      if (m + 1 == cfg.warmup_steps) eps = da.adapted();
    } else {
      const int k = m - cfg.warmup_steps;
      out.draws.row(k) = cur.q.transpose();
      out.log_density(k) = cur.logp;
      accept_total += accept_stat;
      out.divergences += divergences;
    }
  }

  out.mean_accept = accept_total / static_cast<double>(cfg.samples);
  out.step_size = eps;
  return out;
}

}  // namespace

void HmcConfig::validate() const {
  if (warmup_steps < 1) throw ConfigError("HmcConfig: warmup_steps must be >= 1");
  if (samples < 1) throw ConfigError("HmcConfig: samples must be >= 1");
  if (chains < 1) throw ConfigError("HmcConfig: chains must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw ConfigError("HmcConfig: target_accept must lie in (0,1)");
  if (max_tree_depth < 1 || max_tree_depth > 12)
    throw ConfigError("HmcConfig: max_tree_depth must lie in [1,12]");
}

PhasePoint leapfrog(const LogDensityFn& target, const PhasePoint& z,
                    double eps) {
  PhasePoint out;
  out.p = z.p + 0.5 * eps * z.grad;
  out.q = z.q + eps * out.p;
  LogDensityResult f = target(out.q);
  out.logp = f.value;
  out.grad = std::move(f.grad);
  if (!finite_point(out)) {
    out.divergent = true;
    return out;
  }
  out.p += 0.5 * eps * out.grad;
  return out;
}

SampleSet nuts_sample(const LogDensityFn& target, const Eigen::VectorXd& init,
                      const HmcConfig& config) {
  config.validate();
  if (init.size() == 0) throw ShapeError("nuts_sample: empty init vector");

  std::vector<ChainResult> results(static_cast<std::size_t>(config.chains));
  for_each_index(static_cast<std::size_t>(config.chains),
                 config.parallel_chains, [&](std::size_t c) {
                   const std::uint64_t seed = derive_seed(
                       config.seed, "nuts-chain", static_cast<std::uint64_t>(c));
                   results[c] = run_chain(target, init, config, seed);
                 });

  SampleSet set;
  const Eigen::Index total =
      static_cast<Eigen::Index>(config.chains) * config.samples;
  set.draws.resize(total, init.size());
  set.log_density.resize(total);
  double accept = 0.0;
  for (int c = 0; c < config.chains; ++c) {
    const auto& r = results[static_cast<std::size_t>(c)];
    set.draws.middleRows(static_cast<Eigen::Index>(c) * config.samples,
                         config.samples) = r.draws;
    set.log_density.segment(static_cast<Eigen::Index>(c) * config.samples,
                            config.samples) = r.log_density;
    set.chain_mean_accept.push_back(r.mean_accept);
    set.step_sizes.push_back(r.step_size);
    set.divergences += r.divergences;
    accept += r.mean_accept;
  }
  set.mean_accept = accept / static_cast<double>(config.chains);
  set.divergence_warning =
      static_cast<double>(set.divergences) > 0.1 * static_cast<double>(total);
  return set;
}

}  // namespace dklearn
