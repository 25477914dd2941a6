#include "hbsimex/hb_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "hbsimex/error.hpp"
#include "hbsimex/linalg.hpp"
#include "hbsimex/measurement_error.hpp"
#include "hbsimex/parallel.hpp"

namespace hbsimex {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::uint64_t label_hash(const std::string& label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool accept(double log_ratio, bool greedy, Rng& rng, double& prob) {
  prob = acceptance_probability(log_ratio, greedy);
  if (greedy) return prob >= 1.0;
  if (prob >= 1.0) return true;
  return rng.uniform() < prob;
}

}  // namespace

void FixedHypers::validate() const {
  const int p = dim();
  if (p < 1) throw Error(ErrorCode::config, "sampler needs at least one slope");
  if (sigma_e.cols() != p || sigma_0.rows() != p || sigma_0.cols() != p)
    throw Error(ErrorCode::config, "Sigma_E and Sigma_0 must be P x P");
  if (!(nu > p + 1)) throw Error(ErrorCode::config, "nu must exceed P + 1");
  if (!(tau > 0) || !(s > 0) || !(t > 0) || !(u > 0) || !(v > 0))
    throw Error(ErrorCode::parameter, "tau, s, t, u, v must be positive");
  if (!(g >= 1)) throw Error(ErrorCode::config, "g must be at least 1");
  if (!(prior_mean_C > 0) || !(prior_mean_gamma > 0) || !std::isfinite(prior_mean_C) ||
      !std::isfinite(prior_mean_gamma))
    throw Error(ErrorCode::config, "prior means of C and gamma must be positive");
  if (!is_positive_definite(sigma_e))
    throw Error(ErrorCode::numerical, "Sigma_E is not positive definite");
}

FixedHypers default_fixed_hypers(const GlmFit& glm, std::size_t total_records, double mom_gamma,
                                 double alpha) {
  const auto p = glm.beta_hat.size() - 1;
  if (p < 1) throw Error(ErrorCode::config, "GLM has no slopes");
  FixedHypers fixed;
  fixed.alpha = alpha;
  fixed.nu = (alpha + 1.0) + (static_cast<double>(p) + 1.0) + 1.0;
  fixed.tau = alpha + 1.0;
  fixed.sigma_0 = glm.cov_beta.bottomRightCorner(p, p);
  fixed.sigma_e = fixed.sigma_0.diagonal().asDiagonal();
  fixed.g = static_cast<double>(total_records);
  fixed.prior_mean_C = std::exp(glm.beta_hat(0));
  fixed.prior_mean_gamma = mom_gamma;
  return fixed;
}

GammaRateVariant parse_gamma_rate_variant(const std::string& name) {
  if (name == "gamma-sum") return GammaRateVariant::gamma_sum;
  if (name == "c-sum") return GammaRateVariant::c_sum;
  throw Error(ErrorCode::config, "unknown gamma rate variant '" + name + "'");
}

std::string to_string(GammaRateVariant v) {
  return v == GammaRateVariant::gamma_sum ? "gamma-sum" : "c-sum";
}

GammaShapeRate adaptive_gamma_prior(double concentration, int h, double running_sum) {
  if (!(running_sum > 0) || h < 1)
    throw Error(ErrorCode::parameter, "adaptive prior needs h >= 1 and a positive running sum");
  return {concentration, concentration * static_cast<double>(h) / running_sum};
}

double gamma_log_kernel(double x, GammaShapeRate prior) {
  return (prior.shape - 1.0) * std::log(x) - prior.rate * x;
}

CohortData::CohortData(Eigen::MatrixXd x_in, std::vector<std::int64_t> y_in)
    : x(std::move(x_in)), y(std::move(y_in)), ratio_sum(y) {
  yd = Eigen::ArrayXd(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) {
    yd(static_cast<Eigen::Index>(i)) = static_cast<double>(y[i]);
    lgamma_y1_sum += std::lgamma(static_cast<double>(y[i]) + 1.0);
  }
}

std::vector<CohortData> split_by_cohort(const DesignMatrix& design, const CountDataset& dataset) {
  const auto sizes = dataset.cohort_sizes();
  const auto p = design.cols() - 1;
  std::vector<Eigen::MatrixXd> xs;
  std::vector<std::vector<std::int64_t>> ys(sizes.size());
  for (auto s : sizes) xs.emplace_back(static_cast<Eigen::Index>(s), p);
  std::vector<Eigen::Index> fill(sizes.size(), 0);
  for (std::size_t i = 0; i < dataset.n(); ++i) {
    const auto j = static_cast<std::size_t>(dataset.cohort()[i]);
    xs[j].row(fill[j]++) = design.rows.row(static_cast<Eigen::Index>(i)).tail(p);
    ys[j].push_back(dataset.y()[i]);
  }
  std::vector<CohortData> out;
  out.reserve(sizes.size());
  for (std::size_t j = 0; j < sizes.size(); ++j) out.emplace_back(std::move(xs[j]), std::move(ys[j]));
  return out;
}

double cohort_loglik(const CohortData& data, const Eigen::VectorXd& beta, double C, double gamma) {
  if (!(C > 0) || !(gamma > 0) || !std::isfinite(C) || !std::isfinite(gamma)) return kNegInf;
  if (data.n() == 0) return 0.0;
  const Eigen::VectorXd lin = data.x * beta;
  const double log_c = std::log(C);
  // sum_i log Gamma(y_i + gamma) - log Gamma(gamma) comes from tail counts;
  // the remaining terms are per record.
  double ll = data.ratio_sum(gamma) - data.lgamma_y1_sum;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const double log_eta = log_c + lin(static_cast<Eigen::Index>(i));
    const double eta = std::exp(log_eta);
    if (!(eta > 0) || !std::isfinite(eta)) return kNegInf;
    ll += -gamma * std::log1p(eta / gamma) +
          data.yd(static_cast<Eigen::Index>(i)) * (log_eta - std::log(gamma + eta));
  }
  return std::isfinite(ll) ? ll : kNegInf;
}

double acceptance_probability(double log_ratio, bool greedy) {
  if (std::isnan(log_ratio)) return 0.0;
  if (greedy) return log_ratio >= 0.0 ? 1.0 : 0.0;
  return log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
}

Eigen::MatrixXd lambda_posterior_scale(const Eigen::VectorXd& beta, const Eigen::VectorXd& mu,
                                       const FixedHypers& fixed) {
  const Eigen::VectorXd d = beta - mu;
  return fixed.tau * fixed.sigma_e + d * d.transpose();
}

Eigen::MatrixXd sample_Lambda(const HierParams& theta, const HyperParams& delta,
                              const FixedHypers& fixed, Rng& rng) {
  const Eigen::MatrixXd scale = lambda_posterior_scale(theta.beta, delta.mu, fixed);
  return sample_inverse_wishart(fixed.nu + static_cast<double>(fixed.dim()), scale, rng);
}

MuWeights mu_weights(double g) {
  const double inv_g = 1.0 / g;
  return {inv_g / (inv_g + 1.0), 1.0 / (inv_g + 1.0)};
}

Eigen::VectorXd sample_mu(const HierParams& theta, const Eigen::MatrixXd& Lambda,
                          const FixedHypers& fixed, const Eigen::VectorXd& glm_slopes, Rng& rng) {
  const auto w = mu_weights(fixed.g);
  const Eigen::VectorXd mean = w.on_glm * glm_slopes + w.on_beta * theta.beta;
  return sample_mvn(mean, cholesky_lower(w.on_beta * Lambda), rng);
}

MhOutcome sample_beta_mh(const CohortData& data, HierParams& theta, const HyperParams& delta,
                         const Eigen::MatrixXd& proposal_chol, double scale, bool greedy,
                         Rng& rng, double& loglik) {
  const Eigen::MatrixXd prior_chol = cholesky_lower(delta.Lambda);
  Eigen::VectorXd z(theta.beta.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  const Eigen::VectorXd step = proposal_chol.triangularView<Eigen::Lower>() * z;
  const Eigen::VectorXd proposal = theta.beta + scale * step;

  const double proposal_ll = cohort_loglik(data, proposal, theta.C, theta.gamma);
  const double current = loglik + mvn_logpdf(theta.beta, delta.mu, prior_chol);
  const double candidate = proposal_ll + mvn_logpdf(proposal, delta.mu, prior_chol);
  double prob = 0.0;
  if (!std::isfinite(candidate)) return {false, 0.0};
  const bool ok = accept(candidate - current, greedy, rng, prob);
  if (ok) {
    theta.beta = proposal;
    loglik = proposal_ll;
  }
  return {ok, prob};
}

MhOutcome sample_beta_mh(const CohortData& data, HierParams& theta, const HyperParams& delta,
                         const Eigen::MatrixXd& proposal_chol, double scale, bool greedy,
                         Rng& rng) {
  double loglik = cohort_loglik(data, theta.beta, theta.C, theta.gamma);
  return sample_beta_mh(data, theta, delta, proposal_chol, scale, greedy, rng, loglik);
}

double sample_k(const FixedHypers& fixed, Rng& rng) {
  if (!(fixed.s > 0) || !(fixed.t > 0))
    throw Error(ErrorCode::parameter, "Gamma(s, t) needs positive shape and scale");
  return rng.gamma(fixed.s, fixed.t);
}

double sample_a(double k, double gamma_prev, const FixedHypers& fixed, Rng& rng) {
  const double shape = k + fixed.u;
  const double scale = gamma_prev + fixed.v;
  if (!(shape > 0) || !(scale > 0))
    throw Error(ErrorCode::parameter, "Gamma(k + u, gamma + v) needs positive parameters");
  return rng.gamma(shape, scale);
}

MhOutcome sample_C_mh(const CohortData& data, HierParams& theta, GammaShapeRate prior,
                      double scale, bool greedy, Rng& rng, double& loglik) {
  const double log_c = std::log(theta.C);
  const double log_prop = log_c + scale * rng.normal();
  const double proposal = std::exp(log_prop);
  if (!(proposal > 0) || !std::isfinite(proposal)) return {false, 0.0};
  const double proposal_ll = cohort_loglik(data, theta.beta, proposal, theta.gamma);
  const double current = loglik + gamma_log_kernel(theta.C, prior) + log_c;
  const double candidate = proposal_ll + gamma_log_kernel(proposal, prior) + log_prop;
  if (!std::isfinite(candidate)) return {false, 0.0};
  double prob = 0.0;
  const bool ok = accept(candidate - current, greedy, rng, prob);
  if (ok) {
    theta.C = proposal;
    loglik = proposal_ll;
  }
  return {ok, prob};
}

MhOutcome sample_C_mh(const CohortData& data, HierParams& theta, GammaShapeRate prior,
                      double scale, bool greedy, Rng& rng) {
  double loglik = cohort_loglik(data, theta.beta, theta.C, theta.gamma);
  return sample_C_mh(data, theta, prior, scale, greedy, rng, loglik);
}

MhOutcome sample_gamma_mh(const CohortData& data, HierParams& theta, GammaShapeRate prior,
                          double scale, bool greedy, Rng& rng, double& loglik) {
  const double log_g = std::log(theta.gamma);
  const double log_prop = log_g + scale * rng.normal();
  const double proposal = std::exp(log_prop);
  if (!(proposal > 0) || !std::isfinite(proposal)) return {false, 0.0};
  const double proposal_ll = cohort_loglik(data, theta.beta, theta.C, proposal);
  const double current = loglik + gamma_log_kernel(theta.gamma, prior) + log_g;
  const double candidate = proposal_ll + gamma_log_kernel(proposal, prior) + log_prop;
  if (!std::isfinite(candidate)) return {false, 0.0};
  double prob = 0.0;
  const bool ok = accept(candidate - current, greedy, rng, prob);
  if (ok) {
    theta.gamma = proposal;
    loglik = proposal_ll;
  }
  return {ok, prob};
}

MhOutcome sample_gamma_mh(const CohortData& data, HierParams& theta, GammaShapeRate prior,
                          double scale, bool greedy, Rng& rng) {
  double loglik = cohort_loglik(data, theta.beta, theta.C, theta.gamma);
  return sample_gamma_mh(data, theta, prior, scale, greedy, rng, loglik);
}

ChainInit default_chain_init(const GlmFit& glm, const FixedHypers& fixed,
                             std::size_t total_records) {
  const auto p = glm.beta_hat.size() - 1;
  ChainInit init;
  init.glm_slopes = glm.beta_hat.tail(p);
  init.theta.beta = init.glm_slopes;
  init.theta.C = fixed.prior_mean_C;
  init.theta.gamma = fixed.prior_mean_gamma;
  init.delta.mu = init.glm_slopes;
  init.delta.Lambda = fixed.sigma_0;
  init.delta.k = fixed.s * fixed.t;
  init.delta.a = fixed.u * fixed.v;
  init.proposal_cov = glm.cov_beta.bottomRightCorner(p, p);
  init.total_records = total_records;
  return init;
}

std::size_t Chain::slope_count() const {
  for (const auto& c : cohorts)
    if (!c.draws.empty()) return static_cast<std::size_t>(c.draws.front().beta.size());
  return 0;
}

namespace {

CohortTrace run_cohort(const CohortData& data, const FixedHypers& fixed, const ChainInit& init,
                       const SamplerOptions& options, std::uint64_t seed) {
  Rng rng(seed);
  const auto p = init.theta.beta.size();
  HierParams theta = init.theta;
  HyperParams delta = init.delta;
  double sum_c = theta.C;
  double sum_gamma = theta.gamma;

  const double cohort_share =
      static_cast<double>(std::max<std::size_t>(init.total_records, 1)) /
      static_cast<double>(std::max<std::size_t>(data.n(), 1));
  const Eigen::MatrixXd proposal_chol = cholesky_lower(init.proposal_cov * cohort_share);

  CohortTrace trace;
  trace.log_scale = {std::log(2.38 / std::sqrt(static_cast<double>(p))), std::log(0.5),
                     std::log(0.5)};
  std::array<int, 3> window_accepts{};
  int window_length = 0;
  const auto kept = static_cast<std::size_t>(options.H - options.burn_in);
  trace.draws.reserve(kept);
  trace.hyper_draws.reserve(kept);

  double loglik = cohort_loglik(data, theta.beta, theta.C, theta.gamma);
  for (int h = 1; h <= options.H; ++h) {
    delta.Lambda = sample_Lambda(theta, delta, fixed, rng);
    delta.mu = sample_mu(theta, delta.Lambda, fixed, init.glm_slopes, rng);
    const auto beta_step = sample_beta_mh(data, theta, delta, proposal_chol,
                                          std::exp(trace.log_scale[block_beta]),
                                          options.greedy_accept, rng, loglik);
    delta.k = sample_k(fixed, rng);
    delta.a = sample_a(delta.k, theta.gamma, fixed, rng);
    const auto c_step = sample_C_mh(data, theta, adaptive_gamma_prior(delta.k, h, sum_c),
                                    std::exp(trace.log_scale[block_C]), options.greedy_accept, rng,
                                    loglik);
    const double rate_sum = options.gamma_rate == GammaRateVariant::gamma_sum ? sum_gamma : sum_c;
    const auto g_step =
        sample_gamma_mh(data, theta, adaptive_gamma_prior(delta.a, h, rate_sum),
                        std::exp(trace.log_scale[block_gamma]), options.greedy_accept, rng,
                        loglik);
    sum_c += theta.C;
    sum_gamma += theta.gamma;

    const std::array<MhOutcome, 3> steps{beta_step, c_step, g_step};
    for (int b = 0; b < 3; ++b) {
      ++trace.accept[b].proposed;
      if (steps[b].accepted) {
        ++trace.accept[b].accepted;
        ++window_accepts[b];
      }
      if (h <= options.burn_in) {
        const double gain = std::pow(static_cast<double>(h), -0.6);
        trace.log_scale[b] = std::clamp(
            trace.log_scale[b] + gain * (steps[b].accept_prob - options.target_accept), -12.0, 3.0);
      }
    }
    if (++window_length == options.stuck_window) {
      for (int b = 0; b < 3; ++b)
        if (window_accepts[b] == 0) trace.stuck[b] = true;
      window_accepts = {};
      window_length = 0;
    }

    if (h > options.burn_in) {
      trace.draws.push_back(theta);
      trace.hyper_draws.push_back(delta);
    }
  }
  return trace;
}

}  // namespace

Chain run_chain_on_design(const CountDataset& dataset, const DesignMatrix& design,
                          const FixedHypers& fixed, const ChainInit& init,
                          const SamplerOptions& options, std::uint64_t seed) {
  fixed.validate();
  if (options.burn_in < 0 || options.H < options.burn_in)
    throw Error(ErrorCode::config, "sampler needs 0 <= burn_in <= H");
  if (init.theta.beta.size() != fixed.dim() || init.delta.mu.size() != fixed.dim() ||
      init.glm_slopes.size() != fixed.dim() || design.cols() - 1 != fixed.dim())
    throw Error(ErrorCode::config, "initial state does not match the design dimension");
  if (!(init.theta.C > 0) || !(init.theta.gamma > 0) || !init.theta.beta.allFinite() ||
      !std::isfinite(init.theta.C) || !std::isfinite(init.theta.gamma))
    throw Error(ErrorCode::config, "initial state must be finite with positive C and gamma");

  const auto cohorts = split_by_cohort(design, dataset);
  Chain chain;
  chain.seed = seed;
  chain.H = options.H;
  chain.burn_in = options.burn_in;
  chain.cohorts.resize(cohorts.size());
  parallel_for(cohorts.size(), options.threads, [&](std::size_t j) {
    const auto cohort_seed =
        derive_seed(seed, {label_hash(dataset.cohort_labels()[j])});
    chain.cohorts[j] = run_cohort(cohorts[j], fixed, init, options, cohort_seed);
  });

  static constexpr const char* kBlockNames[] = {"beta", "C", "gamma"};
  for (std::size_t j = 0; j < chain.cohorts.size(); ++j)
    for (int b = 0; b < 3; ++b)
      if (chain.cohorts[j].stuck[b]) {
        std::ostringstream msg;
        msg << "stuck chain: cohort '" << dataset.cohort_labels()[j] << "' block "
            << kBlockNames[b] << " accepted nothing over " << options.stuck_window
            << " iterations";
        chain.warnings.push_back(msg.str());
      }
  return chain;
}

Chain run_chain(const CountDataset& dataset, const DesignMatrix& design, const FixedHypers& fixed,
                const ChainInit& init, double lambda_t, double sigma2_eps,
                const SamplerOptions& options, std::uint64_t seed) {
  if (design.error_prone_column < 1)
    throw Error(ErrorCode::config, "design has no error-prone column");
  DesignMatrix contaminated = design;
  contaminated.rows.col(design.error_prone_column) =
      contaminate(design.rows.col(design.error_prone_column), lambda_t, sigma2_eps,
                  derive_seed(seed, {0x636f6e74ULL}));
  Chain chain = run_chain_on_design(dataset, contaminated, fixed, init, options, seed);
  chain.lambda_used = lambda_t;
  return chain;
}

Eigen::VectorXd posterior_summary_vector(const Chain& chain) {
  const auto p = static_cast<Eigen::Index>(chain.slope_count());
  const auto per = p + 2;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(per * static_cast<Eigen::Index>(chain.cohorts.size()));
  for (std::size_t j = 0; j < chain.cohorts.size(); ++j) {
    const auto& draws = chain.cohorts[j].draws;
    if (draws.empty()) continue;
    auto block = out.segment(static_cast<Eigen::Index>(j) * per, per);
    for (const auto& d : draws) {
      block.head(p) += d.beta;
      block(p) += std::log(d.C);
      block(p + 1) += std::log(d.gamma);
    }
    block /= static_cast<double>(draws.size());
  }
  return out;
}

std::vector<std::string> posterior_summary_names(const Chain& chain,
                                                 const std::vector<std::string>& slope_names) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < chain.cohorts.size(); ++j) {
    const std::string prefix = "cohort" + std::to_string(j + 1) + ".";
    for (const auto& s : slope_names) names.push_back(prefix + s);
    names.push_back(prefix + "logC");
    names.push_back(prefix + "loggamma");
  }
  return names;
}

}  // namespace hbsimex
