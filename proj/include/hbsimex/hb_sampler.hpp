#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hbsimex/count_glm.hpp"
#include "hbsimex/data.hpp"
#include "hbsimex/rng.hpp"

namespace hbsimex {

// Per-cohort main parameters theta_j. beta holds the slopes only; the
// intercept is carried as C = exp(beta0).
struct HierParams {
  Eigen::VectorXd beta;
  double C = 1.0;
  double gamma = 1.0;
};

// Per-cohort hyper-prior parameters delta_j.
struct HyperParams {
  Eigen::VectorXd mu;
  Eigen::MatrixXd Lambda;
  double k = 1.0;
  double a = 1.0;
};

struct FixedHypers {
  double alpha = 0.01;
  double nu = 0.0;
  double tau = 0.0;
  double s = 0.001;
  double t = 1.0;
  double u = 1.0;
  double v = 1.0;
  Eigen::MatrixXd sigma_e;  // expert scale matrix (slopes block)
  Eigen::MatrixXd sigma_0;  // GLM covariance (slopes block)
  double g = 1.0;           // n * m
  double prior_mean_C = 1.0;
  double prior_mean_gamma = 1.0;

  int dim() const { return static_cast<int>(sigma_e.rows()); }
  void validate() const;
};

// nu = (alpha + 1) + (P + 1) + 1, tau = alpha + 1, Sigma_E = diag(Sigma_0),
// s = 0.001, t = u = v = 1, g = total records.
// `glm` is the (SIMEX-corrected) GLM used for Sigma_0 and E[C_j];
// `mom_gamma` gives E[gamma_j].
FixedHypers default_fixed_hypers(const GlmFit& glm, std::size_t total_records, double mom_gamma,
                                 double alpha = 0.01);

// Which running sum sets the rate of the gamma_j prior in step (h).
enum class GammaRateVariant { gamma_sum, c_sum };

GammaRateVariant parse_gamma_rate_variant(const std::string& name);
std::string to_string(GammaRateVariant v);

struct GammaShapeRate {
  double shape;
  double rate;
  double mean() const { return shape / rate; }
};

// Adaptive prior of steps (g)/(h): shape `concentration`, rate
// concentration * h / running_sum, so the prior mean is the running mean of
// the h previous draws.
GammaShapeRate adaptive_gamma_prior(double concentration, int h, double running_sum);

// Gamma log density up to the normalising constant, as used in MH ratios.
double gamma_log_kernel(double x, GammaShapeRate prior);

// Data for one cohort: slope covariates (with the contaminated column
// already installed) and counts.
struct CohortData {
  Eigen::MatrixXd x;
  std::vector<std::int64_t> y;
  Eigen::ArrayXd yd;
  double lgamma_y1_sum = 0.0;
  LogGammaRatioSum ratio_sum{std::span<const std::int64_t>{}};

  CohortData() = default;
  CohortData(Eigen::MatrixXd x, std::vector<std::int64_t> y);
  std::size_t n() const { return y.size(); }
};

std::vector<CohortData> split_by_cohort(const DesignMatrix& design, const CountDataset& dataset);

double cohort_loglik(const CohortData& data, const Eigen::VectorXd& beta, double C, double gamma);

// min(1, exp(log_ratio)); greedy mode returns 1 if log_ratio >= 0 and 0 otherwise.
double acceptance_probability(double log_ratio, bool greedy);

struct MhOutcome {
  bool accepted;
  double accept_prob;
};

// Step (b): IW(nu + P, tau * Sigma_E + (beta - mu)(beta - mu)').
Eigen::MatrixXd lambda_posterior_scale(const Eigen::VectorXd& beta, const Eigen::VectorXd& mu,
                                       const FixedHypers& fixed);
Eigen::MatrixXd sample_Lambda(const HierParams& theta, const HyperParams& delta,
                              const FixedHypers& fixed, Rng& rng);

struct MuWeights {
  double on_glm;
  double on_beta;
};
// (g^-1 / (g^-1 + 1), 1 / (g^-1 + 1))
MuWeights mu_weights(double g);

// Step (c): MVN(w_glm * beta_glm + w_beta * beta, Lambda / (g^-1 + 1)).
Eigen::VectorXd sample_mu(const HierParams& theta, const Eigen::MatrixXd& Lambda,
                          const FixedHypers& fixed, const Eigen::VectorXd& glm_slopes, Rng& rng);

// Step (d): Gaussian random-walk Metropolis on beta with proposal
// scale * proposal_chol * z. Target: cohort likelihood x MVN(mu, Lambda).
// The overloads taking `loglik` read and update the cached cohort
// log-likelihood at the current state.
MhOutcome sample_beta_mh(const CohortData& data, HierParams& theta, const HyperParams& delta,
                         const Eigen::MatrixXd& proposal_chol, double scale, bool greedy,
                         Rng& rng);
MhOutcome sample_beta_mh(const CohortData& data, HierParams& theta, const HyperParams& delta,
                         const Eigen::MatrixXd& proposal_chol, double scale, bool greedy,
                         Rng& rng, double& loglik);

// Step (e): Gamma(shape s, scale t).
double sample_k(const FixedHypers& fixed, Rng& rng);

// Step (f): Gamma(shape k + u, scale gamma_prev + v).
double sample_a(double k, double gamma_prev, const FixedHypers& fixed, Rng& rng);

// Step (g): random walk on log C with Jacobian term.
MhOutcome sample_C_mh(const CohortData& data, HierParams& theta, GammaShapeRate prior,
                      double scale, bool greedy, Rng& rng);
MhOutcome sample_C_mh(const CohortData& data, HierParams& theta, GammaShapeRate prior,
                      double scale, bool greedy, Rng& rng, double& loglik);

// Step (h): random walk on log gamma with Jacobian term.
MhOutcome sample_gamma_mh(const CohortData& data, HierParams& theta, GammaShapeRate prior,
                          double scale, bool greedy, Rng& rng);
MhOutcome sample_gamma_mh(const CohortData& data, HierParams& theta, GammaShapeRate prior,
                          double scale, bool greedy, Rng& rng, double& loglik);

struct SamplerOptions {
  int H = 2000;        // total iterations
  int burn_in = 1000;  // adaptation period; draws kept for h > burn_in
  bool greedy_accept = false;
  GammaRateVariant gamma_rate = GammaRateVariant::gamma_sum;
  double target_accept = 0.3;
  int stuck_window = 500;
  int threads = 1;
};

struct ChainInit {
  HierParams theta;
  HyperParams delta;
  Eigen::VectorXd glm_slopes;       // beta_GLM (slopes), the mu hyper-prior mean
  Eigen::MatrixXd proposal_cov;     // beta random-walk shape at N records; rescaled per cohort
  std::size_t total_records = 0;
};

// Starts every cohort at the GLM estimate, E[C_j], E[gamma_j].
ChainInit default_chain_init(const GlmFit& glm, const FixedHypers& fixed, std::size_t total_records);

enum Block { block_beta = 0, block_C = 1, block_gamma = 2 };

struct BlockStats {
  long accepted = 0;
  long proposed = 0;
  double rate() const { return proposed == 0 ? 0.0 : static_cast<double>(accepted) / proposed; }
};

struct CohortTrace {
  std::vector<HierParams> draws;
  std::vector<HyperParams> hyper_draws;
  std::array<BlockStats, 3> accept{};
  std::array<double, 3> log_scale{};  // frozen proposal log-scales
  std::array<bool, 3> stuck{};
};

struct Chain {
  std::vector<CohortTrace> cohorts;
  std::uint64_t seed = 0;
  double lambda_used = 0.0;
  int H = 0;
  int burn_in = 0;
  std::vector<std::string> warnings;

  std::size_t draw_count() const { return cohorts.empty() ? 0 : cohorts.front().draws.size(); }
  std::size_t slope_count() const;
};

// Runs the (b)-(h) schedule independently per cohort on a design whose
// error-prone column already holds the covariate to use.
Chain run_chain_on_design(const CountDataset& dataset, const DesignMatrix& design,
                          const FixedHypers& fixed, const ChainInit& init,
                          const SamplerOptions& options, std::uint64_t seed);

// Contaminates the error-prone covariate at lambda_t (fixed for the whole
// chain) and then runs the sampler.
Chain run_chain(const CountDataset& dataset, const DesignMatrix& design, const FixedHypers& fixed,
                const ChainInit& init, double lambda_t, double sigma2_eps,
                const SamplerOptions& options, std::uint64_t seed);

// Posterior means of (beta_j, log C_j, log gamma_j), cohort-major.
Eigen::VectorXd posterior_summary_vector(const Chain& chain);
std::vector<std::string> posterior_summary_names(const Chain& chain,
                                                 const std::vector<std::string>& slope_names);

}  // namespace hbsimex
