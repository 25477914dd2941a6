#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "hbsimex/data.hpp"

namespace hbsimex {

// Negative Binomial in mean/dispersion form: E[y] = eta,
// Var[y] = eta + eta^2 / gamma. gamma -> infinity recovers the Poisson.
struct NBParams {
  double eta;
  double gamma;
};

double nb_logpmf(std::int64_t y, NBParams params);

// Unchecked variant for inner loops; caller guarantees eta, gamma > 0.
double nb_logpmf_unchecked(std::int64_t y, double eta, double gamma);

double nb_loglik(const Eigen::MatrixXd& x, std::span<const std::int64_t> y,
                 const Eigen::VectorXd& beta, double gamma);

// Method-of-Moments dispersion mean^2 / (var - mean), var with n - 1 divisor.
double mom_dispersion(std::span<const std::int64_t> y);
double mom_dispersion(double mean, double variance);

struct GlmOptions {
  int max_iter = 100;
  double grad_tol = 1e-6;
  double gamma_tol = 1e-8;
  // Bracket for the profile search on log(gamma).
  double gamma_min = 1e-6;
  double gamma_max = 1e10;
};

struct GlmFit {
  Eigen::VectorXd beta_hat;
  double gamma_hat = 0.0;
  double sigma2_hat = 0.0;   // Pearson dispersion
  Eigen::MatrixXd cov_beta;  // sigma2_hat * (X' W X)^-1
  double deviance = 0.0;
  double loglik = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> loglik_trace;  // one entry per accepted update
};

// IRLS with step halving for beta at fixed gamma, alternating with a
// safeguarded Newton profile search on log(gamma) started at the MoM estimate.
GlmFit fit_nb_glm(const Eigen::MatrixXd& x, std::span<const std::int64_t> y,
                  const GlmOptions& options = {});
GlmFit fit_nb_glm(const CountDataset& dataset, const DesignMatrix& design,
                  const GlmOptions& options = {});

// Deviance of counts under NB(gamma) against the saturated model eta = y
// (a zero count has saturated probability one).
double nb_deviance(std::span<const std::int64_t> y, std::span<const double> mu,
                   std::span<const double> gamma);

// Sum over records of lgamma(y_i + gamma) - lgamma(gamma), via tail counts
// of y so the cost is O(max y) per evaluation.
class LogGammaRatioSum {
 public:
  explicit LogGammaRatioSum(std::span<const std::int64_t> y);
  double operator()(double gamma) const;
  double derivative(double gamma) const;         // sum digamma(y_i + gamma) - digamma(gamma)
  double second_derivative(double gamma) const;  // same with trigamma

 private:
  std::vector<double> tail_;  // tail_[k] = #{i : y_i > k}
};

}  // namespace hbsimex
