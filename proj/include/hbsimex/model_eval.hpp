#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hbsimex/count_glm.hpp"
#include "hbsimex/data.hpp"
#include "hbsimex/hb_sampler.hpp"

namespace hbsimex {

// J x N matrix of log L(theta*_j; y_i).
using PointwiseLogLik = Eigen::MatrixXd;

PointwiseLogLik pointwise_loglik(const Chain& chain, const CountDataset& dataset,
                                 const DesignMatrix& design);

// Draws of the full coefficient vector (intercept first) with a common gamma.
PointwiseLogLik pointwise_loglik(const std::vector<Eigen::VectorXd>& beta_draws, double gamma,
                                 const CountDataset& dataset, const DesignMatrix& design);

double lppd(const PointwiseLogLik& ll);
double lppd(const Chain& chain, const CountDataset& dataset, const DesignMatrix& design);

struct WaicResult {
  double lppd = 0.0;
  double penalty = 0.0;
  double waic = 0.0;
  Eigen::VectorXd per_point_penalty;
};

WaicResult waic(const PointwiseLogLik& ll);
WaicResult waic(const Chain& chain, const CountDataset& dataset, const DesignMatrix& design);

double durbin_watson(std::span<const double> trace);
std::vector<double> thin(std::span<const double> trace, std::size_t factor);

double msle(std::span<const double> predicted, std::span<const std::int64_t> observed);

// 2 (l_saturated - l_model) / dispersion under NB with per-record gamma.
double scaled_deviance(std::span<const double> predicted, std::span<const double> gamma,
                       std::span<const std::int64_t> observed, double dispersion);
double scaled_deviance(const GlmFit& fit, const CountDataset& dataset, const DesignMatrix& design);

// Pearson dispersion sum (y - mu)^2 / (mu + mu^2 / gamma) / (n - k).
double pearson_dispersion(std::span<const double> predicted, std::span<const double> gamma,
                          std::span<const std::int64_t> observed, std::size_t parameters);

struct InterceptSlopeCorrelation {
  std::vector<double> per_draw;  // correlation across cohorts, one per draw
  std::vector<std::pair<double, double>> mean_pairs;  // (E[C_j], E[beta_j])
  double mean = 0.0;
  double fraction_negative = 0.0;
  bool degenerate = false;  // some draws had zero cross-cohort variance
  bool two_cohorts = false;
  std::vector<std::string> warnings;
};

InterceptSlopeCorrelation intercept_slope_correlation(const Chain& chain, std::size_t slope_index);

double pearson_correlation(std::span<const double> a, std::span<const double> b);

struct MetricReport {
  double lppd = 0.0;
  double waic = 0.0;
  double penalty = 0.0;
  Eigen::VectorXd per_point_penalty;
  double scaled_deviance = 0.0;
  double msle = 0.0;
  std::vector<std::pair<std::string, double>> dw;
};

nlohmann::json to_json(const MetricReport& report);

}  // namespace hbsimex
