#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hbsimex/data.hpp"

namespace hbsimex {

// Generating joint: (log C_j, beta_j) bivariate normal with correlation rho,
// gamma_j log-normal, U ~ N(u_mean, u_sd^2), x = U + N(0, sigma2_eps),
// y ~ NB(C_j exp(beta_j U + sum_k extra_k z_k), gamma_j) with z_k ~ N(0, 1).
struct TruthSpec {
  double log_c_mean = 1.0;
  double log_c_sd = 0.5;
  double beta_mean = 0.5;
  double beta_sd = 0.2;
  double rho = 0.0;
  double log_gamma_mean = 0.0;
  double log_gamma_sd = 0.0;
  double u_mean = 0.0;
  double u_sd = 1.0;
  double sigma2_eps = 1.0;
  std::vector<double> extra_slopes;  // clean covariates shared by all cohorts

  void validate() const;
};

struct GroundTruth {
  TruthSpec spec;
  int m = 0;
  int n_per = 0;
  Eigen::VectorXd beta;   // error-prone slope per cohort
  Eigen::VectorXd C;
  Eigen::VectorXd gamma;
  std::vector<double> extra_slopes;
  double rho = 0.0;
  double sigma2_eps = 0.0;
  Eigen::VectorXd u;  // latent covariate per record
  std::uint64_t seed = 0;
};

struct SyntheticData {
  CountDataset dataset;  // covariates: x (error-prone), z1.. (clean)
  GroundTruth truth;
};

SyntheticData generate(int m, int n_per, const TruthSpec& spec, std::uint64_t seed);

// Dataset CSV with an extra `u_true` column; sidecar JSON for the truth.
void write_synthetic(const SyntheticData& data, const std::filesystem::path& csv_path,
                     const std::filesystem::path& truth_path);
nlohmann::json to_json(const GroundTruth& truth);

}  // namespace hbsimex
