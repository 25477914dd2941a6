#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hbsimex/data.hpp"

namespace hbsimex {

enum class Extrapolant { linear, quadratic };

int degree_of(Extrapolant e);
Extrapolant parse_extrapolant(const std::string& name);
std::string to_string(Extrapolant e);

struct SimexConfig {
  std::vector<double> lambda_grid{0.0, 0.5, 1.0, 1.5, 2.0};
  int B = 100;
  double sigma2_eps = 0.0;
  Extrapolant extrapolant = Extrapolant::quadratic;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

// One (lambda_t, b) cell of the simulation grid.
struct SimexCell {
  std::size_t lambda_index;
  double lambda;
  int b;
  std::uint64_t seed;  // seed used for contamination; estimators may derive from it
};

std::uint64_t simex_cell_seed(std::uint64_t base, std::size_t lambda_index, int b);

using SimexEstimator = std::function<Eigen::VectorXd(const CountDataset&, const SimexCell&)>;

struct Extrapolation {
  double value_at_minus_one = 0.0;
  Eigen::VectorXd coefficients;  // ascending powers of lambda
  double residual_ss = 0.0;
};

// Least-squares polynomial in lambda, evaluated at lambda = -1.
Extrapolation extrapolate(std::span<const double> lambdas, std::span<const double> values,
                          int degree);

struct SimexTrace {
  std::vector<double> lambdas;
  std::vector<std::string> parameter_names;
  Eigen::MatrixXd mean;  // T x K averaged estimates
  Eigen::MatrixXd sd;    // T x K spread over the B replicates
  Eigen::VectorXd naive;         // estimate on the uncontaminated data (b = 0 at lambda = 0)
  Eigen::VectorXd extrapolated;  // value at lambda = -1
  Eigen::VectorXd jackknife_se;  // delete-one-replicate jackknife
  std::vector<Eigen::VectorXd> fit_coeffs;
  Eigen::VectorXd fit_residuals;
  int B = 0;
  Extrapolant extrapolant = Extrapolant::quadratic;
};

SimexTrace run_simex(const SimexEstimator& estimator, const CountDataset& dataset,
                     const SimexConfig& config, std::vector<std::string> parameter_names = {});

// Long-format CSV: lambda,parameter,mean,sd
void write_trace_csv(const SimexTrace& trace, std::ostream& out);
nlohmann::json to_json(const SimexTrace& trace);

}  // namespace hbsimex
