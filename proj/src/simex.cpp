#include "hbsimex/simex.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "hbsimex/error.hpp"
#include "hbsimex/measurement_error.hpp"
#include "hbsimex/parallel.hpp"
#include "hbsimex/rng.hpp"

namespace hbsimex {

int degree_of(Extrapolant e) { return e == Extrapolant::linear ? 1 : 2; }

Extrapolant parse_extrapolant(const std::string& name) {
  if (name == "quadratic") return Extrapolant::quadratic;
  if (name == "linear") return Extrapolant::linear;
  throw Error(ErrorCode::config, "unknown extrapolant '" + name + "'");
}

std::string to_string(Extrapolant e) { return e == Extrapolant::linear ? "linear" : "quadratic"; }

void SimexConfig::validate() const {
  if (lambda_grid.empty() || lambda_grid.front() != 0.0)
    throw Error(ErrorCode::config, "SIMEX grid must start at lambda = 0");
  for (std::size_t t = 1; t < lambda_grid.size(); ++t)
    if (!(lambda_grid[t] > lambda_grid[t - 1]) || !std::isfinite(lambda_grid[t]))
      throw Error(ErrorCode::config, "SIMEX grid must be strictly increasing and finite");
  if (static_cast<int>(lambda_grid.size()) < degree_of(extrapolant) + 1)
    throw Error(ErrorCode::config, "SIMEX grid has fewer points than the extrapolant needs");
  if (B < 1) throw Error(ErrorCode::config, "SIMEX needs B >= 1 simulations per grid point");
  if (!(sigma2_eps >= 0.0) || !std::isfinite(sigma2_eps))
    throw Error(ErrorCode::config, "error variance must be non-negative");
}

std::uint64_t simex_cell_seed(std::uint64_t base, std::size_t lambda_index, int b) {
  return derive_seed(base, {0x53494d4558ULL, lambda_index, static_cast<std::uint64_t>(b)});
}

Extrapolation extrapolate(std::span<const double> lambdas, std::span<const double> values,
                          int degree) {
  if (degree != 1 && degree != 2)
    throw Error(ErrorCode::parameter, "extrapolant degree must be 1 or 2");
  if (lambdas.size() != values.size())
    throw Error(ErrorCode::parameter, "lambda and value counts differ");
  const std::set<double> distinct(lambdas.begin(), lambdas.end());
  if (static_cast<int>(distinct.size()) < degree + 1)
    throw Error(ErrorCode::singular_fit, "not enough distinct lambda values for the extrapolant");

  const auto n = static_cast<Eigen::Index>(lambdas.size());
  Eigen::MatrixXd v(n, degree + 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double power = 1.0;
    for (int d = 0; d <= degree; ++d) {
      v(i, d) = power;
      power *= lambdas[static_cast<std::size_t>(i)];
    }
    y(i) = values[static_cast<std::size_t>(i)];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(v);
  if (qr.rank() < degree + 1) throw Error(ErrorCode::singular_fit, "extrapolant fit is singular");

  Extrapolation out;
  if ((y.array() == y(0)).all()) {
    // A flat trace extrapolates to itself; skip the solve so the value is exact.
    out.coefficients = Eigen::VectorXd::Zero(degree + 1);
    out.coefficients(0) = y(0);
    out.value_at_minus_one = y(0);
    return out;
  }
  out.coefficients = qr.solve(y);
  out.residual_ss = (v * out.coefficients - y).squaredNorm();
  double at_minus_one = 0.0;
  double sign = 1.0;
  for (int d = 0; d <= degree; ++d, sign = -sign) at_minus_one += sign * out.coefficients(d);
  out.value_at_minus_one = at_minus_one;
  return out;
}

SimexTrace run_simex(const SimexEstimator& estimator, const CountDataset& dataset,
                     const SimexConfig& config, std::vector<std::string> parameter_names) {
  config.validate();
  const std::size_t T = config.lambda_grid.size();
  const auto B = static_cast<std::size_t>(config.B);
  const int ep = dataset.error_prone_index();
  const Eigen::VectorXd x = dataset.error_prone_values();

  std::vector<Eigen::VectorXd> estimates(T * B);
  parallel_for(T * B, config.threads, [&](std::size_t cell_index) {
    const std::size_t t = cell_index / B;
    const int b = static_cast<int>(cell_index % B);
    const SimexCell cell{t, config.lambda_grid[t], b, simex_cell_seed(config.seed, t, b)};
    try {
      const CountDataset contaminated =
          dataset.with_covariate(ep, contaminate(x, cell.lambda, config.sigma2_eps, cell.seed));
      estimates[cell_index] = estimator(contaminated, cell);
    } catch (const Error& e) {
      std::ostringstream msg;
      msg << e.what() << " (SIMEX lambda=" << cell.lambda << ", b=" << b << ")";
      throw Error(e.code(), msg.str());
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << e.what() << " (SIMEX lambda=" << cell.lambda << ", b=" << b << ")";
      throw Error(ErrorCode::numerical, msg.str());
    }
  });

  const auto K = estimates.front().size();
  for (const auto& e : estimates)
    if (e.size() != K || !e.allFinite())
      throw Error(ErrorCode::numerical, "SIMEX estimator returned inconsistent or non-finite output");

  SimexTrace trace;
  trace.lambdas = config.lambda_grid;
  trace.B = config.B;
  trace.extrapolant = config.extrapolant;
  trace.parameter_names = std::move(parameter_names);
  if (trace.parameter_names.size() != static_cast<std::size_t>(K)) {
    trace.parameter_names.clear();
    for (Eigen::Index k = 0; k < K; ++k) trace.parameter_names.push_back("theta" + std::to_string(k));
  }
  trace.mean = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T), K);
  trace.sd = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T), K);
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    for (std::size_t b = 0; b < B; ++b) trace.mean.row(row) += estimates[t * B + b].transpose();
    trace.mean.row(row) /= static_cast<double>(B);
    for (Eigen::Index k = 0; k < K; ++k) {
      bool flat = true;
      for (std::size_t b = 1; b < B && flat; ++b) flat = estimates[t * B + b](k) == estimates[t * B](k);
      if (flat) trace.mean(row, k) = estimates[t * B](k);
    }
    if (B > 1) {
      for (std::size_t b = 0; b < B; ++b)
        trace.sd.row(row) +=
            (estimates[t * B + b].transpose() - trace.mean.row(row)).array().square().matrix();
      trace.sd.row(row) = (trace.sd.row(row) / static_cast<double>(B - 1)).array().sqrt().matrix();
    }
  }
  trace.naive = estimates.front();

  const int degree = degree_of(config.extrapolant);
  trace.extrapolated = Eigen::VectorXd(K);
  trace.fit_residuals = Eigen::VectorXd(K);
  trace.jackknife_se = Eigen::VectorXd::Zero(K);
  std::vector<double> column(T);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (std::size_t t = 0; t < T; ++t) column[t] = trace.mean(static_cast<Eigen::Index>(t), k);
    const auto fit = extrapolate(config.lambda_grid, column, degree);
    trace.extrapolated(k) = fit.value_at_minus_one;
    trace.fit_coeffs.push_back(fit.coefficients);
    trace.fit_residuals(k) = fit.residual_ss;

    if (B < 2) continue;
    std::vector<double> leave_one_out(B);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t)
        column[t] = (static_cast<double>(B) * trace.mean(static_cast<Eigen::Index>(t), k) -
                     estimates[t * B + b](k)) /
                    static_cast<double>(B - 1);
      leave_one_out[b] = extrapolate(config.lambda_grid, column, degree).value_at_minus_one;
    }
    double avg = 0.0;
    for (double v : leave_one_out) avg += v;
    avg /= static_cast<double>(B);
    double ss = 0.0;
    for (double v : leave_one_out) ss += (v - avg) * (v - avg);
    trace.jackknife_se(k) = std::sqrt(ss * static_cast<double>(B - 1) / static_cast<double>(B));
  }
  return trace;
}

void write_trace_csv(const SimexTrace& trace, std::ostream& out) {
  out << "lambda,parameter,mean,sd\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t t = 0; t < trace.lambdas.size(); ++t)
    for (Eigen::Index k = 0; k < trace.mean.cols(); ++k)
      out << trace.lambdas[t] << ',' << trace.parameter_names[static_cast<std::size_t>(k)] << ','
          << trace.mean(static_cast<Eigen::Index>(t), k) << ','
          << trace.sd(static_cast<Eigen::Index>(t), k) << '\n';
}

nlohmann::json to_json(const SimexTrace& trace) {
  nlohmann::json j;
  j["lambdas"] = trace.lambdas;
  j["B"] = trace.B;
  j["extrapolant"] = to_string(trace.extrapolant);
  auto& params = j["parameters"];
  params = nlohmann::json::array();
  for (Eigen::Index k = 0; k < trace.mean.cols(); ++k) {
    const auto& coeffs = trace.fit_coeffs[static_cast<std::size_t>(k)];
    params.push_back({{"name", trace.parameter_names[static_cast<std::size_t>(k)]},
                      {"naive", trace.naive(k)},
                      {"extrapolated", trace.extrapolated(k)},
                      {"jackknife_se", trace.jackknife_se(k)},
                      {"fit_coefficients", std::vector<double>(coeffs.data(), coeffs.data() + coeffs.size())},
                      {"fit_residual_ss", trace.fit_residuals(k)}});
  }
  return j;
}

}  // namespace hbsimex
