#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace hbsimex {

// Replicated measurements x_iq of one error-prone covariate.
struct ReplicateSet {
  std::vector<std::size_t> record_ids;
  std::vector<std::vector<double>> replicates;

  std::size_t degrees_of_freedom() const;  // sum (Q_i - 1)
  std::size_t total_measurements() const;
};

struct ErrorModel {
  double sigma2_eps = 0.0;
  std::optional<double> sigma2_u;
  std::optional<double> mean_u;
};

// Pooled within-record variance sum_i sum_q (x_iq - xbar_i)^2 / sum_i (Q_i - 1).
double estimate_error_variance(const ReplicateSet& reps);

// Moment-subtraction diagnostics: sigma2_u = Var(x) - sigma2_eps (floored at 0).
ErrorModel describe_error_model(std::span<const double> x, double sigma2_eps);

enum class ResidualPool { cohort, global };

// Each record receives Q values x_i + r*, with r* resampled with replacement
// from the residuals of x around its cohort mean (or the global mean).
ReplicateSet bootstrap_replicates(std::span<const double> x, std::span<const int> cohort, int q,
                                  std::uint64_t seed, ResidualPool pool = ResidualPool::cohort);
ReplicateSet bootstrap_replicates(std::span<const double> x, int q, std::uint64_t seed);

// w = x + sqrt(lambda) * eps, eps ~ N(0, sigma2_eps).
Eigen::VectorXd contaminate(const Eigen::VectorXd& x, double lambda, double sigma2_eps,
                            std::uint64_t seed);

// CSV with header record_id,replicate_index,value.
void write_replicates_csv(const ReplicateSet& reps, const std::filesystem::path& path);
ReplicateSet read_replicates_csv(const std::filesystem::path& path);

}  // namespace hbsimex
