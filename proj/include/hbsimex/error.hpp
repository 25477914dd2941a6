#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace hbsimex {

// Broad failure classes; the CLI maps them onto exit codes 2/3/4.
enum class ErrorCategory { config, data, numerical };

enum class ErrorCode {
  schema,
  parse,
  validation,
  domain,
  singular_design,
  convergence,
  underdispersion,
  insufficient_replicates,
  parameter,
  singular_fit,
  config,
  io,
  undefined_statistic,
  numerical,
};

const char* to_string(ErrorCode code);
ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }
  ErrorCategory category() const { return category_of(code_); }

 private:
  ErrorCode code_;
};

// IRLS gave up; the last iterate is kept for inspection.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, Eigen::VectorXd last_beta, double last_gamma)
      : Error(ErrorCode::convergence, message),
        last_beta_(std::move(last_beta)),
        last_gamma_(last_gamma) {}

  const Eigen::VectorXd& last_beta() const { return last_beta_; }
  double last_gamma() const { return last_gamma_; }

 private:
  Eigen::VectorXd last_beta_;
  double last_gamma_;
};

}  // namespace hbsimex
