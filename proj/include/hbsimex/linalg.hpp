#pragma once

#include <Eigen/Dense>

#include "hbsimex/rng.hpp"

namespace hbsimex {

// Lower Cholesky factor. On failure retries once with a diagonal jitter
// of 1e-10 * mean(diag); throws ErrorCode::numerical if that fails too.
Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& m);

bool is_positive_definite(const Eigen::MatrixXd& m);

Eigen::VectorXd sample_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol_lower, Rng& rng);

// log N(x | mean, cov) given the lower Cholesky factor of cov.
double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                  const Eigen::MatrixXd& chol_lower);

// Inverse-Wishart(dof, scale) via the Bartlett decomposition of the
// matching Wishart(dof, scale^-1). Mean is scale / (dof - p - 1).
Eigen::MatrixXd sample_inverse_wishart(double dof, const Eigen::MatrixXd& scale, Rng& rng);

}  // namespace hbsimex
