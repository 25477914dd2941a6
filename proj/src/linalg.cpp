#include "hbsimex/linalg.hpp"

#include <cmath>
#include <numbers>

#include "hbsimex/error.hpp"

namespace hbsimex {

Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt.matrixL();

  const double jitter = 1e-10 * std::max(m.diagonal().mean(), 1e-300);
  Eigen::MatrixXd jittered = m;
  jittered.diagonal().array() += jitter;
  Eigen::LLT<Eigen::MatrixXd> retry(jittered);
  if (retry.info() != Eigen::Success || !jittered.allFinite())
    throw Error(ErrorCode::numerical, "matrix is not positive definite");
  return retry.matrixL();
}

bool is_positive_definite(const Eigen::MatrixXd& m) {
  if (!m.allFinite()) return false;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  return llt.info() == Eigen::Success;
}

Eigen::VectorXd sample_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol_lower,
                           Rng& rng) {
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean + chol_lower.triangularView<Eigen::Lower>() * z;
}

double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                  const Eigen::MatrixXd& chol_lower) {
  const Eigen::VectorXd z =
      chol_lower.triangularView<Eigen::Lower>().solve(x - mean);
  const double log_det = 2.0 * chol_lower.diagonal().array().log().sum();
  const double d = static_cast<double>(x.size());
  return -0.5 * (z.squaredNorm() + log_det + d * std::log(2.0 * std::numbers::pi));
}

Eigen::MatrixXd sample_inverse_wishart(double dof, const Eigen::MatrixXd& scale, Rng& rng) {
  const Eigen::Index p = scale.rows();
  if (dof <= static_cast<double>(p) - 1.0)
    throw Error(ErrorCode::parameter, "inverse-Wishart degrees of freedom too small");

  const Eigen::MatrixXd scale_inv = cholesky_lower(scale)
                                        .triangularView<Eigen::Lower>()
                                        .solve(Eigen::MatrixXd::Identity(p, p));
  // scale^-1 = L^-T L^-1; take its lower Cholesky factor.
  const Eigen::MatrixXd precision = scale_inv.transpose() * scale_inv;
  const Eigen::MatrixXd l = cholesky_lower(precision);

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  // Wishart draw W = (L A)(L A)'; return W^-1 = T^-T T^-1.
  const Eigen::MatrixXd t = l * a;
  const Eigen::MatrixXd t_inv =
      t.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd out = t_inv.transpose() * t_inv;
  return 0.5 * (out + out.transpose());
}

}  // namespace hbsimex
