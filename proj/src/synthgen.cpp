#include "hbsimex/synthgen.hpp"

#include <cmath>
#include <fstream>

#include "hbsimex/error.hpp"
#include "hbsimex/rng.hpp"

namespace hbsimex {

void TruthSpec::validate() const {
  if (!(rho > -1.0 && rho < 1.0)) throw Error(ErrorCode::parameter, "rho must lie in (-1, 1)");
  if (!(log_c_sd >= 0) || !(beta_sd >= 0) || !(log_gamma_sd >= 0) || !(u_sd >= 0) ||
      !(sigma2_eps >= 0))
    throw Error(ErrorCode::parameter, "spreads and error variance must be non-negative");
  for (double v : {log_c_mean, log_c_sd, beta_mean, beta_sd, log_gamma_mean, log_gamma_sd, u_mean,
                   u_sd, sigma2_eps})
    if (!std::isfinite(v)) throw Error(ErrorCode::parameter, "truth spec must be finite");
  for (double v : extra_slopes)
    if (!std::isfinite(v)) throw Error(ErrorCode::parameter, "truth spec must be finite");
}

SyntheticData generate(int m, int n_per, const TruthSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (m < 1 || n_per < 1) throw Error(ErrorCode::parameter, "need m >= 1 and n_per >= 1");

  GroundTruth truth;
  truth.spec = spec;
  truth.m = m;
  truth.n_per = n_per;
  truth.beta = Eigen::VectorXd(m);
  truth.C = Eigen::VectorXd(m);
  truth.gamma = Eigen::VectorXd(m);
  truth.extra_slopes = spec.extra_slopes;
  truth.rho = spec.rho;
  truth.sigma2_eps = spec.sigma2_eps;
  truth.seed = seed;

  Rng cohort_rng(derive_seed(seed, {1}));
  const double ortho = std::sqrt(1.0 - spec.rho * spec.rho);
  for (int j = 0; j < m; ++j) {
    const double z1 = cohort_rng.normal();
    const double z2 = cohort_rng.normal();
    const double z3 = cohort_rng.normal();
    truth.C(j) = std::exp(spec.log_c_mean + spec.log_c_sd * z1);
    truth.beta(j) = spec.beta_mean + spec.beta_sd * (spec.rho * z1 + ortho * z2);
    truth.gamma(j) = std::exp(spec.log_gamma_mean + spec.log_gamma_sd * z3);
  }

  const auto extra = static_cast<Eigen::Index>(spec.extra_slopes.size());
  const auto n = static_cast<Eigen::Index>(m) * n_per;
  Eigen::MatrixXd x(n, 1 + extra);
  std::vector<std::int64_t> y;
  std::vector<int> cohort;
  y.reserve(static_cast<std::size_t>(n));
  cohort.reserve(static_cast<std::size_t>(n));
  truth.u = Eigen::VectorXd(n);

  Rng rng(derive_seed(seed, {2}));
  const double eps_sd = std::sqrt(spec.sigma2_eps);
  Eigen::Index row = 0;
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < n_per; ++i, ++row) {
      const double u = rng.normal(spec.u_mean, spec.u_sd);
      truth.u(row) = u;
      x(row, 0) = u + eps_sd * rng.normal();
      double lin = truth.beta(j) * u;
      for (Eigen::Index k = 0; k < extra; ++k) {
        const double z = rng.normal();
        x(row, 1 + k) = z;
        lin += spec.extra_slopes[static_cast<std::size_t>(k)] * z;
      }
      const double eta = truth.C(j) * std::exp(lin);
      const double rate = rng.gamma(truth.gamma(j), eta / truth.gamma(j));
      y.push_back(rng.poisson(rate));
      cohort.push_back(j);
    }
  }

  std::vector<CovariateInfo> covs{{"x", CovariateKind::numeric, {}}};
  for (Eigen::Index k = 0; k < extra; ++k)
    covs.push_back({"z" + std::to_string(k + 1), CovariateKind::numeric, {}});
  std::vector<std::string> labels;
  for (int j = 0; j < m; ++j) labels.push_back(std::to_string(j + 1));

  return {CountDataset(std::move(y), std::move(x), std::move(cohort), std::move(labels),
                       std::move(covs), 0, "y", "cohort"),
          std::move(truth)};
}

nlohmann::json to_json(const GroundTruth& truth) {
  const auto& spec = truth.spec;
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"m", truth.m},
          {"n_per", truth.n_per},
          {"seed", truth.seed},
          {"rho", truth.rho},
          {"sigma2_eps", truth.sigma2_eps},
          {"beta", vec(truth.beta)},
          {"C", vec(truth.C)},
          {"gamma", vec(truth.gamma)},
          {"extra_slopes", truth.extra_slopes},
          {"spec",
           {{"log_c_mean", spec.log_c_mean},
            {"log_c_sd", spec.log_c_sd},
            {"beta_mean", spec.beta_mean},
            {"beta_sd", spec.beta_sd},
            {"log_gamma_mean", spec.log_gamma_mean},
            {"log_gamma_sd", spec.log_gamma_sd},
            {"u_mean", spec.u_mean},
            {"u_sd", spec.u_sd}}}};
}

void write_synthetic(const SyntheticData& data, const std::filesystem::path& csv_path,
                     const std::filesystem::path& truth_path) {
  const auto& ds = data.dataset;
  auto covs = ds.covariates();
  covs.push_back({"u_true", CovariateKind::numeric, {}});
  Eigen::MatrixXd x(ds.x().rows(), ds.x().cols() + 1);
  x << ds.x(), data.truth.u;
  const CountDataset with_truth(ds.y(), x, ds.cohort(), ds.cohort_labels(), covs,
                                ds.error_prone_index(), ds.outcome_name(), ds.cohort_name());
  write_csv(with_truth, csv_path);

  std::ofstream out(truth_path);
  if (!out) throw Error(ErrorCode::io, "cannot write '" + truth_path.string() + "'");
  out << to_json(data.truth).dump(2) << '\n';
}

}  // namespace hbsimex
