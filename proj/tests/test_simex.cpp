#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "hbsimex/count_glm.hpp"
#include "hbsimex/error.hpp"
#include "hbsimex/rng.hpp"
#include "hbsimex/simex.hpp"
#include "hbsimex/synthgen.hpp"
#include "support/oracles.hpp"

using namespace hbsimex;

namespace {

CountDataset tiny_dataset(int n = 5) {
  std::vector<std::int64_t> y(static_cast<std::size_t>(n), 1);
  Eigen::MatrixXd x = Eigen::VectorXd::LinSpaced(n, 0.0, 1.0);
  return CountDataset(y, x, std::vector<int>(static_cast<std::size_t>(n), 0), {"1"},
                      {CovariateInfo{"x", CovariateKind::numeric, {}}}, 0);
}

double ols_slope(const Eigen::VectorXd& x, const std::vector<double>& y) {
  const double mx = x.mean();
  double my = 0.0;
  for (double v : y) my += v;
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    sxy += (x(i) - mx) * (y[static_cast<std::size_t>(i)] - my);
    sxx += (x(i) - mx) * (x(i) - mx);
  }
  return sxy / sxx;
}

}  // namespace

TEST_CASE("extrapolating a line") {
  const std::vector<double> l{0, 0.5, 1, 1.5, 2};
  std::vector<double> v;
  for (double x : l) v.push_back(5.0 - x);
  CHECK(extrapolate(l, v, 1).value_at_minus_one == doctest::Approx(6.0).epsilon(1e-13));
  CHECK(extrapolate(l, v, 2).value_at_minus_one == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(extrapolate(l, v, 1).residual_ss < 1e-24);
}

TEST_CASE("exact interpolation of three quadratic points") {
  const std::vector<double> l{0, 1, 2}, v{1, 6, 17};
  const auto fit = extrapolate(l, v, 2);
  CHECK(std::abs(fit.value_at_minus_one - 2.0) < 1e-9);
  CHECK(fit.coefficients(0) == doctest::Approx(1.0));
  CHECK(fit.coefficients(1) == doctest::Approx(2.0));
  CHECK(fit.coefficients(2) == doctest::Approx(3.0));
}

TEST_CASE("constant points extrapolate to the same constant") {
  const std::vector<double> l{0, 0.5, 1, 1.5, 2}, v(5, 0.1234);
  for (int degree : {1, 2}) {
    const auto fit = extrapolate(l, v, degree);
    CHECK(fit.value_at_minus_one == 0.1234);
    CHECK(fit.residual_ss == 0.0);
  }
}

TEST_CASE("rank-deficient lambda sets are singular fits") {
  const std::vector<double> l{0, 0, 1}, v{1, 2, 3};
  try {
    extrapolate(l, v, 2);
    FAIL("expected singular fit");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::singular_fit);
  }
}

TEST_CASE("extrapolation is affine equivariant") {
  const std::vector<double> l{0, 0.5, 1, 1.5, 2}, v{0.9, 0.81, 0.74, 0.70, 0.64};
  const double base = extrapolate(l, v, 2).value_at_minus_one;
  std::vector<double> scaled, shifted;
  for (double x : v) {
    scaled.push_back(3.0 * x);
    shifted.push_back(x - 7.0);
  }
  CHECK(extrapolate(l, scaled, 2).value_at_minus_one == doctest::Approx(3.0 * base).epsilon(1e-12));
  CHECK(extrapolate(l, shifted, 2).value_at_minus_one == doctest::Approx(base - 7.0).epsilon(1e-12));
}

TEST_CASE("stub estimator on a known quadratic") {
  SimexConfig cfg;
  cfg.B = 3;
  cfg.sigma2_eps = 1.0;
  const SimexEstimator f = [](const CountDataset&, const SimexCell& c) {
    Eigen::VectorXd v(1);
    v << 1.0 + 2.0 * c.lambda + 3.0 * c.lambda * c.lambda;
    return v;
  };
  const auto trace = run_simex(f, tiny_dataset(), cfg, {"theta"});
  CHECK(std::abs(trace.extrapolated(0) - 2.0) < 1e-9);
  CHECK(trace.mean.rows() == 5);
  CHECK(trace.lambdas == cfg.lambda_grid);
  CHECK(trace.jackknife_se(0) == doctest::Approx(0.0));
}

TEST_CASE("zero error variance collapses to the naive estimate") {
  TruthSpec spec;
  spec.sigma2_eps = 0.0;
  const auto data = generate(2, 150, spec, 5).dataset;
  const auto design = build_design(data);
  const auto naive = fit_nb_glm(data, design);
  SimexConfig cfg;
  cfg.B = 4;
  cfg.sigma2_eps = 0.0;
  const SimexEstimator f = [](const CountDataset& ds, const SimexCell&) {
    return fit_nb_glm(ds, build_design(ds)).beta_hat;
  };
  const auto trace = run_simex(f, data, cfg);
  for (Eigen::Index t = 0; t < trace.mean.rows(); ++t) CHECK(trace.mean.row(t) == naive.beta_hat.transpose());
  CHECK(trace.extrapolated == naive.beta_hat);
  CHECK(trace.naive == naive.beta_hat);
}

TEST_CASE("SIMEX moves an attenuated linear slope toward the truth") {
  const double beta = 1.0, s2u = 1.0, s2e = 1.0;
  const int n = 2000, runs = 50;
  int closer = 0;
  double naive_sum = 0.0;
  for (int run = 0; run < runs; ++run) {
    std::mt19937_64 gen(1000 + run);
    std::normal_distribution<double> norm;
    Eigen::VectorXd x(n);
    std::vector<double> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const double u = std::sqrt(s2u) * norm(gen);
      x(i) = u + std::sqrt(s2e) * norm(gen);
      y[static_cast<std::size_t>(i)] = beta * u + 0.5 * norm(gen);
    }
    const CountDataset ds(std::vector<std::int64_t>(static_cast<std::size_t>(n), 0), x,
                          std::vector<int>(static_cast<std::size_t>(n), 0), {"1"},
                          {CovariateInfo{"x", CovariateKind::numeric, {}}}, 0);
    SimexConfig cfg;
    cfg.B = 50;
    cfg.sigma2_eps = s2e;
    cfg.seed = static_cast<std::uint64_t>(run);
    const SimexEstimator f = [&y](const CountDataset& d, const SimexCell&) {
      Eigen::VectorXd v(1);
      v << ols_slope(d.x().col(0), y);
      return v;
    };
    const auto trace = run_simex(f, ds, cfg);
    naive_sum += trace.naive(0);
    if (std::abs(trace.extrapolated(0) - beta) < std::abs(trace.naive(0) - beta)) ++closer;
  }
  CHECK(naive_sum / runs == doctest::Approx(beta * s2u / (s2u + s2e)).epsilon(0.02));
  CHECK(closer >= 45);
}

TEST_CASE("Monte-Carlo error of the grid means shrinks like 1/sqrt(B)") {
  const auto ds = tiny_dataset();
  const SimexEstimator f = [](const CountDataset&, const SimexCell& c) {
    Rng rng(c.seed);
    Eigen::VectorXd v(1);
    v << 2.0 + rng.normal();
    return v;
  };
  const std::vector<int> Bs{10, 40, 160, 640};
  std::vector<double> log_b, log_se;
  for (int B : Bs) {
    std::vector<double> means;
    for (std::uint64_t s = 0; s < 200; ++s) {
      SimexConfig cfg;
      cfg.B = B;
      cfg.sigma2_eps = 1.0;
      cfg.seed = s;
      means.push_back(run_simex(f, ds, cfg).mean(2, 0));
    }
    log_b.push_back(std::log(static_cast<double>(B)));
    log_se.push_back(0.5 * std::log(oracle::variance(means)));
  }
  const double mb = oracle::mean(log_b), ms = oracle::mean(log_se);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < Bs.size(); ++i) {
    sxy += (log_b[i] - mb) * (log_se[i] - ms);
    sxx += (log_b[i] - mb) * (log_b[i] - mb);
  }
  const double slope = sxy / sxx;
  CHECK(slope == doctest::Approx(-0.5).epsilon(0.2));
}

TEST_CASE("NB slope shrinks toward zero along the contamination grid") {
  TruthSpec spec;
  spec.log_c_sd = 0.0;
  spec.beta_sd = 0.0;
  spec.beta_mean = 0.6;
  spec.sigma2_eps = 1.0;
  spec.log_gamma_mean = std::log(3.0);
  const auto data = generate(1, 2000, spec, 77).dataset;
  SimexConfig cfg;
  cfg.B = 20;
  cfg.sigma2_eps = 1.0;
  const SimexEstimator f = [](const CountDataset& ds, const SimexCell&) {
    return fit_nb_glm(ds, build_design(ds)).beta_hat;
  };
  const auto trace = run_simex(f, data, cfg);
  for (Eigen::Index t = 1; t < trace.mean.rows(); ++t)
    CHECK(std::abs(trace.mean(t, 1)) < std::abs(trace.mean(t - 1, 1)));
  CHECK(std::abs(trace.extrapolated(1) - 0.6) < std::abs(trace.naive(1) - 0.6));
}

TEST_CASE("estimator failures carry their grid cell") {
  SimexConfig cfg;
  cfg.B = 5;
  cfg.sigma2_eps = 1.0;
  const SimexEstimator f = [](const CountDataset&, const SimexCell& c) -> Eigen::VectorXd {
    if ((c.lambda_index == 3 && c.b == 3) || (c.lambda_index == 4 && c.b == 0))
      throw Error(ErrorCode::convergence, "stalled");
    return Eigen::VectorXd::Ones(1);
  };
  for (int threads : {1, 4}) {
    cfg.threads = threads;
    try {
      run_simex(f, tiny_dataset(), cfg);
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::convergence);
      CHECK(std::string(e.what()).find("lambda=1.5, b=3") != std::string::npos);
    }
  }
}

TEST_CASE("invalid SIMEX configurations are config errors") {
  const auto expect_config = [](SimexConfig c) {
    try {
      c.validate();
      FAIL("expected config error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::config);
    }
  };
  SimexConfig c;
  c.lambda_grid = {0.5, 1.0, 2.0};
  expect_config(c);
  c.lambda_grid = {0.0, 1.0};
  expect_config(c);  // quadratic needs three points
  c.extrapolant = Extrapolant::linear;
  CHECK_NOTHROW(c.validate());
  c.B = 0;
  expect_config(c);
  c.B = 1;
  c.lambda_grid = {0.0, 1.0, 1.0};
  expect_config(c);
  CHECK(parse_extrapolant("linear") == Extrapolant::linear);
  CHECK_THROWS_AS(parse_extrapolant("cubic"), Error);
}

TEST_CASE("serial and parallel runs give identical traces") {
  const SimexEstimator f = [](const CountDataset& d, const SimexCell&) {
    Eigen::VectorXd v(2);
    v << d.x().col(0).mean(), d.x().col(0).squaredNorm();
    return v;
  };
  SimexConfig cfg;
  cfg.B = 7;
  cfg.sigma2_eps = 0.5;
  cfg.seed = 4;
  const auto a = run_simex(f, tiny_dataset(40), cfg);
  cfg.threads = 6;
  const auto b = run_simex(f, tiny_dataset(40), cfg);
  CHECK(a.mean == b.mean);
  CHECK(a.extrapolated == b.extrapolated);
  CHECK(a.jackknife_se == b.jackknife_se);
}

TEST_CASE("trace serialises to CSV and JSON") {
  const SimexEstimator f = [](const CountDataset&, const SimexCell& c) {
    Eigen::VectorXd v(1);
    v << c.lambda;
    return v;
  };
  SimexConfig cfg;
  cfg.B = 2;
  cfg.sigma2_eps = 1.0;
  const auto trace = run_simex(f, tiny_dataset(), cfg, {"slope"});
  std::ostringstream out;
  write_trace_csv(trace, out);
  const std::string csv = out.str();
  CHECK(csv.rfind("lambda,parameter,mean,sd\n0,slope,0,0\n", 0) == 0);
  const auto j = to_json(trace);
  CHECK(j["parameters"][0]["name"] == "slope");
  CHECK(j["B"] == 2);
  CHECK(j["extrapolant"] == "quadratic");
}
