#include <doctest.h>

#include <cmath>
#include <vector>

#include <json.hpp>

#include "hbsimex/count_glm.hpp"
#include "hbsimex/data.hpp"
#include "hbsimex/error.hpp"
#include "hbsimex/synthgen.hpp"
#include "support/oracles.hpp"

using namespace hbsimex;

namespace {

std::vector<double> as_double(const std::vector<std::int64_t>& y) {
  return std::vector<double>(y.begin(), y.end());
}

TruthSpec flat_spec() {
  TruthSpec s;
  s.log_c_sd = 0.0;
  s.beta_sd = 0.0;
  s.log_gamma_sd = 0.0;
  return s;
}

}  // namespace

TEST_CASE("large gamma approaches the Poisson limit") {
  auto spec = flat_spec();
  spec.beta_mean = 0.0;
  spec.log_gamma_mean = std::log(1e8);
  const auto y = as_double(generate(1, 100000, spec, 1).dataset.y());
  const double index = oracle::variance(y) / oracle::mean(y);
  CHECK(index >= 0.9);
  CHECK(index <= 1.1);
  CHECK(oracle::mean(y) == doctest::Approx(std::exp(1.0)).epsilon(0.02));
}

TEST_CASE("counts are overdispersed as 1 + mu / gamma") {
  auto spec = flat_spec();
  spec.beta_mean = 0.0;
  spec.log_gamma_mean = 0.0;
  const auto y = as_double(generate(1, 100000, spec, 2).dataset.y());
  const double mu = std::exp(1.0);
  CHECK(oracle::mean(y) == doctest::Approx(mu).epsilon(0.02));
  CHECK(oracle::variance(y) / oracle::mean(y) == doctest::Approx(1.0 + mu).epsilon(0.05));
}

TEST_CASE("a zero slope gives no detectable effect") {
  auto spec = flat_spec();
  spec.beta_mean = 0.0;
  const auto data = generate(1, 3000, spec, 3).dataset;
  const auto fit = fit_nb_glm(data, build_design(data));
  CHECK(std::abs(fit.beta_hat(1)) < 3.0 * std::sqrt(fit.cov_beta(1, 1)));
}

TEST_CASE("observed covariate carries the requested error variance") {
  auto spec = flat_spec();
  spec.sigma2_eps = 0.7;
  const auto syn = generate(2, 20000, spec, 4);
  const auto x = syn.dataset.error_prone_values();
  std::vector<double> d(static_cast<std::size_t>(x.size())), u(d.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    d[static_cast<std::size_t>(i)] = x(i) - syn.truth.u(i);
    u[static_cast<std::size_t>(i)] = syn.truth.u(i);
  }
  CHECK(oracle::variance(d) == doctest::Approx(0.7).epsilon(0.03));
  CHECK(std::abs(oracle::mean(d)) < 0.02);
  CHECK(oracle::variance(u) == doctest::Approx(1.0).epsilon(0.03));
  CHECK(std::abs(oracle::correlation(d, u)) < 0.02);

  spec.sigma2_eps = 0.0;
  const auto clean = generate(1, 100, spec, 4);
  CHECK(clean.dataset.error_prone_values() == clean.truth.u);
}

TEST_CASE("intercept and slope follow the requested correlation") {
  TruthSpec spec;
  spec.rho = -0.7;
  std::vector<double> rs;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto t = generate(36, 1, spec, s).truth;
    std::vector<double> lc, b;
    for (int j = 0; j < 36; ++j) {
      lc.push_back(std::log(t.C(j)));
      b.push_back(t.beta(j));
    }
    rs.push_back(oracle::correlation(lc, b));
  }
  const double r = oracle::mean(rs);
  CHECK(r >= -0.85);
  CHECK(r <= -0.5);

  const auto big = generate(5000, 1, spec, 99).truth;
  std::vector<double> lc, b;
  for (int j = 0; j < 5000; ++j) {
    lc.push_back(std::log(big.C(j)));
    b.push_back(big.beta(j));
  }
  CHECK(oracle::correlation(lc, b) == doctest::Approx(-0.7).epsilon(0.05));
  CHECK(oracle::mean(b) == doctest::Approx(0.5).epsilon(0.02));
  CHECK(std::sqrt(oracle::variance(b)) == doctest::Approx(0.2).epsilon(0.05));
}

TEST_CASE("naive slope is attenuated under covariate error") {
  auto spec = flat_spec();
  spec.sigma2_eps = 1.0;
  int attenuated = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto data = generate(1, 500, spec, 1000 + s).dataset;
    const auto fit = fit_nb_glm(data, build_design(data));
    if (fit.beta_hat(1) < spec.beta_mean) ++attenuated;
  }
  CHECK(attenuated >= 95);
}

TEST_CASE("generation is deterministic in the seed") {
  TruthSpec spec;
  spec.extra_slopes = {0.3, -0.2};
  const auto a = generate(3, 50, spec, 17);
  const auto b = generate(3, 50, spec, 17);
  const auto c = generate(3, 50, spec, 18);
  CHECK(a.dataset == b.dataset);
  CHECK(a.truth.beta == b.truth.beta);
  CHECK_FALSE(a.dataset == c.dataset);
  CHECK(a.dataset.n() == 150);
  CHECK(a.dataset.m() == 3);
  CHECK(a.dataset.p() == 3);
  CHECK(a.dataset.covariates()[2].name == "z2");
  CHECK(a.dataset.cohort_labels() == std::vector<std::string>{"1", "2", "3"});
}

TEST_CASE("invalid truth specs are rejected") {
  TruthSpec spec;
  spec.rho = 1.0;
  CHECK_THROWS_AS(generate(2, 2, spec, 1), Error);
  spec.rho = 0.0;
  spec.sigma2_eps = -1.0;
  CHECK_THROWS_AS(generate(2, 2, spec, 1), Error);
  spec.sigma2_eps = 1.0;
  CHECK_THROWS_AS(generate(0, 2, spec, 1), Error);
  spec.extra_slopes = {std::nan("")};
  CHECK_THROWS_AS(generate(2, 2, spec, 1), Error);
}

TEST_CASE("synthetic data round-trips through CSV and JSON") {
  oracle::TempDir dir("synth");
  TruthSpec spec;
  const auto syn = generate(2, 10, spec, 5);
  write_synthetic(syn, dir / "data.csv", dir / "truth.json");
  const std::string csv = oracle::read_file(dir / "data.csv");
  CHECK(csv.find("u_true") != std::string::npos);
  const auto truth = nlohmann::json::parse(oracle::read_file(dir / "truth.json"));
  CHECK(truth["m"] == 2);
  CHECK(truth["seed"] == 5);
  CHECK(truth["beta"].size() == 2);
  CHECK(truth["beta"][1].get<double>() == syn.truth.beta(1));

  Schema schema;
  schema.outcome = "y";
  schema.cohort = "cohort";
  schema.covariates = {"x", "u_true"};
  schema.error_prone = "x";
  const auto back = ingest_csv(dir / "data.csv", schema);
  CHECK(back.y() == syn.dataset.y());
  for (Eigen::Index i = 0; i < 20; ++i) {
    CHECK(back.x()(i, 0) == doctest::Approx(syn.dataset.x()(i, 0)).epsilon(1e-15));
    CHECK(back.x()(i, 1) == doctest::Approx(syn.truth.u(i)).epsilon(1e-15));
  }
}
