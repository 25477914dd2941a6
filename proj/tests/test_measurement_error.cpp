#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "hbsimex/error.hpp"
#include "hbsimex/measurement_error.hpp"
#include "support/oracles.hpp"

using namespace hbsimex;

namespace {

ReplicateSet make_set(std::vector<std::vector<double>> reps) {
  ReplicateSet s;
  for (std::size_t i = 0; i < reps.size(); ++i) s.record_ids.push_back(i);
  s.replicates = std::move(reps);
  return s;
}

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST_CASE("pooled replicate variance on the hand case") {
  CHECK(estimate_error_variance(make_set({{1, 3}, {2, 4}})) == 2.0);
  CHECK(estimate_error_variance(make_set({{5, 5, 5}, {-1, -1}})) == 0.0);
}

TEST_CASE("replicate variance needs at least one degree of freedom") {
  try {
    estimate_error_variance(make_set({{1}, {2}, {3}}));
    FAIL("expected insufficient replicates");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::insufficient_replicates);
  }
  // Records with a single replicate contribute nothing but do not block estimation.
  CHECK(estimate_error_variance(make_set({{1}, {2, 4}})) == 2.0);
}

TEST_CASE("pooled estimator equals the one-way ANOVA within mean square") {
  std::mt19937_64 gen(31337);
  std::uniform_int_distribution<int> n_dist(1, 10), q_dist(1, 4);
  std::normal_distribution<double> norm(0.0, 3.0);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::vector<double>> groups(static_cast<std::size_t>(n_dist(gen)));
    for (auto& g : groups) {
      g.resize(static_cast<std::size_t>(q_dist(gen)));
      const double centre = norm(gen) * 10.0;
      for (auto& v : g) v = centre + norm(gen);
    }
    groups.front().resize(std::max<std::size_t>(2, groups.front().size()), 0.25);
    const double expected = oracle::anova_within_mean_square(groups);
    const double got = estimate_error_variance(make_set(groups));
    CAPTURE(trial);
    CHECK(std::abs(got - expected) <= 1e-12 * std::max(1.0, std::abs(expected)));
    ++checked;
  }
  CHECK(checked == 1000);
}

TEST_CASE("adding a constant to one record's replicates changes nothing") {
  const auto base = make_set({{1.0, 2.5, 4.0}, {3.0, 3.5}, {10.0, 7.0}});
  auto shifted = base;
  for (auto& v : shifted.replicates[1]) v += 1000.0;
  CHECK(estimate_error_variance(shifted) == doctest::Approx(estimate_error_variance(base)).epsilon(1e-12));
}

TEST_CASE("bootstrap replicates are deterministic under a seed") {
  const std::vector<double> x{1, 4, 2, 8, 5, 7};
  const std::vector<int> cohort{0, 0, 0, 1, 1, 1};
  const auto a = bootstrap_replicates(x, cohort, 5, 17);
  const auto b = bootstrap_replicates(x, cohort, 5, 17);
  CHECK(a.replicates == b.replicates);
  CHECK(a.record_ids == b.record_ids);
  CHECK(a.replicates.size() == x.size());
  CHECK(a.replicates[0].size() == 5);
  const auto c = bootstrap_replicates(x, cohort, 5, 18);
  CHECK(a.replicates != c.replicates);
}

TEST_CASE("constant covariate bootstraps to zero error variance") {
  const std::vector<double> x(50, 3.25);
  const auto reps = bootstrap_replicates(x, 4, 1);
  for (const auto& r : reps.replicates)
    for (double v : r) CHECK(v == 3.25);
  CHECK(estimate_error_variance(reps) == 0.0);
}

TEST_CASE("bootstrap recovers a known residual variance") {
  std::mt19937_64 gen(8);
  const double v = 2.5;
  std::normal_distribution<double> resid(0.0, std::sqrt(v));
  const int n = 10000;
  std::vector<double> x(n);
  std::vector<int> cohort(n);
  for (int i = 0; i < n; ++i) {
    cohort[static_cast<std::size_t>(i)] = i % 20;
    x[static_cast<std::size_t>(i)] = 3.0 * (i % 20) + resid(gen);
  }
  const double within = estimate_error_variance(bootstrap_replicates(x, cohort, 10, 4));
  CHECK(within == doctest::Approx(v).epsilon(0.05));
  // The global pool also absorbs the between-cohort spread.
  const double global =
      estimate_error_variance(bootstrap_replicates(x, cohort, 10, 4, ResidualPool::global));
  CHECK(global > 10.0 * v);
}

TEST_CASE("bootstrap needs at least two replicates") {
  const std::vector<double> x{1, 2, 3};
  try {
    bootstrap_replicates(x, 1, 3);
    FAIL("expected a parameter error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parameter);
  }
}

TEST_CASE("contamination at lambda zero is the identity") {
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(100, -3, 3);
  CHECK(contaminate(x, 0.0, 4.0, 5) == x);
  CHECK(contaminate(x, 2.0, 0.0, 5) == x);
}

TEST_CASE("contamination adds lambda times the error variance") {
  const int n = 100000;
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  const auto w = to_vec(contaminate(x, 1.0, 4.0, 12));
  const double var = oracle::variance(w);
  CHECK(var >= 3.9);
  CHECK(var <= 4.1);
  CHECK(contaminate(x, 1.0, 4.0, 12) == contaminate(x, 1.0, 4.0, 12));
}

TEST_CASE("total error variance scales with 1 + lambda") {
  const int n = 100000;
  std::mt19937_64 gen(6);
  std::normal_distribution<double> norm;
  const double s2 = 2.0;
  Eigen::VectorXd u(n), x(n);
  for (int i = 0; i < n; ++i) {
    u(i) = norm(gen);
    x(i) = u(i) + std::sqrt(s2) * norm(gen);
  }
  const auto err0 = to_vec(x - u);
  const auto err1 = to_vec(contaminate(x, 1.0, s2, 99) - u);
  CHECK(oracle::variance(err1) / oracle::variance(err0) == doctest::Approx(2.0).epsilon(0.03));
}

TEST_CASE("independent seeds give uncorrelated contamination noise") {
  const int n = 100000;
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  const auto a = to_vec(contaminate(x, 1.0, 1.0, 1));
  const auto b = to_vec(contaminate(x, 1.0, 1.0, 2));
  CHECK(std::abs(oracle::correlation(a, b)) < 0.05);
}

TEST_CASE("negative contamination inputs are domain errors") {
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
  for (auto [lambda, s2] : {std::pair{-0.5, 1.0}, std::pair{1.0, -1.0}}) {
    try {
      contaminate(x, lambda, s2, 1);
      FAIL("expected a domain error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::domain);
    }
  }
}

TEST_CASE("replicate CSV round-trips") {
  oracle::TempDir dir("reps");
  const auto set = make_set({{1.5, 2.25}, {3.0}, {0.1, 0.2, 0.30000000000000004}});
  write_replicates_csv(set, dir / "r.csv");
  const auto back = read_replicates_csv(dir / "r.csv");
  CHECK(back.record_ids == set.record_ids);
  CHECK(back.replicates == set.replicates);
  CHECK(back.degrees_of_freedom() == 3);
  CHECK(back.total_measurements() == 6);

  oracle::write_file(dir / "bad.csv", "record_id,replicate_index,value\n0,0,abc\n");
  CHECK_THROWS_AS(read_replicates_csv(dir / "bad.csv"), Error);
}

TEST_CASE("error model diagnostics subtract the error variance") {
  const std::vector<double> x{1, 2, 3, 4, 5};  // variance 2.5
  const auto m = describe_error_model(x, 1.0);
  REQUIRE(m.sigma2_u.has_value());
  CHECK(*m.sigma2_u == doctest::Approx(1.5));
  CHECK(*m.mean_u == doctest::Approx(3.0));
  CHECK(*describe_error_model(x, 10.0).sigma2_u == 0.0);
}
