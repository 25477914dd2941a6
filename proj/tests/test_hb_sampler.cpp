#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "hbsimex/count_glm.hpp"
#include "hbsimex/error.hpp"
#include "hbsimex/hb_sampler.hpp"
#include "hbsimex/rng.hpp"
#include "hbsimex/synthgen.hpp"
#include "support/oracles.hpp"

using namespace hbsimex;

namespace {

FixedHypers unit_hypers(int p = 1) {
  FixedHypers f;
  f.alpha = 0.01;
  f.nu = (f.alpha + 1.0) + (p + 1.0) + 1.0;
  f.tau = f.alpha + 1.0;
  f.sigma_e = Eigen::MatrixXd::Identity(p, p);
  f.sigma_0 = Eigen::MatrixXd::Identity(p, p);
  f.g = 100.0;
  return f;
}

CohortData empty_cohort(int p = 1) { return CohortData(Eigen::MatrixXd(0, p), {}); }

struct Fitted {
  CountDataset data;
  DesignMatrix design;
  FixedHypers fixed;
  ChainInit init;
};

Fitted prepare(const CountDataset& data) {
  auto design = build_design(data);
  const auto glm = fit_nb_glm(data, design);
  double mom = glm.gamma_hat;
  try {
    mom = mom_dispersion(data.y());
  } catch (const Error&) {
  }
  auto fixed = default_fixed_hypers(glm, data.n(), mom);
  auto init = default_chain_init(glm, fixed, data.n());
  return {data, std::move(design), std::move(fixed), std::move(init)};
}

std::vector<double> thinned(const std::vector<double>& v, std::size_t step) {
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); i += step) out.push_back(v[i]);
  return out;
}

}  // namespace

TEST_CASE("mu weights follow g") {
  const auto w = mu_weights(1800.0);
  CHECK(w.on_glm == doctest::Approx(1.0 / 1801.0).epsilon(1e-14));
  CHECK(w.on_beta == doctest::Approx(1800.0 / 1801.0).epsilon(1e-14));
  CHECK(w.on_glm + w.on_beta == doctest::Approx(1.0));
  CHECK(mu_weights(1e4).on_glm < 1e-3);
  CHECK(mu_weights(1.0).on_glm == doctest::Approx(0.5));
}

TEST_CASE("Lambda scale reduces to tau Sigma_E at beta = mu") {
  auto f = unit_hypers(2);
  f.sigma_e << 2.0, 0.3, 0.3, 1.0;
  const Eigen::VectorXd b = Eigen::Vector2d(0.4, -1.0);
  CHECK(lambda_posterior_scale(b, b, f).isApprox(f.tau * f.sigma_e, 1e-15));
  const Eigen::VectorXd mu = Eigen::Vector2d(0.0, 0.0);
  const Eigen::MatrixXd expect = f.tau * f.sigma_e + b * b.transpose();
  CHECK(lambda_posterior_scale(b, mu, f).isApprox(expect, 1e-15));
}

TEST_CASE("mu draws centre on the weighted combination") {
  auto f = unit_hypers();
  f.g = 1.0;
  HierParams theta;
  theta.beta = Eigen::VectorXd::Constant(1, 2.0);
  const Eigen::MatrixXd Lambda = Eigen::MatrixXd::Constant(1, 1, 0.5);
  const Eigen::VectorXd glm = Eigen::VectorXd::Constant(1, 0.0);
  Rng rng(3);
  std::vector<double> d;
  for (int i = 0; i < 20000; ++i) d.push_back(sample_mu(theta, Lambda, f, glm, rng)(0));
  CHECK(oracle::mean(d) == doctest::Approx(1.0).epsilon(0.02));
  CHECK(oracle::variance(d) == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("k draws from Gamma(s, t)") {
  auto f = unit_hypers();
  Rng rng(11);
  std::vector<double> d;
  for (int i = 0; i < 40000; ++i) d.push_back(sample_k(f, rng));
  CHECK(oracle::mean(d) == doctest::Approx(0.001).epsilon(0.1));

  f.s = 1.0;
  std::vector<double> e;
  for (int i = 0; i < 4000; ++i) e.push_back(sample_k(f, rng));
  CHECK(oracle::ks_one_sample(e, [](double x) { return 1.0 - std::exp(-x); }).p_value > 0.01);

  f.t = 0.0;
  CHECK_THROWS_AS(sample_k(f, rng), Error);
}

TEST_CASE("a draws use shape k + u and scale gamma + v") {
  const auto f = unit_hypers();
  Rng rng(12);
  std::vector<double> d, e;
  for (int i = 0; i < 40000; ++i) {
    d.push_back(sample_a(0.0, 0.0, f, rng));
    e.push_back(sample_a(0.0, 1.0, f, rng));
  }
  CHECK(oracle::mean(d) == doctest::Approx(1.0).epsilon(0.03));
  CHECK(oracle::mean(e) == doctest::Approx(2.0).epsilon(0.03));
  CHECK(oracle::ks_one_sample(thinned(d, 10), [](double x) { return 1.0 - std::exp(-x); }).p_value >
        0.01);
}

TEST_CASE("adaptive prior has the running mean as its mean") {
  const auto first = adaptive_gamma_prior(0.5, 1, 4.0);
  CHECK(first.shape == 0.5);
  CHECK(first.rate == doctest::Approx(0.5 / 4.0));
  const auto later = adaptive_gamma_prior(2.0, 10, 30.0);
  CHECK(later.mean() == doctest::Approx(3.0));
  CHECK_THROWS_AS(adaptive_gamma_prior(1.0, 0, 1.0), Error);
  CHECK_THROWS_AS(adaptive_gamma_prior(1.0, 1, 0.0), Error);
}

TEST_CASE("acceptance probability edge cases") {
  CHECK(acceptance_probability(0.0, false) == 1.0);
  CHECK(acceptance_probability(std::log(0.25), false) == doctest::Approx(0.25));
  CHECK(acceptance_probability(-1e-9, true) == 0.0);
  CHECK(acceptance_probability(0.0, true) == 1.0);
  CHECK(acceptance_probability(std::nan(""), false) == 0.0);
}

TEST_CASE("non-finite proposals are rejected") {
  const CohortData data(Eigen::MatrixXd::Constant(3, 1, 1.0), {1, 2, 3});
  HierParams theta;
  theta.beta = Eigen::VectorXd::Constant(1, 0.1);
  theta.C = 1.0;
  theta.gamma = 1.0;
  Rng rng(5);
  // A proposal scale this large pushes exp(log C) past the double range.
  for (int i = 0; i < 20; ++i) {
    const auto r = sample_C_mh(data, theta, {1.0, 1.0}, 1e6, false, rng);
    CHECK_FALSE(r.accepted);
    CHECK(r.accept_prob == 0.0);
    CHECK(theta.C == 1.0);
  }
  CHECK(cohort_loglik(data, theta.beta, 0.0, 1.0) == -std::numeric_limits<double>::infinity());
  CHECK(cohort_loglik(data, theta.beta, 1.0, std::nan("")) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("cohort log-likelihood agrees with the pointwise pmf") {
  const Eigen::MatrixXd x = (Eigen::MatrixXd(4, 2) << 0.1, 1, -0.5, 0, 1.2, 1, 0.0, 0).finished();
  const std::vector<std::int64_t> y{0, 3, 11, 1};
  const CohortData data(x, y);
  const Eigen::VectorXd beta = Eigen::Vector2d(0.7, -0.2);
  for (double gamma : {0.3, 1.0, 4.5}) {
    double direct = 0.0;
    for (int i = 0; i < 4; ++i)
      direct += nb_logpmf(y[static_cast<std::size_t>(i)], {2.5 * std::exp(x.row(i).dot(beta)), gamma});
    CHECK(cohort_loglik(data, beta, 2.5, gamma) == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("each MH block leaves its prior invariant when there is no data") {
  const auto data = empty_cohort();
  SUBCASE("beta") {
    HyperParams delta;
    delta.mu = Eigen::VectorXd::Constant(1, 0.3);
    delta.Lambda = Eigen::MatrixXd::Constant(1, 1, 2.0);
    HierParams theta;
    theta.beta = Eigen::VectorXd::Constant(1, 0.0);
    const Eigen::MatrixXd chol = Eigen::MatrixXd::Identity(1, 1);
    Rng rng(21);
    std::vector<double> draws;
    for (int i = 0; i < 60000; ++i) {
      sample_beta_mh(data, theta, delta, chol, 3.0, false, rng);
      if (i % 30 == 0) draws.push_back(theta.beta(0));
    }
    const auto ks = oracle::ks_one_sample(
        draws, [](double x) { return oracle::normal_cdf(x, 0.3, std::sqrt(2.0)); });
    CHECK(ks.p_value > 0.01);
  }
  SUBCASE("C") {
    HierParams theta;
    theta.beta = Eigen::VectorXd::Constant(1, 0.0);
    Rng rng(22);
    std::vector<double> draws;
    for (int i = 0; i < 60000; ++i) {
      sample_C_mh(data, theta, {2.0, 1.0}, 1.2, false, rng);
      if (i % 30 == 0) draws.push_back(theta.C);
    }
    CHECK(oracle::ks_one_sample(draws, [](double x) { return oracle::gamma_cdf(x, 2.0, 1.0); })
              .p_value > 0.01);
  }
  SUBCASE("gamma") {
    HierParams theta;
    theta.beta = Eigen::VectorXd::Constant(1, 0.0);
    Rng rng(23);
    std::vector<double> draws;
    for (int i = 0; i < 60000; ++i) {
      sample_gamma_mh(data, theta, {3.0, 0.5}, 1.0, false, rng);
      if (i % 30 == 0) draws.push_back(theta.gamma);
    }
    CHECK(oracle::ks_one_sample(draws, [](double x) { return oracle::gamma_cdf(x, 3.0, 0.5); })
              .p_value > 0.01);
  }
}

TEST_CASE("a proposal equal to the current state is always accepted") {
  const CohortData data(Eigen::MatrixXd::Constant(3, 1, 1.0), {1, 2, 3});
  HierParams theta;
  theta.beta = Eigen::VectorXd::Constant(1, 0.1);
  HyperParams delta;
  delta.mu = theta.beta;
  delta.Lambda = Eigen::MatrixXd::Identity(1, 1);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto r = sample_beta_mh(data, theta, delta, Eigen::MatrixXd::Identity(1, 1), 0.0, false, rng);
    CHECK(r.accepted);
    CHECK(r.accept_prob == 1.0);
  }
}

TEST_CASE("cached and uncached block updates agree") {
  const CohortData data((Eigen::MatrixXd(3, 1) << 0.2, -1.0, 0.5).finished(), {1, 0, 4});
  HierParams a;
  a.beta = Eigen::VectorXd::Constant(1, 0.1);
  HierParams b = a;
  HyperParams delta;
  delta.mu = a.beta;
  delta.Lambda = Eigen::MatrixXd::Identity(1, 1);
  Rng ra(9), rb(9);
  double ll = cohort_loglik(data, b.beta, b.C, b.gamma);
  for (int i = 0; i < 200; ++i) {
    sample_beta_mh(data, a, delta, Eigen::MatrixXd::Identity(1, 1), 0.8, false, ra);
    sample_beta_mh(data, b, delta, Eigen::MatrixXd::Identity(1, 1), 0.8, false, rb, ll);
    sample_C_mh(data, a, {1.0, 1.0}, 0.5, false, ra);
    sample_C_mh(data, b, {1.0, 1.0}, 0.5, false, rb, ll);
    sample_gamma_mh(data, a, {1.0, 1.0}, 0.5, false, ra);
    sample_gamma_mh(data, b, {1.0, 1.0}, 0.5, false, rb, ll);
  }
  CHECK(a.beta == b.beta);
  CHECK(a.C == b.C);
  CHECK(a.gamma == b.gamma);
  CHECK(ll == doctest::Approx(cohort_loglik(data, b.beta, b.C, b.gamma)).epsilon(1e-12));
}

TEST_CASE("slope posterior covers the truth on a clean cohort") {
  TruthSpec spec;
  spec.sigma2_eps = 0.0;
  spec.log_c_sd = 0.0;
  spec.beta_sd = 0.0;
  spec.beta_mean = 0.5;
  int covered = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto f = prepare(generate(1, 300, spec, 100 + s).dataset);
    SamplerOptions opt;
    opt.H = 1500;
    opt.burn_in = 500;
    const auto chain = run_chain_on_design(f.data, f.design, f.fixed, f.init, opt, s);
    std::vector<double> b;
    for (const auto& d : chain.cohorts[0].draws) b.push_back(d.beta(0));
    const double m = oracle::mean(b), sd = std::sqrt(oracle::variance(b));
    if (std::abs(m - 0.5) < 3.0 * sd) ++covered;
  }
  CHECK(covered >= 9);
}

TEST_CASE("dispersion posterior tracks the data") {
  TruthSpec spec;
  spec.sigma2_eps = 0.0;
  spec.log_c_sd = 0.0;
  spec.beta_sd = 0.0;
  SUBCASE("gamma = 0.5") {
    spec.log_gamma_mean = std::log(0.5);
    const auto f = prepare(generate(1, 500, spec, 8).dataset);
    SamplerOptions opt;
    const auto chain = run_chain_on_design(f.data, f.design, f.fixed, f.init, opt, 8);
    std::vector<double> g;
    for (const auto& d : chain.cohorts[0].draws) g.push_back(d.gamma);
    const double med = oracle::median(g);
    CHECK(med >= 0.25);
    CHECK(med <= 1.0);
  }
  SUBCASE("Poisson counts push gamma upward") {
    spec.log_gamma_mean = std::log(1e7);
    const auto f = prepare(generate(1, 500, spec, 9).dataset);
    auto init = f.init;
    init.theta.gamma = 1.0;
    auto fixed = f.fixed;
    fixed.prior_mean_gamma = 1.0;
    SamplerOptions opt;
    const auto chain = run_chain_on_design(f.data, f.design, fixed, init, opt, 9);
    std::vector<double> g;
    for (const auto& d : chain.cohorts[0].draws) g.push_back(d.gamma);
    CHECK(oracle::median(g) > 10.0);
  }
}

TEST_CASE("chain structure and determinism") {
  TruthSpec spec;
  const auto f = prepare(generate(4, 60, spec, 2).dataset);
  SamplerOptions opt;
  opt.H = 300;
  opt.burn_in = 100;
  const auto a = run_chain_on_design(f.data, f.design, f.fixed, f.init, opt, 5);
  opt.threads = 3;
  const auto b = run_chain_on_design(f.data, f.design, f.fixed, f.init, opt, 5);
  REQUIRE(a.cohorts.size() == 4);
  CHECK(a.draw_count() == 200);
  CHECK(a.slope_count() == 1);
  for (std::size_t j = 0; j < 4; ++j) {
    for (std::size_t h = 0; h < 200; ++h) {
      const auto& x = a.cohorts[j].draws[h];
      const auto& y = b.cohorts[j].draws[h];
      CHECK(x.beta == y.beta);
      CHECK(x.C == y.C);
      CHECK(x.gamma == y.gamma);
      CHECK(x.C > 0);
      CHECK(x.gamma > 0);
      CHECK(a.cohorts[j].hyper_draws[h].Lambda.llt().info() == Eigen::Success);
    }
    for (int blk = 0; blk < 3; ++blk) CHECK(a.cohorts[j].accept[blk].proposed == 300);
  }
  const auto c = run_chain_on_design(f.data, f.design, f.fixed, f.init, opt, 6);
  CHECK(c.cohorts[0].draws.back().C != a.cohorts[0].draws.back().C);

  opt.burn_in = opt.H;
  CHECK(run_chain_on_design(f.data, f.design, f.fixed, f.init, opt, 5).draw_count() == 0);
  opt.burn_in = opt.H + 1;
  CHECK_THROWS_AS(run_chain_on_design(f.data, f.design, f.fixed, f.init, opt, 5), Error);
}

TEST_CASE("relabelling cohorts permutes the draws") {
  TruthSpec spec;
  const auto base = generate(3, 40, spec, 4).dataset;
  std::vector<int> cohort = base.cohort();
  for (auto& c : cohort) c = 2 - c;
  std::vector<std::string> labels(base.cohort_labels().rbegin(), base.cohort_labels().rend());
  const CountDataset permuted(base.y(), base.x(), cohort, labels, base.covariates(),
                              base.error_prone_index());
  const auto f = prepare(base);
  const auto design_p = build_design(permuted);
  SamplerOptions opt;
  opt.H = 200;
  opt.burn_in = 50;
  const auto a = run_chain_on_design(base, f.design, f.fixed, f.init, opt, 77);
  const auto b = run_chain_on_design(permuted, design_p, f.fixed, f.init, opt, 77);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(a.cohorts[j].draws.back().C == b.cohorts[2 - j].draws.back().C);
    CHECK(a.cohorts[j].draws.back().beta == b.cohorts[2 - j].draws.back().beta);
  }
}

TEST_CASE("greedy acceptance only moves uphill") {
  TruthSpec spec;
  const auto f = prepare(generate(1, 80, spec, 12).dataset);
  const auto cohorts = split_by_cohort(f.design, f.data);
  HierParams theta = f.init.theta;
  const GammaShapeRate prior{2.0, 2.0 / theta.C};
  // Target on the log C scale: likelihood x prior x Jacobian C.
  const auto target = [&] {
    return cohort_loglik(cohorts[0], theta.beta, theta.C, theta.gamma) +
           gamma_log_kernel(theta.C, prior) + std::log(theta.C);
  };
  Rng rng(2);
  double last = target();
  for (int i = 0; i < 300; ++i) {
    const auto r = sample_C_mh(cohorts[0], theta, prior, 0.2, true, rng);
    CHECK((r.accept_prob == 0.0 || r.accept_prob == 1.0));
    const double now = target();
    CHECK(now >= last - 1e-9);
    last = now;
  }
  SamplerOptions opt;
  opt.H = 200;
  opt.burn_in = 100;
  opt.greedy_accept = true;
  CHECK(run_chain_on_design(f.data, f.design, f.fixed, f.init, opt, 1).draw_count() == 100);
}

TEST_CASE("gamma rate variant names") {
  CHECK(parse_gamma_rate_variant("gamma-sum") == GammaRateVariant::gamma_sum);
  CHECK(parse_gamma_rate_variant("c-sum") == GammaRateVariant::c_sum);
  CHECK(to_string(GammaRateVariant::c_sum) == "c-sum");
  CHECK_THROWS_AS(parse_gamma_rate_variant("other"), Error);

  TruthSpec spec;
  const auto f = prepare(generate(2, 50, spec, 3).dataset);
  SamplerOptions opt;
  opt.H = 200;
  opt.burn_in = 100;
  const auto a = run_chain_on_design(f.data, f.design, f.fixed, f.init, opt, 3);
  opt.gamma_rate = GammaRateVariant::c_sum;
  const auto b = run_chain_on_design(f.data, f.design, f.fixed, f.init, opt, 3);
  CHECK(b.draw_count() == 100);
  bool differs = false;
  for (std::size_t h = 0; h < 100; ++h)
    differs = differs || a.cohorts[0].draws[h].gamma != b.cohorts[0].draws[h].gamma;
  CHECK(differs);
}

TEST_CASE("a block that never accepts is reported as stuck") {
  TruthSpec spec;
  const auto f = prepare(generate(2, 50, spec, 3).dataset);
  auto init = f.init;
  init.proposal_cov = Eigen::MatrixXd::Constant(1, 1, 1e12);
  SamplerOptions opt;
  opt.H = 300;
  opt.burn_in = 0;
  opt.stuck_window = 100;
  const auto chain = run_chain_on_design(f.data, f.design, f.fixed, init, opt, 1);
  REQUIRE_FALSE(chain.warnings.empty());
  CHECK(chain.warnings.front().find("stuck chain") != std::string::npos);
  CHECK(chain.warnings.front().find("beta") != std::string::npos);
}

TEST_CASE("invalid fixed hypers are rejected") {
  auto f = unit_hypers();
  f.nu = 2.0;
  CHECK_THROWS_AS(f.validate(), Error);
  f = unit_hypers();
  f.tau = 0.0;
  CHECK_THROWS_AS(f.validate(), Error);
  f = unit_hypers();
  f.sigma_e(0, 0) = -1.0;
  CHECK_THROWS_AS(f.validate(), Error);
  CHECK_NOTHROW(unit_hypers(3).validate());
}

TEST_CASE("posterior summary vector layout") {
  TruthSpec spec;
  spec.extra_slopes = {0.2};
  const auto f = prepare(generate(2, 60, spec, 1).dataset);
  SamplerOptions opt;
  opt.H = 100;
  opt.burn_in = 50;
  const auto chain = run_chain_on_design(f.data, f.design, f.fixed, f.init, opt, 1);
  const auto v = posterior_summary_vector(chain);
  CHECK(v.size() == 2 * 4);
  double mean_c = 0.0;
  for (const auto& d : chain.cohorts[1].draws) mean_c += std::log(d.C);
  CHECK(v(4 + 2) == doctest::Approx(mean_c / 50.0));
  const auto names = posterior_summary_names(chain, {"x", "z1"});
  REQUIRE(names.size() == 8);
}
