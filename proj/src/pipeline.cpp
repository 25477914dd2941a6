#include "hbsimex/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include "hbsimex/error.hpp"
#include "hbsimex/linalg.hpp"
#include "hbsimex/rng.hpp"

namespace hbsimex {

ModelKind parse_model_kind(const std::string& name) {
  if (name == "glm") return ModelKind::glm;
  if (name == "glm-simex") return ModelKind::glm_simex;
  if (name == "hb-simex") return ModelKind::hb_simex;
  if (name == "hb") return ModelKind::hb;
  throw Error(ErrorCode::config, "unknown model '" + name + "' (expected glm, glm-simex, hb-simex, hb)");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::glm: return "glm";
    case ModelKind::glm_simex: return "glm-simex";
    case ModelKind::hb_simex: return "hb-simex";
    case ModelKind::hb: return "hb";
  }
  return "unknown";
}

bool uses_simex(ModelKind kind) {
  return kind == ModelKind::glm_simex || kind == ModelKind::hb_simex;
}

bool is_hierarchical(ModelKind kind) { return kind == ModelKind::hb_simex || kind == ModelKind::hb; }

namespace {

constexpr std::uint64_t kChainTag = 0x636861696eULL;
constexpr std::uint64_t kGlmDrawTag = 0x676c6d64ULL;
constexpr std::uint64_t kSimexTag = 0x73696d6578ULL;

std::vector<std::string> slope_names(const DesignMatrix& design) {
  std::vector<std::string> names;
  for (const auto& c : design.column_map) names.push_back(c.name);
  return names;
}

// Several independent chains are pooled by concatenating their draws.
Chain run_pooled_chains(const CountDataset& data, const DesignMatrix& design,
                        const FixedHypers& fixed, const ChainInit& init,
                        const SamplerOptions& options, int chains, std::uint64_t seed) {
  Chain pooled = run_chain_on_design(data, design, fixed, init, options, derive_seed(seed, {0}));
  for (int c = 1; c < chains; ++c) {
    Chain next = run_chain_on_design(data, design, fixed, init, options,
                                     derive_seed(seed, {static_cast<std::uint64_t>(c)}));
    for (std::size_t j = 0; j < pooled.cohorts.size(); ++j) {
      auto& into = pooled.cohorts[j];
      auto& from = next.cohorts[j];
      into.draws.insert(into.draws.end(), from.draws.begin(), from.draws.end());
      into.hyper_draws.insert(into.hyper_draws.end(), from.hyper_draws.begin(),
                              from.hyper_draws.end());
      for (int b = 0; b < 3; ++b) {
        into.accept[b].accepted += from.accept[b].accepted;
        into.accept[b].proposed += from.accept[b].proposed;
        into.stuck[b] = into.stuck[b] || from.stuck[b];
      }
    }
    pooled.warnings.insert(pooled.warnings.end(), next.warnings.begin(), next.warnings.end());
  }
  pooled.seed = seed;
  return pooled;
}

double safe_mom_dispersion(std::span<const std::int64_t> y, double fallback) {
  try {
    return mom_dispersion(y);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::underdispersion) throw;
    return fallback;
  }
}

}  // namespace

ModelFit fit_model(const CountDataset& train, const PipelineSettings& settings) {
  ModelFit fit;
  fit.kind = settings.model;
  const DesignMatrix design = build_design(train);
  const auto P = design.cols();
  fit.coefficient_names.push_back("(Intercept)");
  for (const auto& name : slope_names(design)) fit.coefficient_names.push_back(name);

  fit.naive = fit_nb_glm(train, design, settings.glm);
  fit.beta = fit.naive.beta_hat;
  fit.gamma = fit.naive.gamma_hat;
  fit.cov_beta = fit.naive.cov_beta;
  fit.parameter_count = static_cast<std::size_t>(P) + 1;

  if (uses_simex(settings.model)) {
    SimexConfig config = settings.simex;
    config.threads = settings.threads;
    config.seed = derive_seed(settings.seed, {kSimexTag, 1});
    auto names = fit.coefficient_names;
    names.push_back("log_gamma");
    const GlmOptions glm_options = settings.glm;
    const SimexEstimator estimator = [glm_options](const CountDataset& ds, const SimexCell&) {
      const DesignMatrix d = build_design(ds);
      const GlmFit g = fit_nb_glm(ds, d, glm_options);
      Eigen::VectorXd out(g.beta_hat.size() + 1);
      out << g.beta_hat, std::log(g.gamma_hat);
      return out;
    };
    fit.glm_trace = run_simex(estimator, train, config, names);
    fit.beta = fit.glm_trace->extrapolated.head(P);
    fit.gamma = std::exp(fit.glm_trace->extrapolated(P));
  }

  if (!is_hierarchical(settings.model)) return fit;

  // The hyper-prior centre is the GLM estimate (SIMEX-corrected for hb-simex);
  // its covariance stays the naive one.
  GlmFit prior_glm = fit.naive;
  prior_glm.beta_hat = fit.beta;
  const double mom = safe_mom_dispersion(train.y(), fit.naive.gamma_hat);
  FixedHypers fixed = default_fixed_hypers(prior_glm, train.n(), mom, settings.alpha);
  if (settings.sigma_e_diag) {
    if (settings.sigma_e_diag->size() != fixed.dim())
      throw Error(ErrorCode::config, "sigma_e needs one entry per slope (" +
                                         std::to_string(fixed.dim()) + ")");
    fixed.sigma_e = settings.sigma_e_diag->asDiagonal();
  }
  if (settings.prior_mean_C) fixed.prior_mean_C = *settings.prior_mean_C;
  if (settings.prior_mean_gamma) fixed.prior_mean_gamma = *settings.prior_mean_gamma;
  fixed.validate();
  fit.fixed = fixed;
  const ChainInit init = default_chain_init(prior_glm, fixed, train.n());
  fit.parameter_count = static_cast<std::size_t>(train.m()) * (static_cast<std::size_t>(P) + 1);

  SamplerOptions options = settings.sampler;
  options.threads = settings.threads;
  const std::uint64_t chain_seed = derive_seed(settings.seed, {kChainTag});
  Chain base = run_pooled_chains(train, design, fixed, init, options, std::max(1, settings.chains),
                                 chain_seed);

  if (settings.model == ModelKind::hb_simex) {
    SimexConfig config = settings.simex;
    config.B = settings.hb_B;
    config.threads = settings.threads;
    config.seed = derive_seed(settings.seed, {kSimexTag, 2});
    SamplerOptions cell_options = settings.sampler;
    cell_options.threads = 1;
    const SimexEstimator estimator = [&fixed, &init, cell_options](const CountDataset& ds,
                                                                   const SimexCell& cell) {
      const DesignMatrix d = build_design(ds);
      return posterior_summary_vector(
          run_chain_on_design(ds, d, fixed, init, cell_options, derive_seed(cell.seed, {kChainTag})));
    };
    fit.hb_trace = run_simex(estimator, train, config, posterior_summary_names(base, slope_names(design)));

    // Shift the uncontaminated draws so their posterior means sit at the
    // extrapolated values; log C and log gamma shift multiplicatively.
    const Eigen::VectorXd target = fit.hb_trace->extrapolated;
    const Eigen::VectorXd current = posterior_summary_vector(base);
    const Eigen::Index per = P + 1;
    for (std::size_t j = 0; j < base.cohorts.size(); ++j) {
      auto& draws = base.cohorts[j].draws;
      if (draws.empty()) continue;
      const Eigen::VectorXd shift =
          target.segment(static_cast<Eigen::Index>(j) * per, per) -
          current.segment(static_cast<Eigen::Index>(j) * per, per);
      const double c_factor = std::exp(shift(P - 1));
      const double g_factor = std::exp(shift(P));
      for (auto& d : draws) {
        d.beta += shift.head(P - 1);
        d.C *= c_factor;
        d.gamma *= g_factor;
      }
    }
  }
  fit.chain = std::move(base);
  return fit;
}

namespace {

struct PointPredictions {
  std::vector<double> mu;
  std::vector<double> gamma;
};

PointPredictions predict(const ModelFit& fit, const CountDataset& data, const DesignMatrix& design) {
  PointPredictions out;
  out.mu.resize(data.n());
  out.gamma.resize(data.n());
  if (!fit.chain) {
    const Eigen::VectorXd eta = design.rows * fit.beta;
    for (std::size_t i = 0; i < data.n(); ++i) {
      out.mu[i] = std::exp(eta(static_cast<Eigen::Index>(i)));
      out.gamma[i] = fit.gamma;
    }
    return out;
  }
  const auto p = design.cols() - 1;
  std::vector<double> gamma_mean(fit.chain->cohorts.size(), 0.0);
  for (std::size_t j = 0; j < fit.chain->cohorts.size(); ++j) {
    const auto& draws = fit.chain->cohorts[j].draws;
    for (const auto& d : draws) gamma_mean[j] += d.gamma;
    if (!draws.empty()) gamma_mean[j] /= static_cast<double>(draws.size());
  }
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto j = static_cast<std::size_t>(data.cohort()[i]);
    const auto& draws = fit.chain->cohorts[j].draws;
    const auto row = design.rows.row(static_cast<Eigen::Index>(i)).tail(p);
    double sum = 0.0;
    for (const auto& d : draws) sum += d.C * std::exp(row.dot(d.beta));
    out.mu[i] = sum / static_cast<double>(draws.size());
    out.gamma[i] = gamma_mean[j];
  }
  return out;
}

PointwiseLogLik model_loglik(const ModelFit& fit, const CountDataset& data,
                             const DesignMatrix& design, const PipelineSettings& settings) {
  if (fit.chain) return pointwise_loglik(*fit.chain, data, design);
  // Normal approximation to the coefficient posterior, gamma held at its estimate.
  Rng rng(derive_seed(settings.seed, {kGlmDrawTag}));
  const Eigen::MatrixXd chol = cholesky_lower(fit.cov_beta);
  std::vector<Eigen::VectorXd> draws;
  draws.reserve(static_cast<std::size_t>(settings.glm_draws));
  for (int h = 0; h < settings.glm_draws; ++h) draws.push_back(sample_mvn(fit.beta, chol, rng));
  return pointwise_loglik(draws, fit.gamma, data, design);
}

double dw_or_nan(const std::vector<double>& trace) {
  try {
    return durbin_watson(thin(trace, 10));
  } catch (const Error&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

double training_dispersion(const ModelFit& fit, const CountDataset& train) {
  const DesignMatrix design = build_design(train);
  const auto pred = predict(fit, train, design);
  const auto k = std::min(fit.parameter_count, train.n() > 0 ? train.n() - 1 : 0);
  return pearson_dispersion(pred.mu, pred.gamma, train.y(), k);
}

Evaluation evaluate(const ModelFit& fit, const CountDataset& data, const PipelineSettings& settings,
                    std::optional<double> dispersion) {
  if (data.n() == 0) throw Error(ErrorCode::validation, "evaluation set is empty");
  const DesignMatrix design = build_design(data);
  Evaluation ev;
  const auto pred = predict(fit, data, design);
  ev.predictions = pred.mu;
  ev.gammas = pred.gamma;

  const auto w = waic(model_loglik(fit, data, design, settings));
  ev.report.lppd = w.lppd;
  ev.report.waic = w.waic;
  ev.report.penalty = w.penalty;
  ev.report.per_point_penalty = w.per_point_penalty;
  ev.report.msle = msle(pred.mu, data.y());
  const double phi = dispersion ? *dispersion : training_dispersion(fit, data);
  ev.report.scaled_deviance = scaled_deviance(pred.mu, pred.gamma, data.y(), phi);

  if (fit.chain) {
    const auto names = slope_names(design);
    for (std::size_t j = 0; j < fit.chain->cohorts.size(); ++j) {
      const auto& draws = fit.chain->cohorts[j].draws;
      if (draws.size() < 30) continue;
      const std::string prefix = "cohort" + data.cohort_labels()[j] + ".";
      std::vector<double> trace(draws.size());
      for (std::size_t k = 0; k < names.size(); ++k) {
        for (std::size_t h = 0; h < draws.size(); ++h)
          trace[h] = draws[h].beta(static_cast<Eigen::Index>(k));
        ev.report.dw.emplace_back(prefix + names[k], dw_or_nan(trace));
      }
      for (std::size_t h = 0; h < draws.size(); ++h) trace[h] = draws[h].C;
      ev.report.dw.emplace_back(prefix + "C", dw_or_nan(trace));
      for (std::size_t h = 0; h < draws.size(); ++h) trace[h] = draws[h].gamma;
      ev.report.dw.emplace_back(prefix + "gamma", dw_or_nan(trace));
    }
  }
  return ev;
}

SplitMode parse_split_mode(const std::string& name) {
  if (name == "partition") return SplitMode::partition;
  if (name == "bootstrap") return SplitMode::bootstrap;
  throw Error(ErrorCode::config, "unknown split mode '" + name + "'");
}

Split split_by_cohort(const CountDataset& dataset, int train_per_cohort, int test_per_cohort,
                      std::uint64_t seed, SplitMode mode) {
  if (train_per_cohort < 0 || test_per_cohort < 0)
    throw Error(ErrorCode::config, "split sizes must be non-negative");
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(dataset.m()));
  for (std::size_t i = 0; i < dataset.n(); ++i)
    members[static_cast<std::size_t>(dataset.cohort()[i])].push_back(i);

  Split split;
  for (std::size_t j = 0; j < members.size(); ++j) {
    auto rows = members[j];
    if (rows.empty()) continue;
    Rng rng(derive_seed(seed, {0x73706c6974ULL, j}));
    std::shuffle(rows.begin(), rows.end(), rng.engine());
    if (mode == SplitMode::partition) {
      const std::size_t n_train = train_per_cohort == 0
                                      ? rows.size()
                                      : std::min<std::size_t>(train_per_cohort, rows.size());
      const std::size_t rest = rows.size() - n_train;
      const std::size_t n_test =
          test_per_cohort == 0 ? rest : std::min<std::size_t>(test_per_cohort, rest);
      split.train.insert(split.train.end(), rows.begin(), rows.begin() + n_train);
      split.test.insert(split.test.end(), rows.begin() + n_train,
                        rows.begin() + n_train + n_test);
    } else {
      // Disjoint pools, each resampled with replacement; singleton cohorts train only.
      const std::size_t half = rows.size() == 1 ? 1 : rows.size() / 2;
      const std::size_t n_train = train_per_cohort == 0 ? half : train_per_cohort;
      for (std::size_t r = 0; r < n_train; ++r) split.train.push_back(rows[rng.index(half)]);
      const std::size_t pool = rows.size() - half;
      if (pool == 0) continue;
      const std::size_t n_test = test_per_cohort == 0 ? pool : test_per_cohort;
      for (std::size_t r = 0; r < n_test; ++r) split.test.push_back(rows[half + rng.index(pool)]);
    }
  }
  if (mode == SplitMode::partition) {
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
  }
  return split;
}

namespace {

nlohmann::json describe_draws(std::vector<double> v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  return {{"mean", mean},
          {"sd", v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0},
          {"q025", q(0.025)},
          {"q50", q(0.5)},
          {"q975", q(0.975)}};
}

}  // namespace

nlohmann::json summarize_fit(const ModelFit& fit, const CountDataset& train) {
  nlohmann::json j;
  j["model"] = to_string(fit.kind);
  auto coefficients = nlohmann::json::array();
  for (std::size_t c = 0; c < fit.coefficient_names.size(); ++c) {
    const auto k = static_cast<Eigen::Index>(c);
    nlohmann::json entry{{"name", fit.coefficient_names[c]},
                         {"naive", fit.naive.beta_hat(k)},
                         {"naive_se", std::sqrt(fit.naive.cov_beta(k, k))},
                         {"estimate", fit.beta(k)}};
    if (fit.glm_trace) entry["simex_jackknife_se"] = fit.glm_trace->jackknife_se(k);
    coefficients.push_back(entry);
  }
  j["coefficients"] = coefficients;
  j["gamma"] = {{"naive", fit.naive.gamma_hat}, {"estimate", fit.gamma}};
  j["glm"] = {{"iterations", fit.naive.iterations},
              {"loglik", fit.naive.loglik},
              {"deviance", fit.naive.deviance},
              {"pearson_dispersion", fit.naive.sigma2_hat}};
  if (fit.glm_trace) j["simex"] = to_json(*fit.glm_trace);

  if (fit.chain) {
    const auto& chain = *fit.chain;
    const auto& fixed = *fit.fixed;
    j["fixed_hypers"] = {{"alpha", fixed.alpha}, {"nu", fixed.nu},         {"tau", fixed.tau},
                         {"s", fixed.s},         {"t", fixed.t},           {"u", fixed.u},
                         {"v", fixed.v},         {"g", fixed.g},
                         {"prior_mean_C", fixed.prior_mean_C},
                         {"prior_mean_gamma", fixed.prior_mean_gamma}};
    j["draws_per_cohort"] = chain.draw_count();
    j["warnings"] = chain.warnings;
    auto cohorts = nlohmann::json::array();
    for (std::size_t c = 0; c < chain.cohorts.size(); ++c) {
      const auto& trace = chain.cohorts[c];
      nlohmann::json entry{{"cohort", train.cohort_labels()[c]},
                           {"acceptance",
                            {{"beta", trace.accept[block_beta].rate()},
                             {"C", trace.accept[block_C].rate()},
                             {"gamma", trace.accept[block_gamma].rate()}}}};
      if (!trace.draws.empty()) {
        std::vector<double> v(trace.draws.size());
        for (std::size_t k = 1; k < fit.coefficient_names.size(); ++k) {
          for (std::size_t h = 0; h < v.size(); ++h)
            v[h] = trace.draws[h].beta(static_cast<Eigen::Index>(k - 1));
          entry["parameters"][fit.coefficient_names[k]] = describe_draws(v);
        }
        for (std::size_t h = 0; h < v.size(); ++h) v[h] = trace.draws[h].C;
        entry["parameters"]["C"] = describe_draws(v);
        for (std::size_t h = 0; h < v.size(); ++h) v[h] = trace.draws[h].gamma;
        entry["parameters"]["gamma"] = describe_draws(v);
      }
      cohorts.push_back(entry);
    }
    j["cohorts"] = cohorts;
    if (fit.hb_trace) j["hb_simex"] = to_json(*fit.hb_trace);

    if (chain.cohorts.size() >= 2 && chain.draw_count() > 0) {
      const DesignMatrix design = build_design(train);
      const auto slope = design.error_prone_column >= 1
                             ? static_cast<std::size_t>(design.error_prone_column - 1)
                             : 0;
      const auto corr = intercept_slope_correlation(chain, slope);
      std::vector<double> finite;
      for (double r : corr.per_draw)
        if (std::isfinite(r)) finite.push_back(r);
      nlohmann::json cj{{"slope", fit.coefficient_names[slope + 1]},
                        {"mean", corr.mean},
                        {"fraction_negative", corr.fraction_negative},
                        {"degenerate", corr.degenerate},
                        {"warnings", corr.warnings}};
      if (!finite.empty()) cj["posterior"] = describe_draws(finite);
      j["intercept_slope_correlation"] = cj;
    }
  }
  return j;
}

void write_draws_csv(const Chain& chain, const std::vector<std::string>& slope_names,
                     const std::vector<std::string>& cohort_labels, std::ostream& out) {
  out << "iteration,cohort,parameter,value\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t j = 0; j < chain.cohorts.size(); ++j) {
    const auto& draws = chain.cohorts[j].draws;
    for (std::size_t h = 0; h < draws.size(); ++h) {
      const auto iteration = static_cast<std::size_t>(chain.burn_in) + 1 + h;
      for (std::size_t k = 0; k < slope_names.size(); ++k)
        out << iteration << ',' << cohort_labels[j] << ',' << slope_names[k] << ','
            << draws[h].beta(static_cast<Eigen::Index>(k)) << '\n';
      out << iteration << ',' << cohort_labels[j] << ",C," << draws[h].C << '\n';
      out << iteration << ',' << cohort_labels[j] << ",gamma," << draws[h].gamma << '\n';
    }
  }
}

}  // namespace hbsimex
