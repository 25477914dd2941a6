#include "hbsimex/model_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hbsimex/error.hpp"

namespace hbsimex {

PointwiseLogLik pointwise_loglik(const Chain& chain, const CountDataset& dataset,
                                 const DesignMatrix& design) {
  if (chain.cohorts.size() != static_cast<std::size_t>(dataset.m()))
    throw Error(ErrorCode::parameter, "chain and dataset disagree on the number of cohorts");
  const auto J = chain.draw_count();
  if (J == 0) throw Error(ErrorCode::undefined_statistic, "chain holds no posterior draws");
  const auto p = design.cols() - 1;
  PointwiseLogLik ll(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(dataset.n()));
  for (std::size_t i = 0; i < dataset.n(); ++i) {
    const auto& draws = chain.cohorts[static_cast<std::size_t>(dataset.cohort()[i])].draws;
    const auto row = design.rows.row(static_cast<Eigen::Index>(i)).tail(p);
    for (std::size_t h = 0; h < J; ++h) {
      const double eta = draws[h].C * std::exp(row.dot(draws[h].beta));
      ll(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(i)) =
          (eta > 0 && std::isfinite(eta))
              ? nb_logpmf_unchecked(dataset.y()[i], eta, draws[h].gamma)
              : -std::numeric_limits<double>::infinity();
    }
  }
  return ll;
}

PointwiseLogLik pointwise_loglik(const std::vector<Eigen::VectorXd>& beta_draws, double gamma,
                                 const CountDataset& dataset, const DesignMatrix& design) {
  if (beta_draws.empty()) throw Error(ErrorCode::undefined_statistic, "no coefficient draws");
  PointwiseLogLik ll(static_cast<Eigen::Index>(beta_draws.size()),
                     static_cast<Eigen::Index>(dataset.n()));
  for (std::size_t h = 0; h < beta_draws.size(); ++h) {
    const Eigen::VectorXd eta = design.rows * beta_draws[h];
    for (std::size_t i = 0; i < dataset.n(); ++i) {
      const double mu = std::exp(eta(static_cast<Eigen::Index>(i)));
      ll(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(i)) =
          (mu > 0 && std::isfinite(mu)) ? nb_logpmf_unchecked(dataset.y()[i], mu, gamma)
                                        : -std::numeric_limits<double>::infinity();
    }
  }
  return ll;
}

namespace {

double log_mean_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum()) - std::log(static_cast<double>(v.size()));
}

}  // namespace

double lppd(const PointwiseLogLik& ll) {
  if (ll.rows() == 0) throw Error(ErrorCode::undefined_statistic, "no posterior draws");
  double total = 0.0;
  for (Eigen::Index i = 0; i < ll.cols(); ++i) total += log_mean_exp(ll.col(i));
  return total;
}

double lppd(const Chain& chain, const CountDataset& dataset, const DesignMatrix& design) {
  return lppd(pointwise_loglik(chain, dataset, design));
}

WaicResult waic(const PointwiseLogLik& ll) {
  const auto J = ll.rows();
  if (J < 2) throw Error(ErrorCode::undefined_statistic, "WAIC penalty needs at least two draws");
  WaicResult out;
  out.lppd = lppd(ll);
  out.per_point_penalty = Eigen::VectorXd(ll.cols());
  for (Eigen::Index i = 0; i < ll.cols(); ++i) {
    const auto col = ll.col(i);
    const double mean = col.mean();
    out.per_point_penalty(i) =
        (col.array() - mean).square().sum() / static_cast<double>(J - 1);
  }
  out.penalty = out.per_point_penalty.sum();
  out.waic = -2.0 * (out.lppd - out.penalty);
  return out;
}

WaicResult waic(const Chain& chain, const CountDataset& dataset, const DesignMatrix& design) {
  return waic(pointwise_loglik(chain, dataset, design));
}

double durbin_watson(std::span<const double> trace) {
  if (trace.size() < 3)
    throw Error(ErrorCode::undefined_statistic, "Durbin-Watson needs at least three values");
  double mean = 0.0;
  for (double v : trace) mean += v;
  mean /= static_cast<double>(trace.size());
  double den = 0.0;
  double num = 0.0;
  double prev = trace[0] - mean;
  den += prev * prev;
  for (std::size_t t = 1; t < trace.size(); ++t) {
    const double e = trace[t] - mean;
    num += (e - prev) * (e - prev);
    den += e * e;
    prev = e;
  }
  if (!(den > 0))
    throw Error(ErrorCode::undefined_statistic, "Durbin-Watson undefined for a constant trace");
  return num / den;
}

std::vector<double> thin(std::span<const double> trace, std::size_t factor) {
  std::vector<double> out;
  if (factor == 0) factor = 1;
  for (std::size_t t = factor - 1; t < trace.size(); t += factor) out.push_back(trace[t]);
  return out;
}

double msle(std::span<const double> predicted, std::span<const std::int64_t> observed) {
  if (predicted.size() != observed.size() || predicted.empty())
    throw Error(ErrorCode::parameter, "MSLE needs equally sized, non-empty inputs");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!(predicted[i] > 0) || !std::isfinite(predicted[i]))
      throw Error(ErrorCode::domain, "MSLE predictions must be positive");
    const double d = std::log1p(predicted[i]) - std::log1p(static_cast<double>(observed[i]));
    sum += d * d;
  }
  return sum / static_cast<double>(predicted.size());
}

double scaled_deviance(std::span<const double> predicted, std::span<const double> gamma,
                       std::span<const std::int64_t> observed, double dispersion) {
  if (predicted.size() != observed.size() || gamma.size() != observed.size())
    throw Error(ErrorCode::parameter, "deviance inputs differ in length");
  for (double p : predicted)
    if (!(p > 0)) throw Error(ErrorCode::domain, "deviance predictions must be positive");
  if (!(dispersion > 0)) throw Error(ErrorCode::domain, "dispersion must be positive");
  return nb_deviance(observed, predicted, gamma) / dispersion;
}

double scaled_deviance(const GlmFit& fit, const CountDataset& dataset, const DesignMatrix& design) {
  const Eigen::VectorXd mu = (design.rows * fit.beta_hat).array().exp();
  const std::vector<double> pred(mu.data(), mu.data() + mu.size());
  const std::vector<double> gammas(pred.size(), fit.gamma_hat);
  return scaled_deviance(pred, gammas, dataset.y(), fit.sigma2_hat);
}

double pearson_dispersion(std::span<const double> predicted, std::span<const double> gamma,
                          std::span<const std::int64_t> observed, std::size_t parameters) {
  double sum = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double m = predicted[i];
    const double r = static_cast<double>(observed[i]) - m;
    sum += r * r / (m + m * m / gamma[i]);
  }
  const std::size_t dof = observed.size() > parameters ? observed.size() - parameters : observed.size();
  return sum / static_cast<double>(dof);
}

double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  if (!(saa > 0) || !(sbb > 0)) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

InterceptSlopeCorrelation intercept_slope_correlation(const Chain& chain, std::size_t slope_index) {
  const auto m = chain.cohorts.size();
  if (m < 2)
    throw Error(ErrorCode::undefined_statistic, "intercept-slope correlation needs two cohorts");
  const auto J = chain.draw_count();
  if (J == 0) throw Error(ErrorCode::undefined_statistic, "chain holds no posterior draws");
  if (slope_index >= chain.slope_count())
    throw Error(ErrorCode::parameter, "slope index out of range");

  InterceptSlopeCorrelation out;
  out.two_cohorts = m == 2;
  std::vector<double> c(m), beta(m);
  double sum = 0.0;
  std::size_t valid = 0, negative = 0;
  for (std::size_t h = 0; h < J; ++h) {
    for (std::size_t j = 0; j < m; ++j) {
      c[j] = chain.cohorts[j].draws[h].C;
      beta[j] = chain.cohorts[j].draws[h].beta(static_cast<Eigen::Index>(slope_index));
    }
    const double r = pearson_correlation(c, beta);
    out.per_draw.push_back(r);
    if (std::isnan(r)) {
      out.degenerate = true;
      continue;
    }
    sum += r;
    ++valid;
    if (r < 0) ++negative;
  }
  out.mean = valid > 0 ? sum / static_cast<double>(valid) : std::numeric_limits<double>::quiet_NaN();
  out.fraction_negative = valid > 0 ? static_cast<double>(negative) / static_cast<double>(valid)
                                    : std::numeric_limits<double>::quiet_NaN();
  for (std::size_t j = 0; j < m; ++j) {
    double mc = 0.0, mb = 0.0;
    for (const auto& d : chain.cohorts[j].draws) {
      mc += d.C;
      mb += d.beta(static_cast<Eigen::Index>(slope_index));
    }
    out.mean_pairs.emplace_back(mc / static_cast<double>(J), mb / static_cast<double>(J));
  }
  if (out.degenerate)
    out.warnings.push_back("zero cross-cohort variance in some draws; correlation undefined there");
  if (out.two_cohorts)
    out.warnings.push_back("only two cohorts; every per-draw correlation is +1 or -1");
  return out;
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json j;
  j["lppd"] = report.lppd;
  j["waic"] = report.waic;
  j["penalty"] = report.penalty;
  j["scaled_deviance"] = report.scaled_deviance;
  j["msle"] = report.msle;
  nlohmann::json dw = nlohmann::json::object();
  for (const auto& [name, value] : report.dw) dw[name] = value;
  j["durbin_watson"] = dw;
  return j;
}

}  // namespace hbsimex
