#include "hbsimex/count_glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "hbsimex/error.hpp"

namespace hbsimex {

namespace {

constexpr double kMaxLinearPredictor = 700.0;

struct IrlsState {
  Eigen::VectorXd beta;
  Eigen::VectorXd mu;
  Eigen::VectorXd eta;  // log mu
  double loglik = -std::numeric_limits<double>::infinity();
  double grad_norm = std::numeric_limits<double>::infinity();
};

class NbProblem {
 public:
  NbProblem(const Eigen::MatrixXd& x, std::span<const std::int64_t> y)
      : x_(x), y_(y.begin(), y.end()), ratio_sum_(y) {
    yd_ = Eigen::VectorXd(static_cast<Eigen::Index>(y_.size()));
    for (std::size_t i = 0; i < y_.size(); ++i) {
      yd_(static_cast<Eigen::Index>(i)) = static_cast<double>(y_[i]);
      lgamma_y1_sum_ += std::lgamma(static_cast<double>(y_[i]) + 1.0);
    }
  }

  bool mean(const Eigen::VectorXd& beta, Eigen::VectorXd& mu, Eigen::VectorXd& eta) const {
    eta = x_ * beta;
    if (!eta.allFinite() || eta.maxCoeff() > kMaxLinearPredictor) return false;
    mu = eta.array().exp();
    return true;
  }

  // Per-record log-likelihood without the lgamma terms; l1p = log1p(m / gamma).
  static double record_term(double m, double log_m, double y, double gamma, double l1p) {
    double term = -gamma * l1p;
    if (y > 0.0) term += y * (log_m - std::log(gamma + m));
    return term;
  }

  double loglik(const Eigen::VectorXd& mu, const Eigen::VectorXd& eta, double gamma) const {
    double ll = ratio_sum_(gamma) - lgamma_y1_sum_;
    for (Eigen::Index i = 0; i < mu.size(); ++i)
      ll += record_term(mu(i), eta(i), yd_(i), gamma, std::log1p(mu(i) / gamma));
    return ll;
  }

  // Log-likelihood at fixed mu as a function of t = log gamma, with its
  // first and second derivatives in t.
  double profile(const Eigen::VectorXd& mu, const Eigen::VectorXd& eta, double t, double& d1,
                 double& d2) const {
    const double gamma = std::exp(t);
    double g1 = ratio_sum_.derivative(gamma);
    double g2 = ratio_sum_.second_derivative(gamma);
    // Same accumulation as loglik() so both return identical values.
    double ll = ratio_sum_(gamma) - lgamma_y1_sum_;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      const double m = mu(i);
      const double s = gamma + m;
      const double l1p = std::log1p(m / gamma);
      ll += record_term(m, eta(i), yd_(i), gamma, l1p);
      g1 -= l1p - m / s + yd_(i) / s;
      g2 += m * m / (gamma * s * s) + yd_(i) / (s * s);
    }
    d1 = gamma * g1;
    d2 = gamma * gamma * g2 + gamma * g1;
    return ll;
  }

  // Safeguarded Newton ascent on t = log gamma within [lo, hi].
  double maximize_log_gamma(const Eigen::VectorXd& mu, const Eigen::VectorXd& eta, double t0,
                            double lo, double hi, double tol) const {
    double t = std::clamp(t0, lo, hi);
    double d1 = 0.0, d2 = 0.0;
    double f = profile(mu, eta, t, d1, d2);
    for (int it = 0; it < 200; ++it) {
      double step = d2 < 0.0 ? -d1 / d2 : (d1 > 0.0 ? 1.0 : -1.0);
      step = std::clamp(step, -2.0, 2.0);
      if (d2 < 0.0 && std::abs(step) < tol) break;
      double moved = -1.0;
      for (int halving = 0; halving < 40; ++halving, step *= 0.5) {
        const double next = std::clamp(t + step, lo, hi);
        if (next == t) break;
        double e1 = 0.0, e2 = 0.0;
        const double fn = profile(mu, eta, next, e1, e2);
        if (fn >= f) {
          moved = std::abs(next - t);
          t = next;
          f = fn;
          d1 = e1;
          d2 = e2;
          break;
        }
      }
      if (moved < tol) break;
    }
    return t;
  }

  Eigen::VectorXd score(const Eigen::VectorXd& mu, double gamma) const {
    const Eigen::ArrayXd r = (yd_.array() - mu.array()) * gamma / (gamma + mu.array());
    return x_.transpose() * r.matrix();
  }

  Eigen::MatrixXd information(const Eigen::VectorXd& mu, double gamma) const {
    const Eigen::ArrayXd w = mu.array() * gamma / (gamma + mu.array());
    return x_.transpose() * (x_.array().colwise() * w).matrix();
  }

  // Fisher scoring at fixed gamma; every accepted step does not decrease
  // the log-likelihood.
  void irls(IrlsState& state, double gamma, const GlmOptions& options, int& iterations,
            std::vector<double>& trace) const {
    for (int it = 0; it < options.max_iter; ++it) {
      const Eigen::VectorXd g = score(state.mu, gamma);
      state.grad_norm = g.norm();
      if (state.grad_norm < options.grad_tol) return;
      const Eigen::VectorXd step = information(state.mu, gamma).ldlt().solve(g);
      if (!step.allFinite()) return;

      bool improved = false;
      double t = 1.0;
      for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
        const Eigen::VectorXd candidate = state.beta + t * step;
        Eigen::VectorXd mu, eta;
        if (!mean(candidate, mu, eta)) continue;
        const double ll = loglik(mu, eta, gamma);
        if (!std::isfinite(ll)) continue;
        if (ll < state.loglik && t == 1.0 &&
            state.loglik - ll <= 1e-12 * (1.0 + std::abs(state.loglik)) &&
            score(mu, gamma).norm() < state.grad_norm) {
          // Near the optimum the likelihood change drops below rounding; a
          // full step that lowers the score is taken without touching the trace.
          state.beta = candidate;
          state.mu = std::move(mu);
          state.eta = std::move(eta);
          improved = true;
          break;
        }
        if (ll >= state.loglik) {
          improved = ll > state.loglik || t == 1.0;
          state.beta = candidate;
          state.mu = std::move(mu);
          state.eta = std::move(eta);
          state.loglik = ll;
          trace.push_back(ll);
          break;
        }
      }
      ++iterations;
      if (!improved) {
        state.grad_norm = score(state.mu, gamma).norm();
        return;
      }
    }
    state.grad_norm = score(state.mu, gamma).norm();
  }

  std::size_t n() const { return y_.size(); }
  const std::vector<std::int64_t>& y() const { return y_; }
  const Eigen::VectorXd& yd() const { return yd_; }

 private:
  const Eigen::MatrixXd& x_;
  std::vector<std::int64_t> y_;
  Eigen::VectorXd yd_;
  LogGammaRatioSum ratio_sum_;
  double lgamma_y1_sum_ = 0.0;
};

}  // namespace

LogGammaRatioSum::LogGammaRatioSum(std::span<const std::int64_t> y) {
  std::int64_t max_y = 0;
  for (auto v : y) max_y = std::max(max_y, v);
  std::vector<double> counts(static_cast<std::size_t>(max_y) + 1, 0.0);
  for (auto v : y) counts[static_cast<std::size_t>(v)] += 1.0;
  tail_.assign(static_cast<std::size_t>(max_y), 0.0);
  double above = 0.0;
  for (std::int64_t k = max_y - 1; k >= 0; --k) {
    above += counts[static_cast<std::size_t>(k) + 1];
    tail_[static_cast<std::size_t>(k)] = above;
  }
}

double LogGammaRatioSum::operator()(double gamma) const {
  double sum = 0.0;
  for (std::size_t k = 0; k < tail_.size(); ++k)
    sum += tail_[k] * std::log(gamma + static_cast<double>(k));
  return sum;
}

double LogGammaRatioSum::derivative(double gamma) const {
  double sum = 0.0;
  for (std::size_t k = 0; k < tail_.size(); ++k) sum += tail_[k] / (gamma + static_cast<double>(k));
  return sum;
}

double LogGammaRatioSum::second_derivative(double gamma) const {
  double sum = 0.0;
  for (std::size_t k = 0; k < tail_.size(); ++k) {
    const double d = gamma + static_cast<double>(k);
    sum -= tail_[k] / (d * d);
  }
  return sum;
}

double nb_logpmf_unchecked(std::int64_t y, double eta, double gamma) {
  const double yd = static_cast<double>(y);
  double ratio;
  if (y < 128) {
    // sum_k log(gamma + k) - y log(gamma + eta), accumulated without cancellation.
    ratio = 0.0;
    const double denom = gamma + eta;
    for (std::int64_t k = 0; k < y; ++k) ratio += std::log1p((static_cast<double>(k) - eta) / denom);
  } else {
    ratio = std::lgamma(yd + gamma) - std::lgamma(gamma) - yd * std::log(gamma + eta);
  }
  const double y_log_eta = y == 0 ? 0.0 : yd * std::log(eta);
  return ratio - std::lgamma(yd + 1.0) - gamma * std::log1p(eta / gamma) + y_log_eta;
}

double nb_logpmf(std::int64_t y, NBParams params) {
  if (!(params.eta > 0.0) || !(params.gamma > 0.0) || !std::isfinite(params.eta) ||
      !std::isfinite(params.gamma))
    throw Error(ErrorCode::domain, "NB parameters must be positive and finite");
  if (y < 0) throw Error(ErrorCode::domain, "NB count must be non-negative");
  return nb_logpmf_unchecked(y, params.eta, params.gamma);
}

double nb_loglik(const Eigen::MatrixXd& x, std::span<const std::int64_t> y,
                 const Eigen::VectorXd& beta, double gamma) {
  const Eigen::VectorXd eta = x * beta;
  double ll = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    ll += nb_logpmf(y[i], {std::exp(eta(static_cast<Eigen::Index>(i))), gamma});
  return ll;
}

double mom_dispersion(double mean, double variance) {
  if (!(variance > mean))
    throw Error(ErrorCode::underdispersion,
                "sample variance does not exceed the mean; NB dispersion is unidentified");
  return mean * mean / (variance - mean);
}

double mom_dispersion(std::span<const std::int64_t> y) {
  if (y.size() < 2) throw Error(ErrorCode::underdispersion, "need at least two counts");
  const double n = static_cast<double>(y.size());
  double mean = 0.0;
  for (auto v : y) mean += static_cast<double>(v);
  mean /= n;
  double ss = 0.0;
  for (auto v : y) ss += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
  return mom_dispersion(mean, ss / (n - 1.0));
}

double nb_deviance(std::span<const std::int64_t> y, std::span<const double> mu,
                   std::span<const double> gamma) {
  double dev = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double yd = static_cast<double>(y[i]);
    const double g = gamma[i];
    const double first = y[i] == 0 ? 0.0 : yd * std::log(yd / mu[i]);
    dev += 2.0 * (first - (yd + g) * std::log1p((yd - mu[i]) / (mu[i] + g)));
  }
  return dev;
}

GlmFit fit_nb_glm(const Eigen::MatrixXd& x, std::span<const std::int64_t> y,
                  const GlmOptions& options) {
  const auto n = x.rows();
  const auto k = x.cols();
  if (static_cast<std::size_t>(n) != y.size())
    throw Error(ErrorCode::parameter, "design and outcome lengths differ");
  if (n < k) throw Error(ErrorCode::singular_design, "fewer records than design columns");
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < k) throw Error(ErrorCode::singular_design, "design matrix is rank deficient");
  }

  NbProblem problem(x, y);
  const double ybar = problem.yd().mean();

  double gamma;
  try {
    gamma = mom_dispersion(y);
  } catch (const Error&) {
    gamma = 1e4;
  }
  gamma = std::clamp(gamma, options.gamma_min, options.gamma_max);

  GlmFit fit;
  IrlsState state;
  state.beta = Eigen::VectorXd::Zero(k);
  state.beta(0) = std::log(std::max(ybar, 1e-3));
  if (!problem.mean(state.beta, state.mu, state.eta))
    throw Error(ErrorCode::numerical, "initial linear predictor overflows");
  state.loglik = problem.loglik(state.mu, state.eta, gamma);
  fit.loglik_trace.push_back(state.loglik);

  const double log_lo = std::log(options.gamma_min);
  const double log_hi = std::log(options.gamma_max);
  bool converged = false;
  int outer = 0;
  for (; outer < options.max_iter; ++outer) {
    problem.irls(state, gamma, options, fit.iterations, fit.loglik_trace);

    const double log_gamma = std::log(gamma);
    const double best =
        problem.maximize_log_gamma(state.mu, state.eta, log_gamma, log_lo, log_hi, options.gamma_tol);
    const double candidate = std::exp(best);
    const double ll = problem.loglik(state.mu, state.eta, candidate);
    double change = 0.0;
    if (ll > state.loglik) {
      change = std::abs(best - log_gamma);
      gamma = candidate;
      state.loglik = ll;
      fit.loglik_trace.push_back(ll);
    }
    if (change < options.gamma_tol) {
      problem.irls(state, gamma, options, fit.iterations, fit.loglik_trace);
      if (state.grad_norm < options.grad_tol) {
        converged = true;
        break;
      }
    }
  }
  fit.iterations += outer;

  if (!converged) {
    std::ostringstream msg;
    msg << "NB GLM did not converge in " << options.max_iter
        << " iterations (gradient norm " << state.grad_norm << ")";
    throw ConvergenceError(msg.str(), state.beta, gamma);
  }

  fit.beta_hat = state.beta;
  fit.gamma_hat = gamma;
  fit.loglik = state.loglik;
  fit.grad_norm = state.grad_norm;
  fit.converged = true;

  const std::vector<double> mu(state.mu.data(), state.mu.data() + n);
  const std::vector<double> gammas(static_cast<std::size_t>(n), gamma);
  fit.deviance = nb_deviance(y, mu, gammas);

  double pearson = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = state.mu(i);
    const double r = problem.yd()(i) - m;
    pearson += r * r / (m + m * m / gamma);
  }
  const double dof = static_cast<double>(n > k ? n - k : n);
  fit.sigma2_hat = pearson / dof;

  const Eigen::MatrixXd info = problem.information(state.mu, gamma);
  const Eigen::MatrixXd inv = info.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  fit.cov_beta = fit.sigma2_hat * 0.5 * (inv + inv.transpose());
  return fit;
}

GlmFit fit_nb_glm(const CountDataset& dataset, const DesignMatrix& design,
                  const GlmOptions& options) {
  return fit_nb_glm(design.rows, dataset.y(), options);
}

}  // namespace hbsimex
