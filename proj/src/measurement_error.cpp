#include "hbsimex/measurement_error.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "hbsimex/error.hpp"
#include "hbsimex/rng.hpp"

namespace hbsimex {

std::size_t ReplicateSet::degrees_of_freedom() const {
  std::size_t df = 0;
  for (const auto& r : replicates)
    if (!r.empty()) df += r.size() - 1;
  return df;
}

std::size_t ReplicateSet::total_measurements() const {
  std::size_t total = 0;
  for (const auto& r : replicates) total += r.size();
  return total;
}

double estimate_error_variance(const ReplicateSet& reps) {
  double within = 0.0;
  std::size_t df = 0;
  for (const auto& r : reps.replicates) {
    if (r.empty()) throw Error(ErrorCode::validation, "record without replicate measurements");
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(r.size());
    for (double v : r) within += (v - mean) * (v - mean);
    df += r.size() - 1;
  }
  if (df == 0)
    throw Error(ErrorCode::insufficient_replicates,
                "error variance needs at least one record with two or more replicates");
  return within / static_cast<double>(df);
}

ErrorModel describe_error_model(std::span<const double> x, double sigma2_eps) {
  ErrorModel model;
  model.sigma2_eps = sigma2_eps;
  if (x.size() < 2) return model;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  model.mean_u = mean;
  model.sigma2_u = std::max(0.0, ss / static_cast<double>(x.size() - 1) - sigma2_eps);
  return model;
}

ReplicateSet bootstrap_replicates(std::span<const double> x, std::span<const int> cohort, int q,
                                  std::uint64_t seed, ResidualPool pool) {
  if (q < 2) throw Error(ErrorCode::parameter, "bootstrap needs Q >= 2 replicates per record");
  if (x.empty()) throw Error(ErrorCode::parameter, "bootstrap needs a non-empty covariate");
  if (cohort.size() != x.size())
    throw Error(ErrorCode::parameter, "cohort vector length differs from covariate length");

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < x.size(); ++i)
    groups[pool == ResidualPool::cohort ? cohort[i] : 0].push_back(i);

  std::map<int, std::vector<double>> residuals;
  for (const auto& [g, rows] : groups) {
    double mean = 0.0;
    for (auto i : rows) mean += x[i];
    mean /= static_cast<double>(rows.size());
    auto& r = residuals[g];
    for (auto i : rows) r.push_back(x[i] - mean);
  }

  Rng rng(seed);
  ReplicateSet reps;
  reps.record_ids.resize(x.size());
  reps.replicates.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto& pool_i = residuals[pool == ResidualPool::cohort ? cohort[i] : 0];
    reps.record_ids[i] = i;
    auto& out = reps.replicates[i];
    out.reserve(static_cast<std::size_t>(q));
    for (int k = 0; k < q; ++k) out.push_back(x[i] + pool_i[rng.index(pool_i.size())]);
  }
  return reps;
}

ReplicateSet bootstrap_replicates(std::span<const double> x, int q, std::uint64_t seed) {
  const std::vector<int> single(x.size(), 0);
  return bootstrap_replicates(x, single, q, seed, ResidualPool::global);
}

Eigen::VectorXd contaminate(const Eigen::VectorXd& x, double lambda, double sigma2_eps,
                            std::uint64_t seed) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw Error(ErrorCode::domain, "contamination level lambda must be non-negative");
  if (!(sigma2_eps >= 0.0) || !std::isfinite(sigma2_eps))
    throw Error(ErrorCode::domain, "error variance must be non-negative");
  if (lambda == 0.0 || sigma2_eps == 0.0) return x;
  const double sd = std::sqrt(lambda * sigma2_eps);
  Rng rng(seed);
  Eigen::VectorXd w = x;
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) += sd * rng.normal();
  return w;
}

void write_replicates_csv(const ReplicateSet& reps, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
  out << "record_id,replicate_index,value\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < reps.replicates.size(); ++i)
    for (std::size_t q = 0; q < reps.replicates[i].size(); ++q)
      out << reps.record_ids[i] << ',' << q << ',' << reps.replicates[i][q] << '\n';
}

ReplicateSet read_replicates_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::parse, "empty replicate file");
  std::map<std::size_t, std::vector<double>> by_record;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    std::istringstream fields(line);
    std::string id, idx, value;
    if (!std::getline(fields, id, ',') || !std::getline(fields, idx, ',') ||
        !std::getline(fields, value))
      throw Error(ErrorCode::parse, "replicate row " + std::to_string(row) + " is malformed");
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite");
      by_record[static_cast<std::size_t>(std::stoull(id))].push_back(v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::parse, "replicate row " + std::to_string(row) + " is not numeric");
    }
  }
  ReplicateSet reps;
  for (auto& [id, values] : by_record) {
    reps.record_ids.push_back(id);
    reps.replicates.push_back(std::move(values));
  }
  return reps;
}

}  // namespace hbsimex
