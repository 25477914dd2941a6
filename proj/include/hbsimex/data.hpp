#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hbsimex {

enum class CovariateKind { numeric, categorical };

struct CovariateInfo {
  std::string name;
  CovariateKind kind = CovariateKind::numeric;
  // Categorical levels in lexicographic order; levels[0] is the reference.
  std::vector<std::string> levels;
};

// Column roles for CSV ingestion.
struct Schema {
  std::string outcome;
  std::string cohort;
  std::vector<std::string> covariates;    // ordered; may include categoricals
  std::vector<std::string> categoricals;  // subset treated as categorical
  std::string error_prone;
  char delimiter = ',';
};

// Cohort-indexed count records. Cohorts are stored 0-based internally and
// reported 1..m externally; categorical covariates hold their level index.
class CountDataset {
 public:
  enum class Validation { strict, allow_empty_cohorts };

  CountDataset(std::vector<std::int64_t> y, Eigen::MatrixXd x, std::vector<int> cohort,
               std::vector<std::string> cohort_labels, std::vector<CovariateInfo> covariates,
               int error_prone_index, std::string outcome_name = "y",
               std::string cohort_name = "cohort", Validation validation = Validation::strict);

  std::size_t n() const { return y_.size(); }
  int m() const { return static_cast<int>(cohort_labels_.size()); }
  int p() const { return static_cast<int>(covariates_.size()); }

  const std::vector<std::int64_t>& y() const { return y_; }
  const Eigen::MatrixXd& x() const { return x_; }
  const std::vector<int>& cohort() const { return cohort_; }
  const std::vector<std::string>& cohort_labels() const { return cohort_labels_; }
  const std::vector<CovariateInfo>& covariates() const { return covariates_; }
  int error_prone_index() const { return error_prone_index_; }
  const std::string& outcome_name() const { return outcome_name_; }
  const std::string& cohort_name() const { return cohort_name_; }

  Eigen::VectorXd error_prone_values() const { return x_.col(error_prone_index_); }
  std::vector<std::size_t> cohort_sizes() const;

  // Same dataset with one numeric covariate column replaced.
  CountDataset with_covariate(int index, const Eigen::VectorXd& values) const;
  // Rows in the given order; cohort labelling (and m) is kept.
  CountDataset subset(std::span<const std::size_t> rows,
                      Validation validation = Validation::strict) const;

  bool operator==(const CountDataset& other) const;

 private:
  void validate(Validation validation) const;

  std::vector<std::int64_t> y_;
  Eigen::MatrixXd x_;
  std::vector<int> cohort_;
  std::vector<std::string> cohort_labels_;
  std::vector<CovariateInfo> covariates_;
  int error_prone_index_;
  std::string outcome_name_;
  std::string cohort_name_;
};

struct DesignColumn {
  int covariate;  // index into CountDataset::covariates()
  int level;      // -1 for numeric; level index (>= 1) for an indicator
  std::string name;
};

struct DesignMatrix {
  Eigen::MatrixXd rows;                  // n x (1 + k); column 0 is the intercept
  std::vector<DesignColumn> column_map;  // column_map[c] describes rows.col(c + 1)
  int error_prone_column = -1;           // column index within rows

  Eigen::Index cols() const { return rows.cols(); }
  // Non-intercept columns, as used by the per-cohort sampler.
  Eigen::MatrixXd slopes() const { return rows.rightCols(rows.cols() - 1); }
};

DesignMatrix build_design(const CountDataset& dataset);

// Column count implied by a schema: 1 + numeric + sum(L - 1).
Eigen::Index expected_design_columns(const std::vector<CovariateInfo>& covariates);

// Outcome discretisation: nearest integer, ties upward.
std::int64_t round_half_up(double value);

CountDataset ingest_csv(const std::filesystem::path& path, const Schema& schema);
CountDataset parse_csv(std::istream& in, const Schema& schema);
void write_csv(const CountDataset& dataset, const std::filesystem::path& path);
void write_csv(const CountDataset& dataset, std::ostream& out);

// Raw access to one numeric column of a CSV (used for clean test covariates).
std::vector<double> read_numeric_column(const std::filesystem::path& path, const std::string& column,
                                        char delimiter = ',');

struct OutcomeSummary {
  std::size_t n;
  int m;
  double mean;
  double variance;  // n - 1 divisor
};

OutcomeSummary summarize_outcome(const CountDataset& dataset);

}  // namespace hbsimex
