#include "hbsimex/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "hbsimex/error.hpp"

namespace hbsimex {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

// RFC 4180 style: quoted fields may contain the delimiter and "" escapes.
std::vector<std::string> split_fields(const std::string& line, char delimiter) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delimiter) {
      fields.push_back(trim(current));
      current.clear();
    } else {
      current += c;
    }
  }
  fields.push_back(trim(current));
  return fields;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

std::size_t find_column(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error(ErrorCode::schema, "missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

CountDataset::CountDataset(std::vector<std::int64_t> y, Eigen::MatrixXd x, std::vector<int> cohort,
                           std::vector<std::string> cohort_labels,
                           std::vector<CovariateInfo> covariates, int error_prone_index,
                           std::string outcome_name, std::string cohort_name,
                           Validation validation)
    : y_(std::move(y)),
      x_(std::move(x)),
      cohort_(std::move(cohort)),
      cohort_labels_(std::move(cohort_labels)),
      covariates_(std::move(covariates)),
      error_prone_index_(error_prone_index),
      outcome_name_(std::move(outcome_name)),
      cohort_name_(std::move(cohort_name)) {
  validate(validation);
}

void CountDataset::validate(Validation validation) const {
  const auto n = y_.size();
  if (static_cast<std::size_t>(x_.rows()) != n || cohort_.size() != n)
    throw Error(ErrorCode::validation, "record arrays have inconsistent lengths");
  if (x_.cols() != static_cast<Eigen::Index>(covariates_.size()))
    throw Error(ErrorCode::validation, "covariate matrix does not match covariate list");
  if (covariates_.empty()) throw Error(ErrorCode::validation, "dataset has no covariates");
  if (error_prone_index_ < 0 || error_prone_index_ >= p())
    throw Error(ErrorCode::validation, "error-prone covariate index out of range");
  if (covariates_[error_prone_index_].kind != CovariateKind::numeric)
    throw Error(ErrorCode::validation, "error-prone covariate must be numeric");
  for (std::size_t i = 0; i < n; ++i) {
    if (y_[i] < 0) throw Error(ErrorCode::validation, "negative count at row " + std::to_string(i));
    if (cohort_[i] < 0 || cohort_[i] >= m())
      throw Error(ErrorCode::validation, "cohort id out of range at row " + std::to_string(i));
  }
  if (!x_.allFinite()) throw Error(ErrorCode::validation, "non-finite covariate entry");
  for (int c = 0; c < p(); ++c) {
    const auto& info = covariates_[c];
    if (info.kind != CovariateKind::categorical) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x_(static_cast<Eigen::Index>(i), c);
      if (v != std::floor(v) || v < 0 || v >= static_cast<double>(info.levels.size()))
        throw Error(ErrorCode::validation, "invalid level code for '" + info.name + "'");
    }
  }
  if (validation == Validation::strict) {
    if (m() < 1) throw Error(ErrorCode::validation, "dataset has no cohorts");
    const auto sizes = cohort_sizes();
    for (int j = 0; j < m(); ++j)
      if (sizes[j] == 0)
        throw Error(ErrorCode::validation, "cohort '" + cohort_labels_[j] + "' has no records");
  }
}

std::vector<std::size_t> CountDataset::cohort_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(m()), 0);
  for (int c : cohort_) ++sizes[static_cast<std::size_t>(c)];
  return sizes;
}

CountDataset CountDataset::with_covariate(int index, const Eigen::VectorXd& values) const {
  if (index < 0 || index >= p() || covariates_[index].kind != CovariateKind::numeric)
    throw Error(ErrorCode::parameter, "covariate replacement requires a numeric column");
  if (values.size() != x_.rows())
    throw Error(ErrorCode::parameter, "replacement column has wrong length");
  CountDataset copy = *this;
  copy.x_.col(index) = values;
  if (!values.allFinite()) throw Error(ErrorCode::validation, "non-finite covariate entry");
  return copy;
}

CountDataset CountDataset::subset(std::span<const std::size_t> rows, Validation validation) const {
  std::vector<std::int64_t> y;
  std::vector<int> cohort;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), x_.cols());
  y.reserve(rows.size());
  cohort.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = rows[k];
    if (r >= n()) throw Error(ErrorCode::parameter, "subset row out of range");
    y.push_back(y_[r]);
    cohort.push_back(cohort_[r]);
    x.row(static_cast<Eigen::Index>(k)) = x_.row(static_cast<Eigen::Index>(r));
  }
  return CountDataset(std::move(y), std::move(x), std::move(cohort), cohort_labels_, covariates_,
                      error_prone_index_, outcome_name_, cohort_name_, validation);
}

bool CountDataset::operator==(const CountDataset& other) const {
  if (covariates_.size() != other.covariates_.size()) return false;
  for (std::size_t c = 0; c < covariates_.size(); ++c) {
    const auto& a = covariates_[c];
    const auto& b = other.covariates_[c];
    if (a.name != b.name || a.kind != b.kind || a.levels != b.levels) return false;
  }
  return y_ == other.y_ && cohort_ == other.cohort_ && cohort_labels_ == other.cohort_labels_ &&
         x_.rows() == other.x_.rows() && x_.cols() == other.x_.cols() && x_ == other.x_ &&
         error_prone_index_ == other.error_prone_index_ && outcome_name_ == other.outcome_name_ &&
         cohort_name_ == other.cohort_name_;
}

Eigen::Index expected_design_columns(const std::vector<CovariateInfo>& covariates) {
  Eigen::Index cols = 1;
  for (const auto& c : covariates)
    cols += c.kind == CovariateKind::numeric ? 1 : static_cast<Eigen::Index>(c.levels.size()) - 1;
  return cols;
}

DesignMatrix build_design(const CountDataset& dataset) {
  DesignMatrix design;
  const auto& covs = dataset.covariates();
  for (int c = 0; c < dataset.p(); ++c) {
    const auto& info = covs[c];
    if (info.kind == CovariateKind::numeric) {
      if (c == dataset.error_prone_index())
        design.error_prone_column = static_cast<int>(design.column_map.size()) + 1;
      design.column_map.push_back({c, -1, info.name});
      continue;
    }
    if (info.levels.size() < 2)
      throw Error(ErrorCode::singular_design,
                  "categorical '" + info.name + "' has a single level (degenerate column)");
    for (int level = 1; level < static_cast<int>(info.levels.size()); ++level)
      design.column_map.push_back({c, level, info.name + "=" + info.levels[level]});
  }

  const auto n = static_cast<Eigen::Index>(dataset.n());
  design.rows = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(design.column_map.size()) + 1);
  design.rows.col(0).setOnes();
  for (std::size_t k = 0; k < design.column_map.size(); ++k) {
    const auto& col = design.column_map[k];
    const auto target = static_cast<Eigen::Index>(k) + 1;
    if (col.level < 0) {
      design.rows.col(target) = dataset.x().col(col.covariate);
    } else {
      design.rows.col(target) =
          (dataset.x().col(col.covariate).array() == static_cast<double>(col.level)).cast<double>();
    }
  }
  return design;
}

std::int64_t round_half_up(double value) {
  return static_cast<std::int64_t>(std::floor(value + 0.5));
}

CountDataset parse_csv(std::istream& in, const Schema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::parse, "empty CSV (no header row)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_fields(line, schema.delimiter);

  std::vector<std::string> covariate_names = schema.covariates;
  for (const auto& name : schema.categoricals)
    if (std::find(covariate_names.begin(), covariate_names.end(), name) == covariate_names.end())
      covariate_names.push_back(name);
  if (covariate_names.empty()) throw Error(ErrorCode::schema, "schema lists no covariates");
  if (schema.outcome.empty() || schema.cohort.empty())
    throw Error(ErrorCode::schema, "schema must name the outcome and cohort columns");

  const auto outcome_col = find_column(header, schema.outcome);
  const auto cohort_col = find_column(header, schema.cohort);
  std::vector<std::size_t> cov_cols;
  std::vector<bool> is_categorical;
  for (const auto& name : covariate_names) {
    cov_cols.push_back(find_column(header, name));
    is_categorical.push_back(std::find(schema.categoricals.begin(), schema.categoricals.end(),
                                       name) != schema.categoricals.end());
  }
  const auto ep = std::find(covariate_names.begin(), covariate_names.end(), schema.error_prone);
  if (ep == covariate_names.end())
    throw Error(ErrorCode::schema, "error-prone column '" + schema.error_prone +
                                       "' is not among the covariates");
  const int error_prone_index = static_cast<int>(ep - covariate_names.begin());
  if (is_categorical[error_prone_index])
    throw Error(ErrorCode::schema, "error-prone column must be numeric");

  std::vector<std::int64_t> y;
  std::vector<int> cohort;
  std::vector<std::string> cohort_labels;
  std::unordered_map<std::string, int> cohort_index;
  std::vector<std::vector<double>> numeric(covariate_names.size());
  std::vector<std::vector<std::string>> raw_levels(covariate_names.size());

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split_fields(line, schema.delimiter);
    if (fields.size() != header.size())
      throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": expected " +
                                        std::to_string(header.size()) + " fields, got " +
                                        std::to_string(fields.size()));
    double outcome = 0.0;
    if (!parse_double(fields[outcome_col], outcome))
      throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": non-numeric outcome '" +
                                        fields[outcome_col] + "'");
    const auto count = round_half_up(outcome);
    if (count < 0)
      throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": negative outcome");
    y.push_back(count);

    const auto& label = fields[cohort_col];
    if (label.empty())
      throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": empty cohort label");
    auto [it, inserted] = cohort_index.try_emplace(label, static_cast<int>(cohort_labels.size()));
    if (inserted) cohort_labels.push_back(label);
    cohort.push_back(it->second);

    for (std::size_t c = 0; c < cov_cols.size(); ++c) {
      const auto& cell = fields[cov_cols[c]];
      if (is_categorical[c]) {
        if (cell.empty())
          throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": missing level for '" +
                                            covariate_names[c] + "'");
        raw_levels[c].push_back(cell);
      } else {
        double v = 0.0;
        if (!parse_double(cell, v))
          throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": non-numeric value '" +
                                            cell + "' in column '" + covariate_names[c] + "'");
        numeric[c].push_back(v);
      }
    }
  }

  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(covariate_names.size()));
  std::vector<CovariateInfo> infos;
  for (std::size_t c = 0; c < covariate_names.size(); ++c) {
    CovariateInfo info{covariate_names[c], CovariateKind::numeric, {}};
    if (is_categorical[c]) {
      info.kind = CovariateKind::categorical;
      std::set<std::string> levels(raw_levels[c].begin(), raw_levels[c].end());
      info.levels.assign(levels.begin(), levels.end());
      std::map<std::string, int> code;
      for (std::size_t l = 0; l < info.levels.size(); ++l) code[info.levels[l]] = static_cast<int>(l);
      for (Eigen::Index i = 0; i < n; ++i)
        x(i, static_cast<Eigen::Index>(c)) = code[raw_levels[c][static_cast<std::size_t>(i)]];
    } else {
      for (Eigen::Index i = 0; i < n; ++i)
        x(i, static_cast<Eigen::Index>(c)) = numeric[c][static_cast<std::size_t>(i)];
    }
    infos.push_back(std::move(info));
  }
  return CountDataset(std::move(y), std::move(x), std::move(cohort), std::move(cohort_labels),
                      std::move(infos), error_prone_index, schema.outcome, schema.cohort);
}

CountDataset ingest_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  return parse_csv(in, schema);
}

void write_csv(const CountDataset& dataset, std::ostream& out) {
  out << quote_if_needed(dataset.outcome_name()) << ',' << quote_if_needed(dataset.cohort_name());
  for (const auto& c : dataset.covariates()) out << ',' << quote_if_needed(c.name);
  out << '\n';
  for (std::size_t i = 0; i < dataset.n(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << dataset.y()[i] << ',' << quote_if_needed(dataset.cohort_labels()[dataset.cohort()[i]]);
    for (int c = 0; c < dataset.p(); ++c) {
      const auto& info = dataset.covariates()[c];
      out << ',';
      if (info.kind == CovariateKind::categorical)
        out << quote_if_needed(info.levels[static_cast<std::size_t>(dataset.x()(r, c))]);
      else
        out << format_double(dataset.x()(r, c));
    }
    out << '\n';
  }
}

void write_csv(const CountDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
  write_csv(dataset, out);
}

std::vector<double> read_numeric_column(const std::filesystem::path& path,
                                        const std::string& column, char delimiter) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::parse, "empty CSV (no header row)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto col = find_column(split_fields(line, delimiter), column);
  std::vector<double> values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split_fields(line, delimiter);
    double v = 0.0;
    if (col >= fields.size() || !parse_double(fields[col], v))
      throw Error(ErrorCode::parse, "row " + std::to_string(row) + ": non-numeric value in '" +
                                        column + "'");
    values.push_back(v);
  }
  return values;
}

OutcomeSummary summarize_outcome(const CountDataset& dataset) {
  const auto& y = dataset.y();
  const double n = static_cast<double>(y.size());
  double mean = 0.0;
  for (auto v : y) mean += static_cast<double>(v);
  mean /= n;
  double ss = 0.0;
  for (auto v : y) ss += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
  const double variance = y.size() > 1 ? ss / (n - 1.0) : 0.0;
  return {y.size(), dataset.m(), mean, variance};
}

}  // namespace hbsimex
