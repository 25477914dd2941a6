#include "hbsimex/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "hbsimex/config.hpp"
#include "hbsimex/data.hpp"
#include "hbsimex/error.hpp"
#include "hbsimex/measurement_error.hpp"
#include "hbsimex/model_eval.hpp"
#include "hbsimex/pipeline.hpp"
#include "hbsimex/synthgen.hpp"

namespace hbsimex::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return 2;
    case ErrorCategory::data: return 3;
    case ErrorCategory::numerical: return 4;
  }
  return 4;
}

const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numerical: return "numerical";
  }
  return "numerical";
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
  return out;
}

void write_json(const fs::path& path, const json& j) { open_out(path) << j.dump(2) << '\n'; }

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read '" + path.string() + "'");
  std::ostringstream bytes;
  bytes << in.rdbuf();
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(bytes.str());
  return hex.str();
}

void write_penalty_csv(const fs::path& path, const MetricReport& report) {
  auto out = open_out(path);
  out << "record,penalty\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Eigen::Index i = 0; i < report.per_point_penalty.size(); ++i)
    out << i << ',' << report.per_point_penalty(i) << '\n';
}

struct FitArgs {
  std::string config;
  std::vector<std::string> sets;
  int threads = 0;
  std::string out;
  bool preflight = false;
};

int cmd_fit(const FitArgs& args, std::ostream& out) {
  auto overrides = args.sets;
  if (args.threads > 0) overrides.push_back("output.threads=" + std::to_string(args.threads));
  if (!args.out.empty()) overrides.push_back("output.dir=" + fs::absolute(args.out).string());
  const RunConfig config = load_config(args.config, overrides);
  if (config.data_path.empty()) throw Error(ErrorCode::config, "data.path is required");

  const CountDataset data = ingest_csv(config.data_path, config.schema);
  const DesignMatrix design = build_design(data);

  if (args.preflight) {
    const auto s = summarize_outcome(data);
    std::vector<std::string> columns{"(Intercept)"};
    for (const auto& c : design.column_map) columns.push_back(c.name);
    json j{{"n", s.n},
           {"cohorts", s.m},
           {"outcome", data.outcome_name()},
           {"outcome_mean", s.mean},
           {"outcome_variance", s.variance},
           {"design_columns", columns},
           {"model", to_string(config.model)},
           {"config_hash", config_hash(config)}};
    out << j.dump(2) << '\n';
    return 0;
  }

  const PipelineSettings settings = to_settings(config);

  CountDataset evaluation_source = data;
  if (!config.clean_test_column.empty()) {
    const auto clean = read_numeric_column(config.data_path, config.clean_test_column,
                                           config.schema.delimiter);
    if (clean.size() != data.n())
      throw Error(ErrorCode::validation, "clean test column length does not match the data");
    evaluation_source = data.with_covariate(
        data.error_prone_index(),
        Eigen::Map<const Eigen::VectorXd>(clean.data(), static_cast<Eigen::Index>(clean.size())));
  }

  const Split split = split_by_cohort(data, config.train_per_cohort, config.test_per_cohort,
                                      config.split_seed, config.split_mode);
  const CountDataset train = data.subset(split.train);
  const ModelFit fit = fit_model(train, settings);
  const double phi = training_dispersion(fit, train);

  fs::create_directories(config.out_dir);
  const fs::path dir = config.out_dir;
  write_json(dir / "manifest.json", json{{"tool", "hbsimex"},
                                         {"version", kVersion},
                                         {"command", "fit"},
                                         {"config", canonical_json(config)},
                                         {"config_hash", config_hash(config)},
                                         {"seed", config.seed},
                                         {"data_hash", file_hash(config.data_path)}});

  json summary = summarize_fit(fit, train);
  summary["train_records"] = split.train.size();
  summary["test_records"] = split.test.size();
  summary["training_dispersion"] = phi;
  summary["sigma2_eps"] = settings.simex.sigma2_eps;
  write_json(dir / "summary.json", summary);

  const auto train_eval = evaluate(fit, train, settings, phi);
  write_json(dir / "metrics_train.json", to_json(train_eval.report));
  write_penalty_csv(dir / "pointwise_penalty_train.csv", train_eval.report);
  json brief{{"model", to_string(config.model)},
             {"train", {{"waic", train_eval.report.waic}, {"msle", train_eval.report.msle}}}};
  if (!split.test.empty()) {
    const CountDataset test =
        evaluation_source.subset(split.test, CountDataset::Validation::allow_empty_cohorts);
    const auto test_eval = evaluate(fit, test, settings, phi);
    write_json(dir / "metrics_test.json", to_json(test_eval.report));
    write_penalty_csv(dir / "pointwise_penalty_test.csv", test_eval.report);
    brief["test"] = {{"waic", test_eval.report.waic}, {"msle", test_eval.report.msle}};
  }

  if (fit.glm_trace) {
    auto f = open_out(dir / "simex_trace.csv");
    write_trace_csv(*fit.glm_trace, f);
    write_json(dir / "simex_summary.json", to_json(*fit.glm_trace));
  }
  if (fit.hb_trace) {
    auto f = open_out(dir / "hb_simex_trace.csv");
    write_trace_csv(*fit.hb_trace, f);
  }
  if (fit.chain) {
    std::vector<std::string> slopes(fit.coefficient_names.begin() + 1, fit.coefficient_names.end());
    auto f = open_out(dir / "draws.csv");
    write_draws_csv(*fit.chain, slopes, train.cohort_labels(), f);
  }
  out << brief.dump(2) << '\n';
  return 0;
}

struct EstimateArgs {
  std::string replicates;
  std::string data;
  std::string column;
  std::string cohort;
  std::string delimiter = ",";
  int q = 5;
  std::uint64_t seed = 1;
  std::string pool = "cohort";
  std::string write_replicates;
  std::string out;
};

int cmd_estimate_error(const EstimateArgs& args, std::ostream& out) {
  ReplicateSet reps;
  json report;
  std::vector<double> x;
  if (!args.replicates.empty()) {
    reps = read_replicates_csv(args.replicates);
    report["source"] = "replicates";
  } else {
    if (args.data.empty() || args.column.empty())
      throw Error(ErrorCode::config, "estimate-error needs --replicates or --data with --column");
    const char delim = args.delimiter == ";" || args.delimiter == "semicolon" ? ';'
                       : args.delimiter == "tab"                             ? '\t'
                                                                             : ',';
    x = read_numeric_column(args.data, args.column, delim);
    ResidualPool pool = ResidualPool::cohort;
    if (args.pool == "global") pool = ResidualPool::global;
    else if (args.pool != "cohort") throw Error(ErrorCode::config, "unknown pool '" + args.pool + "'");
    if (!args.cohort.empty()) {
      const auto raw = read_numeric_column(args.data, args.cohort, delim);
      std::map<double, int> ids;
      std::vector<int> cohort;
      for (double v : raw) cohort.push_back(ids.try_emplace(v, static_cast<int>(ids.size())).first->second);
      reps = bootstrap_replicates(x, cohort, args.q, args.seed, pool);
    } else {
      reps = bootstrap_replicates(x, args.q, args.seed);
    }
    report["source"] = "bootstrap";
    report["bootstrap"] = {{"column", args.column}, {"Q", args.q}, {"seed", args.seed}, {"pool", args.pool}};
  }
  if (!args.write_replicates.empty()) write_replicates_csv(reps, args.write_replicates);
  const double s2 = estimate_error_variance(reps);
  report["sigma2_eps"] = s2;
  report["records"] = reps.record_ids.size();
  report["measurements"] = reps.total_measurements();
  report["degrees_of_freedom"] = reps.degrees_of_freedom();
  if (!x.empty()) {
    const auto model = describe_error_model(x, s2);
    if (model.sigma2_u) report["sigma2_u"] = *model.sigma2_u;
    if (model.mean_u) report["mean_u"] = *model.mean_u;
  }
  if (!args.out.empty()) write_json(args.out, report);
  out << report.dump(2) << '\n';
  return 0;
}

struct SimulateArgs {
  int m = 12;
  int n_per = 80;
  std::uint64_t seed = 1;
  TruthSpec spec;
  std::string out = "synthetic";
};

int cmd_simulate(const SimulateArgs& args, std::ostream& out) {
  const auto data = generate(args.m, args.n_per, args.spec, args.seed);
  fs::create_directories(args.out);
  const fs::path dir = args.out;
  write_synthetic(data, dir / "data.csv", dir / "truth.json");
  out << json{{"data", (dir / "data.csv").string()},
              {"truth", (dir / "truth.json").string()},
              {"records", data.dataset.n()},
              {"cohorts", data.dataset.m()}}
             .dump(2)
      << '\n';
  return 0;
}

struct DiagnoseArgs {
  std::string draws;
  int thin = 10;
  std::string out;
};

int cmd_diagnose(const DiagnoseArgs& args, std::ostream& out) {
  std::ifstream in(args.draws);
  if (!in) throw Error(ErrorCode::io, "cannot read draws file '" + args.draws + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::validation, "draws file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "iteration,cohort,parameter,value")
    throw Error(ErrorCode::schema, "draws file header must be iteration,cohort,parameter,value");

  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<double>> traces;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string iteration, cohort, parameter, value;
    std::getline(ss, iteration, ',');
    std::getline(ss, cohort, ',');
    std::getline(ss, parameter, ',');
    std::getline(ss, value, ',');
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw Error(ErrorCode::parse, "draws row " + std::to_string(row) + ": bad value '" + value + "'");
    }
    const auto key = std::make_pair(cohort, parameter);
    auto [it, inserted] = traces.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(v);
  }
  if (traces.empty()) throw Error(ErrorCode::validation, "draws file holds no draws");

  json report;
  report["thin"] = args.thin;
  auto entries = json::array();
  for (const auto& key : order) {
    const auto& trace = traces.at(key);
    json e{{"cohort", key.first}, {"parameter", key.second}, {"draws", trace.size()}};
    std::size_t moves = 0;
    for (std::size_t h = 1; h < trace.size(); ++h) moves += trace[h] != trace[h - 1];
    e["move_rate"] = trace.size() > 1 ? static_cast<double>(moves) / static_cast<double>(trace.size() - 1) : 0.0;
    try {
      const double dw = durbin_watson(thin(trace, static_cast<std::size_t>(std::max(1, args.thin))));
      e["durbin_watson"] = dw;
      e["within_band"] = dw >= 1.5 && dw <= 2.5;
    } catch (const Error& err) {
      e["durbin_watson"] = nullptr;
      e["note"] = err.what();
    }
    entries.push_back(e);
  }
  report["traces"] = entries;
  if (!args.out.empty()) write_json(args.out, report);
  out << report.dump(2) << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical negative-binomial regression with SIMEX measurement-error correction",
               "hbsimex"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model described by a config file");
  fit_cmd->add_option("-c,--config", fit.config, "INI run configuration")->required();
  fit_cmd->add_option("--set", fit.sets, "Override a config key: section.key=value");
  fit_cmd->add_option("--threads", fit.threads, "Worker cap (results do not depend on it)");
  fit_cmd->add_option("--out", fit.out, "Output directory");
  fit_cmd->add_flag("--preflight", fit.preflight, "Ingest and summarise the data only");

  EstimateArgs est;
  auto* est_cmd = app.add_subcommand("estimate-error", "Estimate the measurement-error variance");
  est_cmd->add_option("--replicates", est.replicates, "Replicate CSV (record_id,replicate_index,value)");
  est_cmd->add_option("--data", est.data, "Data CSV for bootstrap replicates");
  est_cmd->add_option("--column", est.column, "Error-prone column");
  est_cmd->add_option("--cohort", est.cohort, "Numeric cohort column for within-cohort residuals");
  est_cmd->add_option("--delimiter", est.delimiter, "Field delimiter: , ; or tab");
  est_cmd->add_option("--q", est.q, "Bootstrap replicates per record");
  est_cmd->add_option("--seed", est.seed, "Bootstrap seed");
  est_cmd->add_option("--pool", est.pool, "Residual pool: cohort or global");
  est_cmd->add_option("--write-replicates", est.write_replicates, "Save generated replicates");
  est_cmd->add_option("--out", est.out, "Report JSON path");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate synthetic hierarchical count data");
  sim_cmd->add_option("--m", sim.m, "Cohorts");
  sim_cmd->add_option("--n-per", sim.n_per, "Records per cohort");
  sim_cmd->add_option("--seed", sim.seed, "Seed");
  sim_cmd->add_option("--rho", sim.spec.rho, "Correlation of (log C, beta) across cohorts");
  sim_cmd->add_option("--sigma2-eps", sim.spec.sigma2_eps, "Measurement-error variance");
  sim_cmd->add_option("--log-c-mean", sim.spec.log_c_mean);
  sim_cmd->add_option("--log-c-sd", sim.spec.log_c_sd);
  sim_cmd->add_option("--beta-mean", sim.spec.beta_mean);
  sim_cmd->add_option("--beta-sd", sim.spec.beta_sd);
  sim_cmd->add_option("--log-gamma-mean", sim.spec.log_gamma_mean);
  sim_cmd->add_option("--log-gamma-sd", sim.spec.log_gamma_sd);
  sim_cmd->add_option("--u-mean", sim.spec.u_mean);
  sim_cmd->add_option("--u-sd", sim.spec.u_sd);
  sim_cmd->add_option("--extra-slopes", sim.spec.extra_slopes, "Slopes of clean covariates z1..")
      ->delimiter(',');
  sim_cmd->add_option("--out", sim.out, "Output directory");

  DiagnoseArgs diag;
  auto* diag_cmd = app.add_subcommand("diagnose", "Durbin-Watson and move-rate report for a draws file");
  diag_cmd->add_option("--draws", diag.draws, "draws.csv from a fit")->required();
  diag_cmd->add_option("--thin", diag.thin, "Thinning factor before Durbin-Watson");
  diag_cmd->add_option("--out", diag.out, "Report JSON path");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << json{{"error", {{"code", "config"}, {"category", "config"}, {"message", e.what()}}}}.dump()
        << '\n';
    return 2;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit, out);
    if (*est_cmd) return cmd_estimate_error(est, out);
    if (*sim_cmd) return cmd_simulate(sim, out);
    if (*diag_cmd) return cmd_diagnose(diag, out);
  } catch (const Error& e) {
    err << json{{"error",
                 {{"code", to_string(e.code())},
                  {"category", category_name(e.category())},
                  {"message", e.what()}}}}
               .dump()
        << '\n';
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    err << json{{"error", {{"code", "io"}, {"category", "data"}, {"message", e.what()}}}}.dump() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << json{{"error", {{"code", "numerical"}, {"category", "numerical"}, {"message", e.what()}}}}
               .dump()
        << '\n';
    return 4;
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace hbsimex::cli
