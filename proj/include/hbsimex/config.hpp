#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hbsimex/data.hpp"
#include "hbsimex/pipeline.hpp"

namespace hbsimex {

// Run configuration read from an INI file with the sections
// [data] [model] [simex] [sampler] [hypers] [split] [output].
// Unknown sections or keys are rejected.
struct RunConfig {
  std::filesystem::path data_path;
  Schema schema;
  std::string clean_test_column;

  ModelKind model = ModelKind::glm;
  int glm_draws = 1000;

  std::vector<double> lambda_grid{0.0, 0.5, 1.0, 1.5, 2.0};
  int B = 100;
  std::optional<double> sigma2_eps;
  std::filesystem::path replicate_file;
  Extrapolant extrapolant = Extrapolant::quadratic;
  int hb_B = 10;

  int H = 2000;
  int burn_in = 1000;
  int chains = 1;
  std::uint64_t seed = 1;
  bool greedy_accept = false;
  GammaRateVariant gamma_rate = GammaRateVariant::gamma_sum;

  double alpha = 0.01;
  std::vector<double> sigma_e;
  std::optional<double> prior_mean_C;
  std::optional<double> prior_mean_gamma;

  int train_per_cohort = 50;
  int test_per_cohort = 100;
  std::uint64_t split_seed = 1;
  SplitMode split_mode = SplitMode::partition;

  std::filesystem::path out_dir = "run";
  int threads = 1;

  // Every key as resolved (defaults included), "section.key" -> text.
  std::map<std::string, std::string> resolved;

  void validate() const;
};

// `overrides` are "section.key=value" strings applied after the file.
// Relative paths are resolved against `base_dir`.
RunConfig parse_config(std::istream& in, const std::vector<std::string>& overrides = {},
                       const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides = {});

// Settings that affect results; output directory and thread count are excluded.
nlohmann::json canonical_json(const RunConfig& config);
std::uint64_t fnv1a64(std::string_view bytes);
std::string config_hash(const RunConfig& config);

// Resolves the error variance (directly or from a replicate file).
PipelineSettings to_settings(const RunConfig& config);

}  // namespace hbsimex
