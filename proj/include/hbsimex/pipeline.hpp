#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hbsimex/count_glm.hpp"
#include "hbsimex/data.hpp"
#include "hbsimex/hb_sampler.hpp"
#include "hbsimex/model_eval.hpp"
#include "hbsimex/simex.hpp"

namespace hbsimex {

// The runnable estimators: naive GLM, GLM + SIMEX, hierarchical Bayes with
// SIMEX, and hierarchical Bayes on the observed covariate.
enum class ModelKind { glm, glm_simex, hb_simex, hb };

ModelKind parse_model_kind(const std::string& name);
std::string to_string(ModelKind kind);
bool uses_simex(ModelKind kind);
bool is_hierarchical(ModelKind kind);

struct PipelineSettings {
  ModelKind model = ModelKind::glm;
  SimexConfig simex;  // grid, B and sigma2_eps for the GLM-level SIMEX
  int hb_B = 10;      // chains per grid point for the hierarchical SIMEX
  SamplerOptions sampler;
  int chains = 1;
  std::uint64_t seed = 1;
  double alpha = 0.01;
  std::optional<Eigen::VectorXd> sigma_e_diag;
  std::optional<double> prior_mean_C;
  std::optional<double> prior_mean_gamma;
  int glm_draws = 1000;  // normal-approximation draws used for GLM WAIC
  int threads = 1;
  GlmOptions glm;
};

struct ModelFit {
  ModelKind kind = ModelKind::glm;
  std::vector<std::string> coefficient_names;  // intercept first
  GlmFit naive;
  std::optional<SimexTrace> glm_trace;
  Eigen::VectorXd beta;  // GLM-level coefficients (SIMEX-corrected when applicable)
  double gamma = 0.0;
  Eigen::MatrixXd cov_beta;
  std::optional<FixedHypers> fixed;
  std::optional<Chain> chain;  // for hb-simex: lambda = 0 draws shifted to the extrapolated means
  std::optional<SimexTrace> hb_trace;
  std::size_t parameter_count = 0;  // used for Pearson dispersion
};

ModelFit fit_model(const CountDataset& train, const PipelineSettings& settings);

struct Evaluation {
  MetricReport report;
  std::vector<double> predictions;
  std::vector<double> gammas;
};

// Metrics on `data` (train or held-out). `dispersion` scales the deviance;
// pass std::nullopt to use the Pearson dispersion of the model on `data`.
Evaluation evaluate(const ModelFit& fit, const CountDataset& data, const PipelineSettings& settings,
                    std::optional<double> dispersion = std::nullopt);

// Training Pearson dispersion used to scale deviances.
double training_dispersion(const ModelFit& fit, const CountDataset& train);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

enum class SplitMode { partition, bootstrap };
SplitMode parse_split_mode(const std::string& name);

// Per cohort, seeded. Partition: shuffle, first `train_per_cohort` to train,
// next `test_per_cohort` to test (0 means "all remaining"). Bootstrap:
// halves of each cohort are resampled with replacement to the requested sizes.
Split split_by_cohort(const CountDataset& dataset, int train_per_cohort, int test_per_cohort,
                      std::uint64_t seed, SplitMode mode = SplitMode::partition);

nlohmann::json summarize_fit(const ModelFit& fit, const CountDataset& train);
void write_draws_csv(const Chain& chain, const std::vector<std::string>& slope_names,
                     const std::vector<std::string>& cohort_labels, std::ostream& out);

}  // namespace hbsimex
