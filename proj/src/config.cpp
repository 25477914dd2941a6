#include "hbsimex/config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "hbsimex/error.hpp"
#include "hbsimex/measurement_error.hpp"

namespace hbsimex {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d{
      {"data.path", ""},
      {"data.outcome", ""},
      {"data.cohort", ""},
      {"data.covariates", ""},
      {"data.categoricals", ""},
      {"data.error_prone", ""},
      {"data.delimiter", ","},
      {"data.clean_test_column", ""},
      {"model.type", "glm"},
      {"model.glm_draws", "1000"},
      {"simex.lambda_grid", "0,0.5,1,1.5,2"},
      {"simex.B", "100"},
      {"simex.sigma2_eps", ""},
      {"simex.replicate_file", ""},
      {"simex.extrapolant", "quadratic"},
      {"simex.hb_B", "10"},
      {"sampler.H", "2000"},
      {"sampler.burn_in", ""},
      {"sampler.chains", "1"},
      {"sampler.seed", "1"},
      {"sampler.greedy_accept", "false"},
      {"sampler.gamma_rate_variant", "gamma-sum"},
      {"hypers.alpha", "0.01"},
      {"hypers.sigma_e", ""},
      {"hypers.prior_mean_C", ""},
      {"hypers.prior_mean_gamma", ""},
      {"split.train_per_cohort", "50"},
      {"split.test_per_cohort", "100"},
      {"split.seed", ""},
      {"split.mode", "partition"},
      {"output.dir", "run"},
      {"output.threads", "1"},
  };
  return d;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

void set_key(std::map<std::string, std::string>& values, const std::string& key,
             const std::string& value) {
  if (!defaults().contains(key)) throw Error(ErrorCode::config, "unknown config key '" + key + "'");
  values[key] = trim(value);
}

double to_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw Error(ErrorCode::config, "config key '" + key + "' expects a number, got '" + text + "'");
  return v;
}

long long to_integer(const std::string& key, const std::string& text) {
  long long v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw Error(ErrorCode::config, "config key '" + key + "' expects an integer, got '" + text + "'");
  return v;
}

std::uint64_t to_seed(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw Error(ErrorCode::config, "config key '" + key + "' expects an unsigned seed, got '" + text + "'");
  return v;
}

int to_int(const std::string& key, const std::string& text) {
  const auto v = to_integer(key, text);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw Error(ErrorCode::config, "config key '" + key + "' is out of range");
  return static_cast<int>(v);
}

bool to_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw Error(ErrorCode::config, "config key '" + key + "' expects true/false, got '" + text + "'");
}

std::vector<std::string> to_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : to_list(text)) out.push_back(to_double(key, item));
  return out;
}

char to_delimiter(const std::string& text) {
  if (text == "," || text == "comma") return ',';
  if (text == ";" || text == "semicolon") return ';';
  if (text == "\\t" || text == "tab") return '\t';
  if (text == "|" || text == "pipe") return '|';
  throw Error(ErrorCode::config, "unsupported delimiter '" + text + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& text) {
  if (text.empty()) return {};
  std::filesystem::path p(text);
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

void RunConfig::validate() const {
  if (schema.error_prone.empty())
    throw Error(ErrorCode::config, "data.error_prone must name one numeric covariate");
  if (uses_simex(model)) {
    if (sigma2_eps.has_value() == !replicate_file.empty())
      throw Error(ErrorCode::config,
                  "model " + to_string(model) +
                      " needs exactly one of simex.sigma2_eps and simex.replicate_file");
  } else if (sigma2_eps && !replicate_file.empty()) {
    throw Error(ErrorCode::config, "simex.sigma2_eps and simex.replicate_file are exclusive");
  }
  if (sigma2_eps && !(*sigma2_eps >= 0.0))
    throw Error(ErrorCode::config, "simex.sigma2_eps must be non-negative");
  if (H < 1 || burn_in < 0 || burn_in > H)
    throw Error(ErrorCode::config, "sampler needs H >= 1 and 0 <= burn_in <= H");
  if (chains < 1) throw Error(ErrorCode::config, "sampler.chains must be at least 1");
  if (B < 1 || hb_B < 1) throw Error(ErrorCode::config, "SIMEX replicate counts must be positive");
  if (glm_draws < 2) throw Error(ErrorCode::config, "model.glm_draws must be at least 2");
  if (threads < 1) throw Error(ErrorCode::config, "output.threads must be at least 1");
  if (!(alpha > 0.0)) throw Error(ErrorCode::config, "hypers.alpha must be positive");
  if ((prior_mean_C && !(*prior_mean_C > 0)) || (prior_mean_gamma && !(*prior_mean_gamma > 0)))
    throw Error(ErrorCode::config, "prior means must be positive");
  for (double v : sigma_e)
    if (!(v > 0)) throw Error(ErrorCode::config, "hypers.sigma_e entries must be positive");
  if (train_per_cohort < 0 || test_per_cohort < 0)
    throw Error(ErrorCode::config, "split sizes must be non-negative");
}

RunConfig parse_config(std::istream& in, const std::vector<std::string>& overrides,
                       const std::filesystem::path& base_dir) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::config, std::string("config parse error: ") + e.message() +
                                       " (line " + std::to_string(e.line()) + ")");
  }
  std::map<std::string, std::string> values = defaults();
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty())
      throw Error(ErrorCode::config, "config key '" + section + "' is outside any section");
    for (const auto& [key, value] : keys) set_key(values, section + "." + key, value.data());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::config, "override '" + o + "' is not of the form section.key=value");
    set_key(values, trim(o.substr(0, eq)), o.substr(eq + 1));
  }

  RunConfig c;
  const auto get = [&](const std::string& key) -> const std::string& { return values.at(key); };
  c.data_path = resolve(base_dir, get("data.path"));
  c.schema.outcome = get("data.outcome");
  c.schema.cohort = get("data.cohort");
  c.schema.covariates = to_list(get("data.covariates"));
  c.schema.categoricals = to_list(get("data.categoricals"));
  c.schema.error_prone = get("data.error_prone");
  c.schema.delimiter = to_delimiter(get("data.delimiter"));
  c.clean_test_column = get("data.clean_test_column");

  c.model = parse_model_kind(get("model.type"));
  c.glm_draws = to_int("model.glm_draws", get("model.glm_draws"));

  c.lambda_grid = to_doubles("simex.lambda_grid", get("simex.lambda_grid"));
  c.B = to_int("simex.B", get("simex.B"));
  if (!get("simex.sigma2_eps").empty())
    c.sigma2_eps = to_double("simex.sigma2_eps", get("simex.sigma2_eps"));
  c.replicate_file = resolve(base_dir, get("simex.replicate_file"));
  c.extrapolant = parse_extrapolant(get("simex.extrapolant"));
  c.hb_B = to_int("simex.hb_B", get("simex.hb_B"));

  c.H = to_int("sampler.H", get("sampler.H"));
  c.burn_in = get("sampler.burn_in").empty() ? c.H / 2 : to_int("sampler.burn_in", get("sampler.burn_in"));
  c.chains = to_int("sampler.chains", get("sampler.chains"));
  c.seed = to_seed("sampler.seed", get("sampler.seed"));
  c.greedy_accept = to_bool("sampler.greedy_accept", get("sampler.greedy_accept"));
  c.gamma_rate = parse_gamma_rate_variant(get("sampler.gamma_rate_variant"));

  c.alpha = to_double("hypers.alpha", get("hypers.alpha"));
  c.sigma_e = to_doubles("hypers.sigma_e", get("hypers.sigma_e"));
  if (!get("hypers.prior_mean_C").empty())
    c.prior_mean_C = to_double("hypers.prior_mean_C", get("hypers.prior_mean_C"));
  if (!get("hypers.prior_mean_gamma").empty())
    c.prior_mean_gamma = to_double("hypers.prior_mean_gamma", get("hypers.prior_mean_gamma"));

  c.train_per_cohort = to_int("split.train_per_cohort", get("split.train_per_cohort"));
  c.test_per_cohort = to_int("split.test_per_cohort", get("split.test_per_cohort"));
  c.split_seed = get("split.seed").empty() ? c.seed : to_seed("split.seed", get("split.seed"));
  c.split_mode = parse_split_mode(get("split.mode"));

  c.out_dir = resolve(base_dir, get("output.dir"));
  c.threads = to_int("output.threads", get("output.threads"));

  values["sampler.burn_in"] = std::to_string(c.burn_in);
  values["split.seed"] = std::to_string(c.split_seed);
  c.resolved = std::move(values);
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config, "cannot open config file '" + path.string() + "'");
  return parse_config(in, overrides, path.parent_path());
}

nlohmann::json canonical_json(const RunConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, value] : config.resolved) {
    if (key == "output.dir" || key == "output.threads") continue;
    j[key] = value;
  }
  return j;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& config) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(canonical_json(config).dump());
  return out.str();
}

PipelineSettings to_settings(const RunConfig& config) {
  PipelineSettings s;
  s.model = config.model;
  s.simex.lambda_grid = config.lambda_grid;
  s.simex.B = config.B;
  s.simex.extrapolant = config.extrapolant;
  if (config.sigma2_eps) {
    s.simex.sigma2_eps = *config.sigma2_eps;
  } else if (!config.replicate_file.empty()) {
    s.simex.sigma2_eps = estimate_error_variance(read_replicates_csv(config.replicate_file));
  }
  s.hb_B = config.hb_B;
  s.sampler.H = config.H;
  s.sampler.burn_in = config.burn_in;
  s.sampler.greedy_accept = config.greedy_accept;
  s.sampler.gamma_rate = config.gamma_rate;
  s.chains = config.chains;
  s.seed = config.seed;
  s.alpha = config.alpha;
  if (!config.sigma_e.empty())
    s.sigma_e_diag = Eigen::Map<const Eigen::VectorXd>(config.sigma_e.data(),
                                                       static_cast<Eigen::Index>(config.sigma_e.size()));
  s.prior_mean_C = config.prior_mean_C;
  s.prior_mean_gamma = config.prior_mean_gamma;
  s.glm_draws = config.glm_draws;
  s.threads = config.threads;
  return s;
}

}  // namespace hbsimex
