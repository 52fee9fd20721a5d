#include "agekf/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "agekf/agestruct.hpp"
#include "agekf/enkf.hpp"
#include "agekf/rng.hpp"

namespace agekf::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// KeyValueConfig

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_string(buffer.str());
}

KeyValueConfig KeyValueConfig::from_string(const std::string& text) {
  KeyValueConfig config;
  std::istringstream stream(text);
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    const auto trim = [](const std::string& s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    config.set(key, value);
  }
  return config;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
  consumed_[key] = false;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  try {
    std::size_t used = 0;
    const double value = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return value;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': invalid number '" + it->second + "'");
  }
}

int KeyValueConfig::get_int(const std::string& key, int fallback) {
  const double value = get_double(key, static_cast<double>(fallback));
  const int rounded = static_cast<int>(std::lround(value));
  if (std::fabs(value - rounded) > 1e-12) {
    throw ConfigError("config key '" + key + "': expected an integer");
  }
  return rounded;
}

std::uint64_t KeyValueConfig::get_uint64(const std::string& key, std::uint64_t fallback) {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  try {
    std::size_t used = 0;
    const unsigned long long value = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return value;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': invalid unsigned integer '" + it->second + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false");
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  return it->second;
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key,
                                                    std::vector<double> fallback) {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  std::vector<double> values;
  std::istringstream stream(it->second);
  std::string item;
  while (std::getline(stream, item, ',')) {
    try {
      values.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': invalid list entry '" + item + "'");
    }
  }
  if (values.empty()) throw ConfigError("config key '" + key + "': empty list");
  return values;
}

void KeyValueConfig::reject_unknown() const {
  std::string unknown;
  for (const auto& [key, used] : consumed_) {
    if (!used) unknown += " " + key;
  }
  if (!unknown.empty()) throw ConfigError("unknown config keys:" + unknown);
}

// ---------------------------------------------------------------------------
// Small output helpers

namespace {

std::string fmt(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

/// Sorted canonical key = value text; hashing it fingerprints the run.
class ConfigText {
 public:
  void add(const std::string& key, const std::string& value) { entries_[key] = value; }
  void add(const std::string& key, double value) { entries_[key] = fmt(value); }
  void add(const std::string& key, int value) { entries_[key] = std::to_string(value); }
  void add(const std::string& key, std::uint64_t value) { entries_[key] = std::to_string(value); }
  void add(const std::string& key, bool value) { entries_[key] = value ? "true" : "false"; }

  std::string str() const {
    std::string text;
    for (const auto& [key, value] : entries_) text += key + " = " + value + "\n";
    return text;
  }

 private:
  std::map<std::string, std::string> entries_;
};

dataio::OutputFormat parse_format(const std::string& format) {
  if (format == "csv") return dataio::OutputFormat::csv;
  if (format == "json") return dataio::OutputFormat::json;
  throw ConfigError("unknown output format '" + format + "' (expected csv or json)");
}

std::string output_path(const std::string& out_dir, const std::string& stem,
                        dataio::OutputFormat format) {
  fs::create_directories(out_dir);
  return (fs::path(out_dir) / (stem + (format == dataio::OutputFormat::csv ? ".csv" : ".json")))
      .string();
}

KeyValueConfig load_config(const CommonOptions& options) {
  if (options.config_path.empty()) return {};
  return KeyValueConfig::from_file(options.config_path);
}

constexpr std::uint64_t kSyntheticStream = ~0ULL;  // never collides with member ids

}  // namespace

// ---------------------------------------------------------------------------
// Twin experiment

TwinResult run_twin(const TwinConfig& config) {
  config.grid.validate();
  const int n_a = config.grid.n_a;
  const int dim = n_a + 2;
  const agestruct::SimpleModelParams truth{config.truth_mu, config.truth_lambda};
  truth.validate();

  enkf::StateSpaceModel model;
  model.dim_x = dim;
  model.dim_z = n_a;
  model.drift = [grid = config.grid, n_a](Eigen::Ref<const Eigen::VectorXd> x, double t,
                                          Eigen::Ref<Eigen::VectorXd> out) {
    const agestruct::SimpleModelParams params{x[n_a], x[n_a + 1]};
    for (int j = 0; j < n_a; ++j) {
      out[j] = agestruct::simple_rate_of_change(grid.age(j), t, params);
    }
    out[n_a] = 0.0;
    out[n_a + 1] = 0.0;
  };
  model.measure = [n_a](Eigen::Ref<const Eigen::VectorXd> x, double,
                        Eigen::Ref<Eigen::VectorXd> out) { out = x.head(n_a); };
  model.process_cov = [dim, config](double) {
    if (config.q_diagonal) {
      return enkf::CovSpec::diagonal(Eigen::VectorXd::Constant(dim, config.q_variance));
    }
    return enkf::CovSpec::scaled_ones(dim, config.q_variance);
  };
  model.obs_cov = [n_a, config](double) {
    return enkf::CovSpec::diagonal(Eigen::VectorXd::Constant(n_a, config.r_variance));
  };

  enkf::PositivityTransform transform;
  transform.indices = {n_a, n_a + 1};

  Eigen::VectorXd mean = Eigen::VectorXd::Constant(dim, config.init_state_mean);
  mean[n_a] = config.init_param_mean;
  mean[n_a + 1] = config.init_param_mean;
  Eigen::VectorXd variances = Eigen::VectorXd::Constant(dim, config.init_state_variance);
  variances[n_a] = config.init_param_variance;
  variances[n_a + 1] = config.init_param_variance;
  const enkf::GaussianInit init{mean, enkf::CovSpec::diagonal(variances)};

  enkf::FilterConfig filter;
  filter.delta_t = config.delta_t;
  filter.update_interval = config.update_interval;
  filter.ensemble_size = config.ensemble_size;
  filter.seed = config.seed;
  filter.n_steps = static_cast<int>(std::lround(config.t_end / config.delta_t));
  filter.threads = config.threads;
  filter.cov_recording = enkf::CovRecording::diagonal;

  // Synthetic observations: the exact solution perturbed by N(0, var).
  std::vector<enkf::ScheduledObservation> schedule;
  for (int step = config.update_interval; step <= filter.n_steps;
       step += config.update_interval) {
    const double t = step * config.delta_t;
    RandomStream stream(config.seed, kSyntheticStream,
                        substream_for(static_cast<std::uint64_t>(step),
                                      draw_site::synthetic_obs));
    Eigen::VectorXd z(n_a);
    const double sd = std::sqrt(config.obs_perturbation_variance);
    for (int j = 0; j < n_a; ++j) {
      z[j] = agestruct::solve_simple(truth, config.grid.age(j), t) + sd * stream.normal();
    }
    schedule.push_back({t, std::move(z), {}});
  }

  const auto estimates = enkf::run_filter(model, init, transform, schedule, filter);

  TwinResult result;
  result.truth_mu = config.truth_mu;
  result.truth_lambda = config.truth_lambda;
  for (const auto& estimate : estimates) {
    if (estimate.stage != enkf::Stage::posterior) continue;
    result.times.push_back(estimate.time);
    result.mu_mean.push_back(estimate.mean_physical[n_a]);
    result.mu_sd.push_back(estimate.sd_physical[n_a]);
    result.lambda_mean.push_back(estimate.mean_physical[n_a + 1]);
    result.lambda_sd.push_back(estimate.sd_physical[n_a + 1]);
  }
  return result;
}

// ---------------------------------------------------------------------------
// simulate

void cmd_simulate(const CommonOptions& options) {
  KeyValueConfig config = load_config(options);
  const double mu = config.get_double("mu", 0.08);
  const double lambda = config.get_double("lambda", 0.2);
  const double delta_a = config.get_double("delta_a", 0.12);
  const int n_a = config.get_int("n_a", 1000);
  const std::vector<double> times = config.get_double_list("times", {0.1, 2.0, 4.5});
  const double peak_t_end = config.get_double("peak_t_end", 10.0);
  const int peak_samples = config.get_int("peak_samples", 100);
  config.reject_unknown();

  const agestruct::SimpleModelParams params{mu, lambda};
  params.validate();
  const AgeGrid grid{0.0, delta_a, n_a};
  grid.validate();
  const dataio::OutputFormat format = parse_format(options.format);

  ConfigText text;
  text.add("command", std::string("simulate"));
  text.add("mu", mu);
  text.add("lambda", lambda);
  text.add("delta_a", delta_a);
  text.add("n_a", n_a);
  text.add("peak_t_end", peak_t_end);
  text.add("peak_samples", peak_samples);
  {
    std::string list;
    for (double t : times) list += (list.empty() ? "" : ",") + fmt(t);
    text.add("times", list);
  }

  dataio::RunOutput profiles;
  profiles.seed = 0;
  profiles.config_text = text.str();
  profiles.config_hash = dataio::fnv1a_hex(profiles.config_text);
  profiles.data_provenance = "closed-form model evaluation";
  profiles.index_name = "age_years";
  for (double t : times) profiles.columns.push_back("n_t" + fmt(t));
  for (int j = 0; j < grid.n_a; ++j) {
    profiles.times.push_back(grid.age(j));
    std::vector<double> row;
    row.reserve(times.size());
    for (double t : times) row.push_back(agestruct::solve_simple(params, grid.age(j), t));
    profiles.rows.push_back(std::move(row));
  }
  dataio::write_output(profiles, format, output_path(options.out_dir, "profiles", format));

  dataio::RunOutput peaks = profiles;
  peaks.index_name = "time_years";
  peaks.columns = {"peak_age_years"};
  peaks.times.clear();
  peaks.rows.clear();
  for (int k = 1; k <= peak_samples; ++k) {
    const double t = k * peak_t_end / peak_samples;
    peaks.times.push_back(t);
    peaks.rows.push_back({agestruct::peak_age(t, params)});
  }
  dataio::write_output(peaks, format, output_path(options.out_dir, "peaks", format));
  std::cerr << "simulate: wrote " << profiles.rows.size() << " profile rows and "
            << peaks.rows.size() << " peak-age samples\n";
}

// ---------------------------------------------------------------------------
// twin

namespace {

TwinConfig twin_config_from(KeyValueConfig& config, const CommonOptions& options) {
  TwinConfig twin;
  twin.grid.delta_a = config.get_double("delta_a", twin.grid.delta_a);
  twin.grid.n_a = config.get_int("n_a", twin.grid.n_a);
  twin.delta_t = config.get_double("delta_t", twin.delta_t);
  twin.t_end = config.get_double("t_end", twin.t_end);
  twin.update_interval = config.get_int("update_interval", twin.update_interval);
  twin.ensemble_size = config.get_int("ensemble_size", twin.ensemble_size);
  twin.seed = config.get_uint64("seed", twin.seed);
  twin.threads = config.get_int("threads", twin.threads);
  twin.truth_mu = config.get_double("truth_mu", twin.truth_mu);
  twin.truth_lambda = config.get_double("truth_lambda", twin.truth_lambda);
  twin.q_variance = config.get_double("q_variance", twin.q_variance);
  twin.q_diagonal = config.get_bool("q_diagonal", twin.q_diagonal);
  twin.r_variance = config.get_double("r_variance", twin.r_variance);
  twin.obs_perturbation_variance =
      config.get_double("obs_perturbation_variance", twin.obs_perturbation_variance);
  twin.init_state_mean = config.get_double("init_state_mean", twin.init_state_mean);
  twin.init_param_mean = config.get_double("init_param_mean", twin.init_param_mean);
  twin.init_state_variance = config.get_double("init_state_variance", twin.init_state_variance);
  twin.init_param_variance = config.get_double("init_param_variance", twin.init_param_variance);
  if (options.seed) twin.seed = *options.seed;
  if (options.ensemble_size) twin.ensemble_size = *options.ensemble_size;
  return twin;
}

ConfigText twin_config_text(const TwinConfig& twin) {
  ConfigText text;
  text.add("command", std::string("twin"));
  text.add("delta_a", twin.grid.delta_a);
  text.add("n_a", twin.grid.n_a);
  text.add("delta_t", twin.delta_t);
  text.add("t_end", twin.t_end);
  text.add("update_interval", twin.update_interval);
  text.add("ensemble_size", twin.ensemble_size);
  text.add("seed", twin.seed);
  text.add("truth_mu", twin.truth_mu);
  text.add("truth_lambda", twin.truth_lambda);
  text.add("q_variance", twin.q_variance);
  text.add("q_diagonal", twin.q_diagonal);
  text.add("r_variance", twin.r_variance);
  text.add("obs_perturbation_variance", twin.obs_perturbation_variance);
  text.add("init_state_mean", twin.init_state_mean);
  text.add("init_param_mean", twin.init_param_mean);
  text.add("init_state_variance", twin.init_state_variance);
  text.add("init_param_variance", twin.init_param_variance);
  return text;
}

}  // namespace

void cmd_twin(const CommonOptions& options) {
  KeyValueConfig config = load_config(options);
  const TwinConfig twin = twin_config_from(config, options);
  config.reject_unknown();
  const dataio::OutputFormat format = parse_format(options.format);

  const TwinResult result = run_twin(twin);

  dataio::RunOutput out;
  out.seed = twin.seed;
  out.config_text = twin_config_text(twin).str();
  out.config_hash = dataio::fnv1a_hex(out.config_text);
  out.data_provenance = "synthetic observations generated from the exact solution";
  out.index_name = "time_years";
  out.columns = {"lambda_mean", "lambda_sd", "mu_mean", "mu_sd", "lambda_true", "mu_true"};
  for (std::size_t i = 0; i < result.times.size(); ++i) {
    out.times.push_back(result.times[i]);
    out.rows.push_back({result.lambda_mean[i], result.lambda_sd[i], result.mu_mean[i],
                        result.mu_sd[i], result.truth_lambda, result.truth_mu});
  }
  dataio::write_output(out, format, output_path(options.out_dir, "twin", format));

  // Convergence summary: first time from which the estimate stays within 10%.
  auto settled = [&](const std::vector<double>& series, double truth) {
    double from = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = result.times.size(); i-- > 0;) {
      if (std::fabs(series[i] - truth) > 0.1 * truth) break;
      from = result.times[i];
    }
    return from;
  };
  std::cerr << "twin: lambda within 10% from t = " << settled(result.lambda_mean, twin.truth_lambda)
            << ", mu within 10% from t = " << settled(result.mu_mean, twin.truth_mu) << "\n";
}

// ---------------------------------------------------------------------------
// fit / forecast

std::vector<overdose::AnnualDeaths> to_annual_deaths(
    const std::vector<dataio::ObservationBatch>& batches) {
  std::vector<overdose::AnnualDeaths> out;
  out.reserve(batches.size());
  for (const auto& batch : batches) {
    overdose::AnnualDeaths annual;
    annual.year = batch.year;
    annual.deaths.resize(static_cast<int>(batch.deaths.size()));
    annual.available.resize(batch.deaths.size());
    for (std::size_t l = 0; l < batch.deaths.size(); ++l) {
      annual.deaths[static_cast<int>(l)] = static_cast<double>(batch.deaths[l]);
      annual.available[l] = !batch.suppressed[l];
    }
    out.push_back(std::move(annual));
  }
  return out;
}

std::vector<dataio::ObservationBatch> load_observations(const std::string& data_dir) {
  const fs::path canonical = fs::path(data_dir) / "observations.csv";
  const fs::path wonder = fs::path(data_dir) / "wonder.txt";
  if (fs::exists(canonical)) {
    std::ifstream in(canonical);
    if (!in) throw ParseError("cannot open " + canonical.string());
    return dataio::parse_canonical_observations(in);
  }
  if (fs::exists(wonder)) {
    std::ifstream in(wonder);
    if (!in) throw ParseError("cannot open " + wonder.string());
    return dataio::parse_wonder(in);
  }
  throw ParseError("no observation data found in '" + data_dir +
                   "' (expected observations.csv or wonder.txt)");
}

namespace {

overdose::FitOptions fit_options_from(KeyValueConfig& config, const CommonOptions& options) {
  overdose::FitOptions fit;
  fit.model.grid.delta_a = config.get_double("delta_a", fit.model.grid.delta_a);
  fit.model.grid.n_a = config.get_int("n_a", fit.model.grid.n_a);
  fit.model.population.n0 = config.get_double("population_n0", fit.model.population.n0);
  fit.model.population.delta_n =
      config.get_double("population_growth", fit.model.population.delta_n);
  fit.model.profile.fraction = config.get_double("initial_fraction", fit.model.profile.fraction);
  fit.model.profile.alpha = config.get_double("initial_alpha", fit.model.profile.alpha);
  fit.model.profile.beta = config.get_double("initial_beta", fit.model.profile.beta);
  fit.model.process_noise_variance =
      config.get_double("q_variance", fit.model.process_noise_variance);
  fit.model.diagonal_process_noise = config.get_bool("q_diagonal", fit.model.diagonal_process_noise);
  fit.model.obs_noise_variance = config.get_double("r_variance", fit.model.obs_noise_variance);
  fit.model.measurement_scale = config.get_double("measurement_scale", fit.model.measurement_scale);
  fit.model.table_refine = config.get_int("table_refine", fit.model.table_refine);
  fit.filter.delta_t = config.get_double("delta_t", fit.filter.delta_t);
  fit.filter.ensemble_size = config.get_int("ensemble_size", fit.filter.ensemble_size);
  fit.filter.seed = config.get_uint64("seed", 7);
  fit.filter.threads = config.get_int("threads", 0);
  fit.start_year = config.get_int("start_year", fit.start_year);
  fit.initial_params.mu = config.get_double("init_mu", fit.initial_params.mu);
  fit.initial_params.r0 = config.get_double("init_r0", fit.initial_params.r0);
  fit.initial_params.alpha1 = config.get_double("init_alpha1", fit.initial_params.alpha1);
  fit.initial_params.beta1 = config.get_double("init_beta1", fit.initial_params.beta1);
  fit.initial_params.alpha2 = config.get_double("init_alpha2", fit.initial_params.alpha2);
  fit.initial_params.beta2 = config.get_double("init_beta2", fit.initial_params.beta2);
  fit.state_init_variance = config.get_double("state_init_variance", fit.state_init_variance);
  fit.param_init_variance = config.get_double("param_init_variance", fit.param_init_variance);
  if (options.seed) fit.filter.seed = *options.seed;
  if (options.ensemble_size) fit.filter.ensemble_size = *options.ensemble_size;
  // steps between updates = one year of forecasts
  fit.filter.update_interval =
      std::max(1, static_cast<int>(std::lround(1.0 / fit.filter.delta_t)));
  return fit;
}

ConfigText fit_config_text(const overdose::FitOptions& fit, const std::string& command) {
  ConfigText text;
  text.add("command", command);
  text.add("delta_a", fit.model.grid.delta_a);
  text.add("n_a", fit.model.grid.n_a);
  text.add("population_n0", fit.model.population.n0);
  text.add("population_growth", fit.model.population.delta_n);
  text.add("initial_fraction", fit.model.profile.fraction);
  text.add("initial_alpha", fit.model.profile.alpha);
  text.add("initial_beta", fit.model.profile.beta);
  text.add("q_variance", fit.model.process_noise_variance);
  text.add("q_diagonal", fit.model.diagonal_process_noise);
  text.add("r_variance", fit.model.obs_noise_variance);
  text.add("measurement_scale", fit.model.measurement_scale);
  text.add("table_refine", fit.model.table_refine);
  text.add("delta_t", fit.filter.delta_t);
  text.add("ensemble_size", fit.filter.ensemble_size);
  text.add("seed", fit.filter.seed);
  text.add("start_year", fit.start_year);
  text.add("init_mu", fit.initial_params.mu);
  text.add("init_r0", fit.initial_params.r0);
  text.add("init_alpha1", fit.initial_params.alpha1);
  text.add("init_beta1", fit.initial_params.beta1);
  text.add("init_alpha2", fit.initial_params.alpha2);
  text.add("init_beta2", fit.initial_params.beta2);
  text.add("state_init_variance", fit.state_init_variance);
  text.add("param_init_variance", fit.param_init_variance);
  return text;
}

void report_population_fit(const std::string& data_dir, const overdose::PopulationModel& model,
                           int start_year) {
  const fs::path path = fs::path(data_dir) / "population.csv";
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  if (!in) return;
  const dataio::PopulationSeries series = dataio::parse_population(in);
  if (series.size() == 0) return;
  double worst = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double t = series.years[i] - start_year;
    if (t < 0) continue;
    const double predicted = overdose::population(t, model);
    worst = std::max(worst, std::fabs(predicted - series.persons[i]) / series.persons[i]);
  }
  std::cerr << "fit: linear population model vs " << path.string() << ": max relative deviation "
            << fmt(worst) << "\n";
}

const std::vector<double>& coarse_edges() {
  static const std::vector<double> edges = overdose::CoarseAgeBins::cdc_wonder().edges;
  return edges;
}

void write_predictions(const std::vector<overdose::YearPrediction>& predictions,
                       const dataio::RunOutput& metadata, dataio::OutputFormat format,
                       const std::string& out_dir, const std::string& stem, double band_factor) {
  const auto& edges = coarse_edges();
  dataio::RunOutput out = metadata;
  out.index_name = "year";
  out.columns = {"bin_low",        "bin_high",     "bin_mid",    "observed",
                 "predicted_mean", "predicted_sd", "ensemble_sd", "band_halfwidth"};
  for (const auto& prediction : predictions) {
    for (int l = 0; l < prediction.predicted_mean.size(); ++l) {
      out.times.push_back(prediction.year);
      out.rows.push_back({edges[l], edges[l + 1], 0.5 * (edges[l] + edges[l + 1]),
                          prediction.observed[l], prediction.predicted_mean[l],
                          prediction.predicted_sd[l], prediction.ensemble_sd[l],
                          band_factor * prediction.predicted_sd[l]});
    }
  }
  dataio::write_output(out, format, output_path(out_dir, stem, format));
}

void write_params(const std::vector<overdose::ParamTrack>& params, int start_year,
                  const dataio::RunOutput& metadata, dataio::OutputFormat format,
                  const std::string& out_dir) {
  dataio::RunOutput out = metadata;
  out.index_name = "year";
  const char* names[] = {"mu", "r0", "alpha1", "beta1", "alpha2", "beta2",
                         "gamma_mean1", "gamma_mean2"};
  for (const char* name : names) {
    out.columns.push_back(std::string(name) + "_mean");
    out.columns.push_back(std::string(name) + "_sd");
  }
  for (const auto& track : params) {
    out.times.push_back(start_year + track.time);
    std::vector<double> row;
    row.reserve(16);
    for (int p = 0; p < 8; ++p) {
      row.push_back(track.mean[p]);
      row.push_back(track.sd[p]);
    }
    out.rows.push_back(std::move(row));
  }
  dataio::write_output(out, format, output_path(out_dir, "params", format));
}

struct FitRun {
  overdose::FitOptions options;
  overdose::FitResult result;
  int last_year = 0;
  dataio::RunOutput metadata;  // seed/config/provenance prototype
};

FitRun execute_fit(const CommonOptions& options, const std::string& command,
                   KeyValueConfig& config) {
  FitRun run;
  run.options = fit_options_from(config, options);

  const auto batches = load_observations(options.data_dir);
  if (batches.empty()) throw ParseError("observation data is empty");
  const auto annual = to_annual_deaths(batches);
  run.last_year = annual.back().year;

  report_population_fit(options.data_dir, run.options.model.population, run.options.start_year);

  std::cerr << command << ": assimilating " << annual.size() << " years ("
            << annual.front().year << "-" << run.last_year << "), M = "
            << run.options.filter.ensemble_size << ", dt = " << run.options.filter.delta_t
            << "\n";
  run.result = overdose::run_fit(annual, run.options);
  std::cerr << command << ": " << run.result.bin_report << "\n";
  if (run.result.clamped_negative > 0) {
    std::cerr << command << ": clamped " << run.result.clamped_negative
              << " negative emitted values to zero\n";
  }

  run.metadata.seed = run.options.filter.seed;
  run.metadata.config_text = fit_config_text(run.options, command).str();
  run.metadata.config_hash = dataio::fnv1a_hex(run.metadata.config_text);
  run.metadata.data_provenance = "observations from " + options.data_dir;
  return run;
}

}  // namespace

void cmd_fit(const CommonOptions& options) {
  KeyValueConfig config = load_config(options);
  FitRun run = execute_fit(options, "fit", config);
  config.reject_unknown();
  const dataio::OutputFormat format = parse_format(options.format);

  write_predictions(run.result.predictions, run.metadata, format, options.out_dir,
                    "predictions", 3.0);
  write_params(run.result.params, run.options.start_year, run.metadata, format, options.out_dir);
  std::cerr << "fit: wrote one-year-ahead predictions for " << run.result.predictions.size()
            << " years\n";
}

void cmd_forecast(const CommonOptions& options) {
  KeyValueConfig config = load_config(options);
  FitRun run = execute_fit(options, "forecast", config);
  const int n_years = config.get_int("forecast_years", 3);
  config.reject_unknown();
  const dataio::OutputFormat format = parse_format(options.format);

  auto forecasts = overdose::run_forecast(run.result, run.options, run.last_year, n_years);

  // Attach the last observed year as the reference curve (dashed line in
  // the usual plots).
  const overdose::YearPrediction* reference = nullptr;
  for (const auto& prediction : run.result.predictions) {
    if (prediction.year == run.last_year) reference = &prediction;
  }
  for (auto& forecast : forecasts) {
    if (reference != nullptr) forecast.observed = reference->observed;
  }

  write_predictions(forecasts, run.metadata, format, options.out_dir, "forecast", 2.0);
  write_params(run.result.params, run.options.start_year, run.metadata, format, options.out_dir);
  std::cerr << "forecast: wrote " << forecasts.size() << " forecast years (reference year "
            << run.last_year << ")\n";
}

int run_command(const std::string& command, const CommonOptions& options) {
  try {
    if (command == "simulate") {
      cmd_simulate(options);
    } else if (command == "twin") {
      cmd_twin(options);
    } else if (command == "fit") {
      cmd_fit(options);
    } else if (command == "forecast") {
      cmd_forecast(options);
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
    return exit_code::success;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return exit_code::config;
  } catch (const ParseError& err) {
    std::cerr << "parse error: " << err.what() << "\n";
    return exit_code::parse;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return exit_code::numerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_code::failure;
  }
}

}  // namespace agekf::cli
