#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "agekf/dataio.hpp"
#include "agekf/grids.hpp"
#include "agekf/overdose.hpp"

namespace agekf::cli {

/// Flat typed key = value run configuration. '#' starts a comment; unknown
/// keys are rejected when the command finishes reading its schema.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig from_file(const std::string& path);
  static KeyValueConfig from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);

  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::string get_string(const std::string& key, const std::string& fallback);
  std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback);

  /// Throws ConfigError if any key was never consumed by a getter.
  void reject_unknown() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> consumed_;
};

/// Flags shared by every subcommand.
struct CommonOptions {
  std::string config_path;
  std::string out_dir = "out";
  std::string data_dir = "data";
  std::string format = "csv";
  std::optional<std::uint64_t> seed;
  std::optional<int> ensemble_size;
};

// --------------------------------------------------------------------------
// Twin experiment driver (synthetic-truth parameter recovery).

struct TwinConfig {
  AgeGrid grid{0.0, 0.12, 1000};
  double delta_t = 0.1;
  double t_end = 10.0;
  int update_interval = 5;
  int ensemble_size = 500;
  std::uint64_t seed = 1;
  int threads = 0;
  double truth_mu = 0.08;
  double truth_lambda = 0.2;
  double q_variance = 1e-4;
  // Diagonal Q re-inflates the parameter spread independently each step;
  // the rank-1 ones matrix cannot (its single common mode is observable
  // and is stripped again at the next update), which stalls recovery when
  // dim_z >= M. Set false for the ones matrix.
  bool q_diagonal = true;
  double r_variance = 1e-4;
  double obs_perturbation_variance = 1e-4;
  double init_state_mean = 1e-5;       // n-block entries of x0
  double init_param_mean = -2.302585092994046;  // latent ln(0.1)
  double init_state_variance = 0.5;
  double init_param_variance = 1.0;
};

struct TwinResult {
  std::vector<double> times;          // one entry per posterior record
  std::vector<double> mu_mean, mu_sd;
  std::vector<double> lambda_mean, lambda_sd;
  double truth_mu = 0.0;
  double truth_lambda = 0.0;
};

TwinResult run_twin(const TwinConfig& config);

// --------------------------------------------------------------------------
// Subcommands. Each throws ConfigError / ParseError / NumericalError on
// failure; main() maps these to distinct exit codes.

void cmd_simulate(const CommonOptions& options);
void cmd_twin(const CommonOptions& options);
void cmd_fit(const CommonOptions& options);
void cmd_forecast(const CommonOptions& options);

/// Exception-to-exit-code mapping used by the binary (and tests).
int run_command(const std::string& command, const CommonOptions& options);

/// Helpers shared by fit/forecast and the acceptance suite.
std::vector<overdose::AnnualDeaths> to_annual_deaths(
    const std::vector<dataio::ObservationBatch>& batches);
std::vector<dataio::ObservationBatch> load_observations(const std::string& data_dir);

}  // namespace agekf::cli
