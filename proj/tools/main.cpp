#include <CLI11.hpp>

#include "agekf/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"agekf: age-structured mortality modeling and ensemble Kalman filtering"};
  app.require_subcommand(1);

  agekf::cli::CommonOptions options;
  std::string seed_text;
  std::string ensemble_text;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", options.config_path, "flat key = value config file");
    sub->add_option("--seed", seed_text, "override the RNG seed");
    sub->add_option("--ensemble-size", ensemble_text, "override the ensemble size M");
    sub->add_option("--out", options.out_dir, "output directory (default: out)");
    sub->add_option("--data", options.data_dir, "input data directory (default: data)");
    sub->add_option("--format", options.format, "output format: csv or json");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "closed-form model profiles and peak ages");
  CLI::App* twin = app.add_subcommand("twin", "synthetic-truth parameter recovery experiment");
  CLI::App* fit = app.add_subcommand("fit", "assimilate annual overdose death counts");
  CLI::App* forecast = app.add_subcommand("forecast", "fit, then forecast future years");
  for (CLI::App* sub : {simulate, twin, fit, forecast}) add_common(sub);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!seed_text.empty()) options.seed = std::stoull(seed_text);
    if (!ensemble_text.empty()) options.ensemble_size = std::stoi(ensemble_text);
  } catch (const std::exception&) {
    std::cerr << "config error: --seed and --ensemble-size must be integers\n";
    return agekf::exit_code::config;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  return agekf::cli::run_command(command, options);
}
