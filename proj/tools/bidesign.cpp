// Command line front end: bidesign {design|bound|validate|oracle} --config FILE [options]

#include <iostream>
#include <utility>

#include <CLI11.hpp>

#include "bidesign/app.hpp"
#include "bidesign/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Bayesian input design for identification of nonlinear state-space models"};
  app.require_subcommand(1, 1);

  std::string config_path;
  bidesign::ConfigOverrides overrides;
  std::uint64_t seed = 0;
  std::string output_dir, preset;
  int threads = 1;

  const std::pair<const char*, const char*> commands[] = {
      {"design", "optimize the input policy of each case"},
      {"bound", "bound trajectories for fixed policies"},
      {"validate", "particle-filter MSE against the bound"},
      {"oracle", "cross-checks against reference computations"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "configuration file")->required();
    sub->add_option("--seed", seed, "master seed (overrides the file)");
    sub->add_option("--output-dir", output_dir, "directory for CSV output");
    sub->add_option("--preset", preset, "scale preset")->check(CLI::IsMember({"paper", "desk"}));
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) overrides.seed = seed;
  if (sub->count("--output-dir")) overrides.output_dir = output_dir;
  if (sub->count("--preset")) overrides.preset = preset;
  if (sub->count("--threads")) overrides.threads = threads;

  bidesign::RunConfig config;
  try {
    config = bidesign::parse_config(config_path, overrides);
  } catch (const bidesign::ConfigError& e) {
    std::cerr << "config error";
    if (!e.field().empty()) std::cerr << " [" << e.field() << "]";
    std::cerr << ": " << e.what() << '\n';
    return 1;
  }
  return bidesign::run_command(sub->get_name(), config, std::cerr);
}
