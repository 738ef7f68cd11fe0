#pragma once

// Run configuration and the experiment runner behind the command line tool.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bidesign/designer.hpp"
#include "bidesign/input_policy.hpp"
#include "bidesign/smc.hpp"

namespace bidesign {

struct RunConfig {
  std::string model = "benchmark";
  std::vector<CaseId> cases{CaseId::kCase4};
  std::string preset = "desk";
  std::size_t N = 50;
  std::size_t M = 500;
  std::size_t M_u = 500;
  std::size_t runs = 100;
  PhiKind phi = PhiKind::kTrace;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  int threads = 1;

  double u_min = -0.8;
  double u_max = 0.8;
  int b = 2;
  int k = 0;

  OptimizerSettings optimizer;
  SmcConfig smc;
  std::vector<double> theta_true{0.8, 0.7, 0.6, 0.5};
  std::size_t bound_M = 0;  ///< M for the bound in `validate`; 0 means M
  std::map<CaseId, std::vector<double>> params;
  std::string policy_file;  ///< optional explicit policy for `bound` and `validate`

  std::size_t fd_samples = 10000;
  std::size_t enum_groups = 1000;
  std::size_t enum_paths = 20000;
  std::size_t enum_M = 200;
};

/// Command-line values that take precedence over the file.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> preset;
  std::optional<int> threads;
};

/// Flat `key = value` text; '#' starts a comment. Values given explicitly
/// win over the preset defaults (desk: N=50, M=M_u=500, runs=100; paper:
/// N=100, M=M_u=2000, runs=500). Unknown keys and invalid values raise
/// ConfigError naming the key.
RunConfig parse_config_text(const std::string& text, const ConfigOverrides& overrides = {});
RunConfig parse_config(const std::string& path, const ConfigOverrides& overrides = {});

/// Canonical text of every setting that affects the outputs (threads and the
/// output directory excluded) and its FNV-1a hash.
std::string canonical_config(const RunConfig& config);
std::uint64_t config_hash(const RunConfig& config);

/// Design settings shared by every case of a run.
DesignConfig design_config(const RunConfig& config, CaseId id);

/// Runs `design`, `bound`, `validate` or `oracle`, writing CSV files to the
/// output directory. Returns 0 on success, 1 for configuration errors and 2
/// for numerical failures (after writing diagnostic.txt). Progress goes to `log`.
int run_command(const std::string& subcommand, const RunConfig& config, std::ostream& log);

}  // namespace bidesign
