#pragma once

// Monte-Carlo design objective and its optimization over policy parameters.
//
//   psi(phi) = (1 / M_u) sum_i sum_{t=1..N} Phi(L^th_t(U^i)),   U^i ~ policy(phi)
//
// Input path i and the M bound paths that go with it draw every random number
// from group i of the master seed, so for a fixed seed the objective is a
// deterministic function of phi (common random numbers across evaluations).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bidesign/input_policy.hpp"
#include "bidesign/pcrlb.hpp"
#include "bidesign/ssm.hpp"

namespace bidesign {

struct OptimizerSettings {
  int max_iterations = 200;  ///< per restart
  int restarts = 3;          ///< starts taken in order from 0.5, 0.25, 0.75 (every coordinate)
  double tolerance = 1e-3;   ///< relative improvement of the best value
  int patience = 5;          ///< iterations the improvement must stay below tolerance
  double initial_step = 1.0; ///< simplex edge in logit space
};

struct DesignConfig {
  GaussianSsm model = make_benchmark_model();
  InputSpace space = build_input_space(-0.8, 0.8, 2, 1, 0);
  PolicyTemplate tmpl;
  std::size_t N = 50;
  std::size_t M = 500;
  std::size_t M_u = 500;
  PhiKind phi = PhiKind::kTrace;
  std::uint64_t seed = 1;
  OptimizerSettings optimizer;
  int threads = 1;
};

struct ObjectiveEstimate {
  double value = 0.0;
  /// Standard error over input paths (trace only; NaN for log-det).
  double std_error = 0.0;
  /// Mean L^th_t over input paths, t = 1..N.
  std::vector<Matrix> mean_bound;
  /// sum_t Phi(L^th_t(U^i)) per input path.
  std::vector<double> path_totals;
};

/// Objective for an explicit policy.
ObjectiveEstimate evaluate_policy(const DesignConfig& config, const MarkovInputPolicy& policy);
/// Objective at template parameters phi.
ObjectiveEstimate evaluate_objective(const DesignConfig& config, const std::vector<double>& phi);

/// Bound sum of one input sequence with the noise of group `group`.
double bound_sum_for_inputs(const DesignConfig& config, const Matrix& inputs, std::uint64_t group);

struct HistoryEntry {
  int restart = 0;
  int evaluation = 0;
  std::vector<double> phi;
  double objective = 0.0;
  double best = 0.0;  ///< best objective seen so far, over all restarts
};

struct DesignResult {
  std::string case_name;
  std::vector<double> phi_star;
  MarkovInputPolicy policy;
  ObjectiveEstimate objective;  ///< re-evaluated at phi_star
  std::vector<HistoryEntry> history;
  bool converged = true;
  int evaluations = 0;
  double wall_seconds = 0.0;
};

/// Nelder-Mead on logit(phi) with restarts. Deterministic given the config.
DesignResult optimize(const DesignConfig& config);

/// Minimizes `f` over R^d with Nelder-Mead. Returns the best point; `converged`
/// reports whether the stopping rule fired before the iteration cap.
struct SimplexResult {
  std::vector<double> x;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};
SimplexResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                          const std::vector<double>& start, const OptimizerSettings& settings);

struct GridPoint {
  std::vector<double> phi;
  double value = 0.0;
};

/// Objective on the tensor grid {0, 1/(points-1), ..., 1}^d (d <= 2).
std::vector<GridPoint> grid_search(const DesignConfig& config, int points = 11);

struct CaseResult {
  std::string case_name;
  DesignResult result;
};

/// Optimizes each template with the shared config and orders the results by
/// increasing objective (ties keep input order).
std::vector<CaseResult> rank_cases(const DesignConfig& config,
                                   const std::vector<PolicyTemplate>& templates);

}  // namespace bidesign
