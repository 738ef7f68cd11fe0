#pragma once

// Joint state/parameter particle filter and the MSE validation experiment.
//
// Parameter particles follow Liu-West kernel shrinkage: before each
// propagation, theta_j <- a theta_j + (1 - a) theta_bar + sqrt(1 - a^2) V^{1/2} e_j
// with theta_bar, V the weighted mean and covariance, which keeps the first two
// moments of the parameter cloud while rejuvenating it.

#include <cstdint>
#include <vector>

#include "bidesign/input_policy.hpp"
#include "bidesign/ssm.hpp"

namespace bidesign {

struct SmcConfig {
  std::size_t particles = 1000;
  double threshold = 0.5;   ///< resample when ESS < threshold * particles
  double shrinkage = 0.98;  ///< a in (0.9, 1)
};

void validate(const SmcConfig& config);

/// Posterior means (and theta covariance) for t = 0..N; column 0 is the prior.
struct SmcEstimate {
  Matrix theta_mean;  ///< q x (N + 1)
  Matrix x_mean;      ///< n x (N + 1)
  std::vector<Matrix> theta_cov;
  std::size_t resamples = 0;
};

/// `inputs` is p x N; column t of `measurements` (m x N) is y_{t+1}, taken
/// after input t. Random numbers come from the Smc* streams of `rng`.
/// Raises DegeneracyError when every particle weight underflows 1e-300.
SmcEstimate smc_joint_estimate(const GaussianSsm& model, const Matrix& inputs,
                               const Matrix& measurements, const SmcConfig& config,
                               const CounterRng& rng);

struct ValidationReport {
  std::vector<double> trace_mse;    ///< t = 1..N
  std::vector<double> trace_bound;  ///< t = 1..N, mean over runs
  double sum_trace_mse = 0.0;
  double sum_trace_bound = 0.0;
  std::size_t violations = 0;  ///< time points with trace_mse < trace_bound
  std::size_t runs = 0;        ///< runs that entered the averages
  std::size_t degenerate = 0;  ///< runs dropped after a weight collapse
};

struct ValidationSettings {
  std::size_t runs = 100;
  std::size_t N = 50;
  std::size_t bound_samples = 500;  ///< M for the bound of each run's input path
  std::uint64_t seed = 1;
  int threads = 1;
};

/// Run r draws an input path from the policy and the bound noise from group r
/// (exactly as input path r of the design objective), simulates the truth at
/// theta_true with x_0 from the state marginal of the prior, and filters it.
/// The squared error is taken against theta_true.
ValidationReport mse_experiment(const GaussianSsm& model, const Vector& theta_true,
                                const MarkovInputPolicy& policy, const ValidationSettings& settings,
                                const SmcConfig& smc);

}  // namespace bidesign
