#pragma once

// Independent reference computations used to cross-check the library:
// a covariance-form Kalman filter on the extended state (linear models only),
// exhaustive enumeration of input sequences, and finite-difference Hessians
// of the transition/measurement log-density.

#include <cstdint>
#include <vector>

#include "bidesign/designer.hpp"
#include "bidesign/pcrlb.hpp"
#include "bidesign/ssm.hpp"

namespace bidesign {

struct KalmanState {
  Vector mean;  ///< (n + q)
  Matrix cov;   ///< (n + q) x (n + q)
};

/// Extended-state filter x' = A x + B theta + c(u) + v, y = C x + D theta + d(u) + w
/// for a model whose maps are affine in (x, theta). Returns P_{t|t} for t = 1..N.
/// The mean is propagated too when `measurements` (m x N, column t = y_{t+1})
/// is given; otherwise means stay at their predicted values. OracleMisuse when
/// the Jacobians vary between probe points.
std::vector<KalmanState> kalman_extended(const GaussianSsm& model, const Matrix& inputs,
                                         const Matrix* measurements = nullptr);

/// Exact expectation over input sequences of the bound sum:
///   sum_U P(U) * (1 / groups) sum_{g < groups} sum_t Phi(L^th_t(U; noise group g)).
/// Group g is the noise used for input path g of evaluate_objective, so for
/// groups -> infinity this is the limit of the Monte-Carlo objective.
struct EnumerationResult {
  double value = 0.0;
  double std_error = 0.0;  ///< across noise groups
  std::size_t sequences = 0;
  std::size_t supported = 0;  ///< sequences with nonzero probability
};
EnumerationResult enumerate_objective(const DesignConfig& config, const std::vector<double>& phi,
                                      std::size_t groups, std::size_t capacity = 4096);

/// Averages of central-difference Hessians of
///   -log p = 1/2 |x' - f(x, th, u)|^2_{Q^-1} + 1/2 |y' - g(x', th, u)|^2_{R^-1}
/// in the variables (x, th, x'), over the columns of the sample matrices.
struct FdHBlocks {
  HBlocks mean;
  HBlocks std_error;
  double richardson_gap = 0.0;  ///< max |H(step) - H(2 step)| over entries and samples
};
FdHBlocks fd_h_blocks(const GaussianSsm& model, const Matrix& x_t, const Matrix& theta,
                      const Matrix& x_next, const Matrix& y_next, VectorCRef u_drift,
                      VectorCRef u_obs, double step = 1e-4);

}  // namespace bidesign
