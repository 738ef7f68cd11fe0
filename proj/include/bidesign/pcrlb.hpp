#pragma once

// Monte-Carlo posterior Cramer-Rao lower bound for the parameter block.
//
// The posterior information matrix J^z of z_t = (x_t, theta) is propagated
// with the block recursion
//
//   J^x_{t+1}      = H33 - H13^T [J^x + H11]^{-1} H13
//   J^{x th}_{t+1} = H23^T - H13^T [J^x + H11]^{-1} (J^{x th} + H12)
//   J^th_{t+1}     = J^th + H22 - (J^{x th} + H12)^T [J^x + H11]^{-1} (J^{x th} + H12)
//
// where, for additive Gaussian noise, the H blocks are expectations of
// Jacobian products that are estimated by averaging over simulated samples.
// The parameter bound is the inverse Schur complement
//   L^th = [J^th - (J^{x th})^T (J^x)^{-1} J^{x th}]^{-1}.

#include <iosfwd>
#include <string>
#include <vector>

#include "bidesign/ssm.hpp"

namespace bidesign {

/// Posterior information matrix, stored by blocks.
struct Pim {
  Matrix Jx;       ///< n x n
  Matrix Jxtheta;  ///< n x q
  Matrix Jtheta;   ///< q x q

  Matrix assembled() const;
  static Pim from_assembled(const Matrix& J, int n);
};

struct HBlocks {
  Matrix H11;  ///< n x n
  Matrix H12;  ///< n x q
  Matrix H13;  ///< n x n
  Matrix H22;  ///< q x q
  Matrix H23;  ///< q x n
  Matrix H33;  ///< n x n
};

/// Scalarization of the bound matrix.
enum class PhiKind { kTrace, kLogDet };

double apply_phi(PhiKind kind, const Matrix& bound);
std::string to_string(PhiKind kind);
PhiKind phi_from_string(const std::string& name);

/// L^th_t and Phi(L^th_t) for t = 1..N (index 0 holds t = 1).
struct BoundTrajectory {
  std::vector<Matrix> Ltheta;
  std::vector<double> phi;

  double total() const;
};

/// J_0 = prior_cov^{-1}, partitioned at n.
Pim init_pim(const GaussianSsm& model);

/// Sample averages of the Gaussian H-block integrands.
///
/// Column j of `x_t`, `theta` and `x_next` is one sample (x_t, theta, x_{t+1}).
/// Drift Jacobians are evaluated at (x_t, theta, u_drift), measurement
/// Jacobians at (x_{t+1}, theta, u_obs).
HBlocks estimate_h_blocks(const GaussianSsm& model, const Matrix& x_t, const Matrix& theta,
                          const Matrix& x_next, VectorCRef u_drift, VectorCRef u_obs);

/// One step of the information recursion. The result is symmetrized and
/// checked for positive definiteness (BoundDegeneracy otherwise). A failed
/// factorization of J^x + H11 is retried once with 1e-9 I added.
Pim update_pim(const Pim& J, const HBlocks& H);

/// Inverse Schur complement of J^x in the assembled information matrix.
Matrix lower_bound_theta(const Pim& J);

/// Runs the recursion along `inputs` (p x N) with `samples` Monte-Carlo paths
/// drawn from the prior. Random numbers come from `rng` (prior draws and
/// process noise), so a fixed rng gives a bound that is a deterministic
/// function of the inputs.
BoundTrajectory bound_trajectory(const GaussianSsm& model, const Matrix& inputs,
                                 std::size_t samples, PhiKind phi, const CounterRng& rng);

/// CSV: header `t,phi,L_1_1,L_1_2,...` (row-major), one row per time step.
/// `comment`, when non-empty, is written first as a '#' line.
void write_bound_csv(std::ostream& out, const std::vector<Matrix>& bounds, PhiKind phi,
                     const std::string& comment);

}  // namespace bidesign
