#pragma once

// Additive-Gaussian nonlinear state-space models
//
//   x_{t+1} = f(x_t, theta, u) + v_t,   v_t ~ N(0, Q)
//   y_{t+1} = g(x_{t+1}, theta, u) + w_t, w_t ~ N(0, R)
//
// with a static parameter vector theta and a joint Gaussian prior on
// z_0 = (x_0, theta).
//
// Input indexing: an input sequence is a p x N matrix whose column t drives
// the transition x_t -> x_{t+1} and the measurement y_{t+1} taken at x_{t+1}.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bidesign/random.hpp"

namespace bidesign {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorCRef = Eigen::Ref<const Eigen::VectorXd>;
using VectorRef = Eigen::Ref<Eigen::VectorXd>;
using MatrixRef = Eigen::Ref<Eigen::MatrixXd>;

struct ModelDims {
  int n = 0;  ///< state
  int q = 0;  ///< parameters
  int p = 0;  ///< inputs
  int m = 0;  ///< measurements

  int extended() const { return n + q; }
};

/// The maps of a model. Implementations must be pure and thread-safe; every
/// output argument arrives pre-sized to the declared dimensions.
class ModelMaps {
 public:
  virtual ~ModelMaps() = default;

  virtual void drift(VectorCRef x, VectorCRef theta, VectorCRef u, VectorRef out) const = 0;
  virtual void observation(VectorCRef x, VectorCRef theta, VectorCRef u, VectorRef out) const = 0;
  /// d f / d x (n x n) and d f / d theta (n x q).
  virtual void drift_jacobian(VectorCRef x, VectorCRef theta, VectorCRef u, MatrixRef dx,
                              MatrixRef dtheta) const = 0;
  /// d g / d x (m x n) and d g / d theta (m x q).
  virtual void observation_jacobian(VectorCRef x, VectorCRef theta, VectorCRef u, MatrixRef dx,
                                    MatrixRef dtheta) const = 0;

  // Batched forms over the columns of `x` and `theta`. The defaults loop over
  // the per-sample maps; models on the hot path override them.

  /// Column j of `out` (n x M) receives f(x_j, theta_j, u).
  virtual void drift_batch(const Matrix& x, const Matrix& theta, VectorCRef u, Matrix& out) const;
  /// Row block j of `jac` ((n M) x (n + q)) receives [df/dx  df/dtheta] at sample j.
  virtual void drift_jacobian_batch(const Matrix& x, const Matrix& theta, VectorCRef u,
                                    Matrix& jac) const;
  /// Row block j of `jac` ((m M) x (n + q)) receives [dg/dx  dg/dtheta] at sample j.
  virtual void observation_jacobian_batch(const Matrix& x, const Matrix& theta, VectorCRef u,
                                          Matrix& jac) const;
};

/// An additive-Gaussian state-space model with a Gaussian prior on (x_0, theta).
///
/// Covariances are checked for positive definiteness at construction, and the
/// factors used by the bound recursion (inverses, Cholesky factors) are cached.
class GaussianSsm {
 public:
  GaussianSsm(std::string name, ModelDims dims, std::shared_ptr<const ModelMaps> maps, Matrix Q,
              Matrix R, Vector prior_mean, Matrix prior_cov);

  const std::string& name() const { return name_; }
  const ModelDims& dims() const { return dims_; }
  int n() const { return dims_.n; }
  int q() const { return dims_.q; }
  int p() const { return dims_.p; }
  int m() const { return dims_.m; }
  const ModelMaps& maps() const { return *maps_; }
  std::shared_ptr<const ModelMaps> shared_maps() const { return maps_; }

  const Matrix& Q() const { return Q_; }
  const Matrix& R() const { return R_; }
  const Vector& prior_mean() const { return prior_mean_; }
  const Matrix& prior_cov() const { return prior_cov_; }

  const Matrix& Q_inv() const { return Q_inv_; }
  const Matrix& R_inv() const { return R_inv_; }
  /// Lower Cholesky factors, used to colour standard normals.
  const Matrix& Q_chol() const { return Q_chol_; }
  const Matrix& R_chol() const { return R_chol_; }
  const Matrix& prior_chol() const { return prior_chol_; }
  /// W with W^T W = Q^{-1} (resp. R^{-1}).
  const Matrix& Q_info_sqrt() const { return Q_info_sqrt_; }
  const Matrix& R_info_sqrt() const { return R_info_sqrt_; }

  // Allocating convenience wrappers.
  Vector drift(const Vector& x, const Vector& theta, const Vector& u) const;
  Vector observation(const Vector& x, const Vector& theta, const Vector& u) const;
  Matrix jac_drift_x(const Vector& x, const Vector& theta, const Vector& u) const;
  Matrix jac_drift_theta(const Vector& x, const Vector& theta, const Vector& u) const;
  Matrix jac_obs_x(const Vector& x, const Vector& theta, const Vector& u) const;
  Matrix jac_obs_theta(const Vector& x, const Vector& theta, const Vector& u) const;

  GaussianSsm with_noise(Matrix Q, Matrix R) const;
  GaussianSsm with_prior(Vector mean, Matrix cov) const;

 private:
  std::string name_;
  ModelDims dims_;
  std::shared_ptr<const ModelMaps> maps_;
  Matrix Q_, R_;
  Vector prior_mean_;
  Matrix prior_cov_;
  Matrix Q_inv_, R_inv_, Q_chol_, R_chol_, prior_chol_, Q_info_sqrt_, R_info_sqrt_;
};

/// The univariate benchmark
///   x_{t+1} = a x_t + x_t / (b + x_t^2) + u_t + v_t,  y_t = c x_t + d x_t^2 + w_t
/// with theta = [a b c d], Q = R = 0.01 and z_0 ~ N([1 .7 .6 .5 .4], 0.01 I).
GaussianSsm make_benchmark_model();

/// Linear oracle model x_{t+1} = x_t + theta + u_t + v_t, y_t = x_t + w_t,
/// Q = R = 0.01, z_0 ~ N(0, I).
GaussianSsm make_bias_model();

using ModelFactory = std::function<GaussianSsm()>;

/// Registers a user model under `name`; replaces an existing entry.
void register_model(const std::string& name, ModelFactory factory);
/// Builds a registered model ("benchmark", "bias" and any user models).
GaussianSsm make_model(const std::string& name);
std::vector<std::string> registered_models();

struct ExtendedState {
  Vector x;
  Vector theta;

  Vector concat() const;
};

/// M simulated paths sharing one input sequence. Storage is time-major:
/// `states[t]` is n x M holding x_t for every path, `measurements[t]` holds
/// y_{t+1}.
struct SampleEnsemble {
  Matrix theta;  ///< q x M, constant along each path
  std::vector<Matrix> states;
  std::vector<Matrix> measurements;
  Matrix inputs;  ///< p x N

  std::size_t paths() const { return static_cast<std::size_t>(theta.cols()); }
  std::size_t horizon() const { return measurements.size(); }
};

/// M draws from the joint prior. Draw j uses the normals addressed by
/// (Stream::kPrior, j), so it does not depend on M.
std::vector<ExtendedState> sample_prior(const GaussianSsm& model, std::size_t count,
                                        const CounterRng& rng);

/// Same draws as sample_prior, written as column matrices (n x M, q x M).
void sample_prior_into(const GaussianSsm& model, std::size_t count, const CounterRng& rng,
                       Matrix& states, Matrix& theta);

/// Standard normals for the state noise of paths [first_path, first_path + count)
/// over steps [0, horizon). Row block t (n rows) holds step t; column j holds
/// path first_path + j. Normal i of (path, t) is number t n + i under the key
/// (Stream::kProcess, path), so it depends on neither the horizon, the other
/// paths nor the inputs.
Matrix state_noise_table(const CounterRng& rng, int n, std::size_t horizon,
                         std::size_t first_path, std::size_t count);
/// As state_noise_table, for measurement noise (Stream::kMeasurement, m rows per step).
Matrix measurement_noise_table(const CounterRng& rng, int m, std::size_t horizon,
                               std::size_t first_path, std::size_t count);

using MatrixCRef = Eigen::Ref<const Eigen::MatrixXd>;

/// x_next = f(x, theta, u) + chol(Q) noise, column by column. `noise` holds
/// standard normals (n x M). `time` and `first_path` only label a
/// SimulationDivergence raised for non-finite output.
void propagate_states(const GaussianSsm& model, const Matrix& x, const Matrix& theta,
                      VectorCRef u, MatrixCRef noise, Matrix& x_next, std::size_t time = 0,
                      std::size_t first_path = 0);

/// y = g(x, theta, u) + chol(R) noise, column by column.
void measure_states(const GaussianSsm& model, const Matrix& x, const Matrix& theta, VectorCRef u,
                    MatrixCRef noise, Matrix& y, std::size_t time = 0, std::size_t first_path = 0);

/// Simulates all paths through the whole input sequence (columns of `inputs`).
SampleEnsemble simulate_paths(const GaussianSsm& model, const Matrix& inputs,
                              const std::vector<ExtendedState>& initial, const CounterRng& rng,
                              int threads = 1);

}  // namespace bidesign
