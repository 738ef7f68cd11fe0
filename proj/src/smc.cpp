#include "bidesign/smc.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "bidesign/errors.hpp"
#include "bidesign/parallel.hpp"
#include "bidesign/pcrlb.hpp"

namespace bidesign {

namespace {

constexpr double kLogFloor = -690.7755278982137;  // log(1e-300)

struct Moments {
  Vector theta_mean;
  Matrix theta_cov;
  Vector x_mean;
};

Moments weighted_moments(const Matrix& X, const Matrix& Th, const Vector& w) {
  Moments m;
  m.theta_mean = Th * w;
  m.x_mean = X * w;
  const Matrix centred = Th.colwise() - m.theta_mean;
  m.theta_cov = centred * w.asDiagonal() * centred.transpose();
  m.theta_cov = 0.5 * (m.theta_cov + m.theta_cov.transpose()).eval();
  return m;
}

// Symmetric square root factor S with S S^T = V, tolerant of a singular V.
Matrix psd_factor(const Matrix& V) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(V);
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

}  // namespace

void validate(const SmcConfig& config) {
  if (config.particles < 100) throw ParameterError("smc.particles must be at least 100");
  if (!(config.threshold > 0.0 && config.threshold <= 1.0)) {
    throw ParameterError("smc.threshold must lie in (0, 1]");
  }
  if (!(config.shrinkage > 0.9 && config.shrinkage < 1.0)) {
    throw ParameterError("smc.shrinkage must lie in (0.9, 1)");
  }
}

SmcEstimate smc_joint_estimate(const GaussianSsm& model, const Matrix& inputs,
                               const Matrix& measurements, const SmcConfig& config,
                               const CounterRng& rng) {
  validate(config);
  const int n = model.n(), q = model.q(), m = model.m();
  const Eigen::Index N = inputs.cols();
  if (inputs.rows() != model.p()) throw Error("input dimension does not match the model");
  if (measurements.rows() != m || measurements.cols() != N) {
    throw Error("measurements must be m x N with N the number of inputs");
  }
  const auto P = static_cast<Eigen::Index>(config.particles);
  const int s = n + q;

  Matrix X(n, P), Th(q, P);
  {
    Vector z(s);
    for (Eigen::Index j = 0; j < P; ++j) {
      rng.normals(Stream::kSmcInit, static_cast<std::uint64_t>(j), 0, z, s);
      const Vector draw = model.prior_mean() + model.prior_chol() * z;
      X.col(j) = draw.head(n);
      Th.col(j) = draw.tail(q);
    }
  }
  Vector w = Vector::Constant(P, 1.0 / static_cast<double>(P));
  Vector logw(P);

  SmcEstimate out;
  out.theta_mean.resize(q, N + 1);
  out.x_mean.resize(n, N + 1);
  out.theta_cov.reserve(static_cast<std::size_t>(N + 1));
  Moments mom = weighted_moments(X, Th, w);
  out.theta_mean.col(0) = mom.theta_mean;
  out.x_mean.col(0) = mom.x_mean;
  out.theta_cov.push_back(mom.theta_cov);

  const double a = config.shrinkage;
  const double h = std::sqrt(1.0 - a * a);
  const double log_norm = -0.5 * m * std::log(2.0 * M_PI) -
                          model.R_chol().diagonal().array().log().sum();
  Matrix X_next(n, P);
  Vector e_theta(q), e_state(n), g(m), resid(m);

  for (Eigen::Index t = 0; t < N; ++t) {
    const auto tt = static_cast<std::uint64_t>(t);
    // Kernel shrinkage of the parameter cloud.
    const Matrix S = psd_factor(mom.theta_cov);
    for (Eigen::Index j = 0; j < P; ++j) {
      rng.normals(Stream::kSmcKernel, static_cast<std::uint64_t>(j), tt, e_theta, q);
      Th.col(j) = a * Th.col(j) + (1.0 - a) * mom.theta_mean + h * (S * e_theta);
    }
    // State propagation.
    const auto u = inputs.col(t);
    model.maps().drift_batch(X, Th, u, X_next);
    for (Eigen::Index j = 0; j < P; ++j) {
      rng.normals(Stream::kSmcProcess, static_cast<std::uint64_t>(j), tt, e_state, n);
      X_next.col(j) += model.Q_chol() * e_state;
    }
    X.swap(X_next);
    // Weighting by the measurement likelihood.
    const auto y = measurements.col(t);
    double max_log = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < P; ++j) {
      model.maps().observation(X.col(j), Th.col(j), u, g);
      resid = model.R_chol().triangularView<Eigen::Lower>().solve(y - g);
      logw(j) = std::log(w(j)) + log_norm - 0.5 * resid.squaredNorm();
      if (!std::isfinite(logw(j))) logw(j) = -std::numeric_limits<double>::infinity();
      max_log = std::max(max_log, logw(j));
    }
    if (!(max_log >= kLogFloor)) {
      throw DegeneracyError(static_cast<std::size_t>(t + 1),
                            fmt::format("all particle weights fell below 1e-300 at t = {}", t + 1));
    }
    w = (logw.array() - max_log).exp();
    w /= w.sum();

    mom = weighted_moments(X, Th, w);
    out.theta_mean.col(t + 1) = mom.theta_mean;
    out.x_mean.col(t + 1) = mom.x_mean;
    out.theta_cov.push_back(mom.theta_cov);

    const double ess = 1.0 / w.squaredNorm();
    if (ess < config.threshold * static_cast<double>(P)) {
      // Systematic resampling.
      const double step = 1.0 / static_cast<double>(P);
      double u0 = rng.uniform(Stream::kSmcResample, tt, 0) * step;
      Matrix Xr(n, P), Thr(q, P);
      double cum = w(0);
      Eigen::Index src = 0;
      for (Eigen::Index j = 0; j < P; ++j) {
        const double target = u0 + step * static_cast<double>(j);
        while (target > cum && src < P - 1) cum += w(++src);
        Xr.col(j) = X.col(src);
        Thr.col(j) = Th.col(src);
      }
      X.swap(Xr);
      Th.swap(Thr);
      w.setConstant(step);
      ++out.resamples;
    }
  }
  return out;
}

ValidationReport mse_experiment(const GaussianSsm& model, const Vector& theta_true,
                                const MarkovInputPolicy& policy, const ValidationSettings& settings,
                                const SmcConfig& smc) {
  validate(smc);
  if (settings.runs < 2) throw ParameterError("validation needs at least two runs");
  if (theta_true.size() != model.q()) {
    throw ParameterError("theta_true must have one entry per model parameter");
  }
  const int n = model.n(), m = model.m();
  const std::size_t N = settings.N;
  const std::size_t runs = settings.runs;

  std::vector<std::vector<double>> sq_err(runs), bound(runs);
  std::vector<char> degenerate(runs, 0);
  const Eigen::LLT<Matrix> state_prior(model.prior_cov().topLeftCorner(n, n));
  const Matrix x0_chol = state_prior.matrixL();

  parallel_for(runs, settings.threads, [&](std::size_t r) {
    const CounterRng rng(settings.seed, r);
    const Matrix inputs = sample_sequence(policy, N, rng);

    // Truth at theta_true.
    Vector z(n + m);
    rng.normals(Stream::kTruthPrior, 0, 0, z, n);
    Vector x = model.prior_mean().head(n) + x0_chol * z.head(n);
    Matrix y(m, static_cast<Eigen::Index>(N));
    Vector fx(n), gx(m);
    for (std::size_t t = 0; t < N; ++t) {
      const auto u = inputs.col(static_cast<Eigen::Index>(t));
      rng.normals(Stream::kTruthNoise, t, 0, z, n + m);
      model.maps().drift(x, theta_true, u, fx);
      x = fx + model.Q_chol() * z.head(n);
      model.maps().observation(x, theta_true, u, gx);
      y.col(static_cast<Eigen::Index>(t)) = gx + model.R_chol() * z.tail(m);
      if (!x.allFinite() || !y.col(static_cast<Eigen::Index>(t)).allFinite()) {
        throw SimulationDivergence(r, t + 1, fmt::format("validation run {}: truth diverged", r));
      }
    }

    const BoundTrajectory traj =
        bound_trajectory(model, inputs, settings.bound_samples, PhiKind::kTrace, rng);
    bound[r].resize(N);
    for (std::size_t t = 0; t < N; ++t) bound[r][t] = traj.Ltheta[t].trace();

    try {
      const SmcEstimate est = smc_joint_estimate(model, inputs, y, smc, rng);
      sq_err[r].resize(N);
      for (std::size_t t = 0; t < N; ++t) {
        sq_err[r][t] = (est.theta_mean.col(static_cast<Eigen::Index>(t + 1)) - theta_true).squaredNorm();
      }
    } catch (const DegeneracyError&) {
      degenerate[r] = 1;
    }
  });

  ValidationReport rep;
  for (std::size_t r = 0; r < runs; ++r) {
    if (degenerate[r]) ++rep.degenerate;
  }
  rep.runs = runs - rep.degenerate;
  if (rep.runs < 2) {
    throw DegeneracyError(0, fmt::format("only {} of {} validation runs survived", rep.runs, runs));
  }
  rep.trace_mse.resize(N);
  rep.trace_bound.resize(N);
  std::vector<double> column_mse, column_bound;
  column_mse.reserve(runs);
  column_bound.reserve(runs);
  for (std::size_t t = 0; t < N; ++t) {
    column_mse.clear();
    column_bound.clear();
    for (std::size_t r = 0; r < runs; ++r) {
      if (degenerate[r]) continue;
      column_mse.push_back(sq_err[r][t]);
      column_bound.push_back(bound[r][t]);
    }
    rep.trace_mse[t] = pairwise_sum(column_mse) / static_cast<double>(rep.runs);
    rep.trace_bound[t] = pairwise_sum(column_bound) / static_cast<double>(rep.runs);
    rep.sum_trace_mse += rep.trace_mse[t];
    rep.sum_trace_bound += rep.trace_bound[t];
    if (rep.trace_mse[t] < rep.trace_bound[t]) ++rep.violations;
  }
  return rep;
}

}  // namespace bidesign
