#include <doctest.h>

#include <cmath>

#include "bidesign/errors.hpp"
#include "bidesign/oracles.hpp"
#include "bidesign/smc.hpp"
#include "test_util.hpp"

using namespace bidesign;

namespace {

struct Truth {
  Matrix inputs;
  Matrix y;
};

// Simulated data at `theta`, x_0 at the prior state mean.
Truth simulate(const GaussianSsm& model, const Vector& theta, const Matrix& inputs, std::uint64_t seed) {
  const CounterRng rng(seed);
  Truth out{inputs, Matrix(model.m(), inputs.cols())};
  Vector x = model.prior_mean().head(model.n());
  Vector z(model.n() + model.m());
  for (Eigen::Index t = 0; t < inputs.cols(); ++t) {
    rng.normals(Stream::kGeneric, static_cast<std::uint64_t>(t), 0, z, model.n() + model.m());
    x = model.drift(x, theta, inputs.col(t)) + model.Q_chol() * z.head(model.n());
    out.y.col(t) = model.observation(x, theta, inputs.col(t)) + model.R_chol() * z.tail(model.m());
  }
  return out;
}

Matrix prbs(std::size_t N, std::uint64_t seed) {
  const InputSpace s = build_input_space(-0.8, 0.8, 2, 1, 0);
  return sample_sequence(policy_from_template({CaseId::kCase4}, s, {}), N, CounterRng(seed));
}

}  // namespace

TEST_CASE("smc settings are validated") {
  CHECK_NOTHROW(validate(SmcConfig{}));
  CHECK_THROWS_WITH_AS(validate(SmcConfig{50, 0.5, 0.98}), doctest::Contains("smc.particles"), ParameterError);
  CHECK_THROWS_WITH_AS(validate(SmcConfig{1000, 0.0, 0.98}), doctest::Contains("smc.threshold"), ParameterError);
  CHECK_THROWS_WITH_AS(validate(SmcConfig{1000, 0.5, 0.85}), doctest::Contains("smc.shrinkage"), ParameterError);
}

TEST_CASE("the first column reproduces the prior") {
  const GaussianSsm model = make_benchmark_model();
  const Truth d = simulate(model, (Vector(4) << 0.8, 0.7, 0.6, 0.5).finished(), prbs(5, 1), 2);
  const SmcConfig cfg{4000, 0.5, 0.98};
  const auto est = smc_joint_estimate(model, d.inputs, d.y, cfg, CounterRng(3));
  CHECK(est.theta_mean.cols() == 6);
  const double sd = 0.1 / std::sqrt(4000.0);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(est.theta_mean(i, 0) - model.prior_mean()(i + 1)) < 4 * sd);
  CHECK(std::abs(est.x_mean(0, 0) - model.prior_mean()(0)) < 4 * sd);
  CHECK(est.theta_cov[0].diagonal().maxCoeff() == doctest::Approx(0.01).epsilon(0.1));
}

TEST_CASE("with a known parameter the state mean follows the Kalman filter") {
  Matrix cov = Matrix::Identity(2, 2);
  cov(1, 1) = 1e-12;
  const GaussianSsm model = make_bias_model().with_noise(Matrix::Constant(1, 1, 0.1), Matrix::Constant(1, 1, 0.1)).with_prior(Vector::Zero(2), cov);
  const Truth d = simulate(model, Vector::Zero(1), prbs(20, 4), 5);
  const auto kf = kalman_extended(model, d.inputs, &d.y);
  const auto est = smc_joint_estimate(model, d.inputs, d.y, SmcConfig{20000, 0.5, 0.98}, CounterRng(6));
  for (std::size_t t = 0; t < kf.size(); ++t) {
    const double sd = std::sqrt(kf[t].cov(0, 0));
    CHECK(std::abs(est.x_mean(0, static_cast<Eigen::Index>(t) + 1) - kf[t].mean(0)) < 0.1 * sd);
  }
}

TEST_CASE("parameter posterior of the bias model approaches the Kalman filter") {
  const GaussianSsm model = make_bias_model();
  const Truth d = simulate(model, Vector::Constant(1, 0.3), prbs(40, 7), 8);
  const auto kf = kalman_extended(model, d.inputs, &d.y);
  const auto est = smc_joint_estimate(model, d.inputs, d.y, SmcConfig{20000, 0.5, 0.98}, CounterRng(9));
  for (std::size_t t : {0u, 9u, 39u}) {
    const auto c = static_cast<Eigen::Index>(t) + 1;
    const double var = kf[t].cov(1, 1);
    CHECK(std::abs(est.theta_mean(0, c) - kf[t].mean(1)) < 0.25 * std::sqrt(var));
    CHECK(est.theta_cov[t + 1](0, 0) == doctest::Approx(var).epsilon(0.3));
  }
  CHECK(est.theta_cov[40](0, 0) < est.theta_cov[1](0, 0));
}

TEST_CASE("benchmark parameter estimates move toward the truth") {
  const GaussianSsm model = make_benchmark_model();
  const Vector theta = (Vector(4) << 0.8, 0.7, 0.6, 0.5).finished();
  const InputSpace s = build_input_space(-0.8, 0.8, 2, 1, 0);
  const auto policy = policy_from_template({CaseId::kCase3}, s, {0.34, 0.61, 0.72});
  const Vector prior_theta = model.prior_mean().tail(4);
  int better = 0;
  const int runs = 100;
  for (int r = 0; r < runs; ++r) {
    const Matrix u = sample_sequence(policy, 100, CounterRng(20, r));
    const Truth d = simulate(model, theta, u, 1000 + r);
    const auto est = smc_joint_estimate(model, u, d.y, SmcConfig{}, CounterRng(30, r));
    if ((est.theta_mean.col(100) - theta).norm() < (prior_theta - theta).norm()) ++better;
  }
  CHECK(better >= 90);
}

TEST_CASE("the filter is deterministic and reports resampling") {
  const GaussianSsm model = make_benchmark_model();
  const Truth d = simulate(model, (Vector(4) << 0.8, 0.7, 0.6, 0.5).finished(), prbs(30, 1), 2);
  const auto a = smc_joint_estimate(model, d.inputs, d.y, SmcConfig{300, 0.5, 0.98}, CounterRng(4));
  const auto b = smc_joint_estimate(model, d.inputs, d.y, SmcConfig{300, 0.5, 0.98}, CounterRng(4));
  CHECK(a.theta_mean == b.theta_mean);
  CHECK(a.resamples > 0);
}

TEST_CASE("impossible data collapses the weights") {
  const GaussianSsm model = make_benchmark_model();
  const Matrix u = prbs(5, 1);
  Matrix y = Matrix::Constant(1, 5, 1e6);
  CHECK_THROWS_AS(smc_joint_estimate(model, u, y, SmcConfig{200, 0.5, 0.98}, CounterRng(1)), DegeneracyError);
}

TEST_CASE("mse experiment") {
  const GaussianSsm model = make_benchmark_model();
  const InputSpace s = build_input_space(-0.8, 0.8, 2, 1, 0);
  const auto policy = policy_from_template({CaseId::kCase4}, s, {});
  ValidationSettings v;
  v.runs = 20;
  v.N = 15;
  v.bound_samples = 100;
  v.seed = 3;
  const SmcConfig smc{300, 0.5, 0.98};
  const Vector theta = (Vector(4) << 0.8, 0.7, 0.6, 0.5).finished();
  const auto rep = mse_experiment(model, theta, policy, v, smc);
  CHECK(rep.runs + rep.degenerate == 20);
  CHECK(rep.trace_mse.size() == 15);
  double s1 = 0, s2 = 0;
  for (std::size_t t = 0; t < 15; ++t) {
    s1 += rep.trace_mse[t];
    s2 += rep.trace_bound[t];
  }
  CHECK(rep.sum_trace_mse == doctest::Approx(s1));
  CHECK(rep.sum_trace_bound == doctest::Approx(s2));
  // The bound part is the design objective of the same paths.
  DesignConfig dc;
  dc.N = 15;
  dc.M = 100;
  dc.M_u = 20;
  dc.seed = 3;
  if (rep.degenerate == 0) {
    CHECK(rep.sum_trace_bound == doctest::Approx(evaluate_policy(dc, policy).value).epsilon(1e-12));
  }
  v.threads = 3;
  const auto again = mse_experiment(model, theta, policy, v, smc);
  CHECK(again.trace_mse == rep.trace_mse);
  CHECK_THROWS_AS(mse_experiment(model, Vector::Zero(2), policy, v, smc), ParameterError);
}
