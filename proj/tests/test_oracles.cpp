#include <doctest.h>

#include <cmath>

#include "bidesign/errors.hpp"
#include "bidesign/oracles.hpp"
#include "test_util.hpp"

using namespace bidesign;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

}  // namespace

TEST_CASE("extended Kalman covariance of the bias model") {
  const GaussianSsm model = make_bias_model();
  const auto kf = kalman_extended(model, row({0.8, -0.8, 0.8}));
  REQUIRE(kf.size() == 3);
  CHECK(kf[0].cov(1, 1) == doctest::Approx(0.50495).epsilon(1e-5));
  // Covariances do not depend on the inputs.
  const auto other = kalman_extended(model, row({-0.8, -0.8, -0.8}));
  for (std::size_t t = 0; t < 3; ++t) CHECK((kf[t].cov - other[t].cov).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(kf[2].cov(1, 1) < kf[1].cov(1, 1));
}

TEST_CASE("an uninformative sensor leaves the prediction") {
  const GaussianSsm model = make_bias_model().with_noise(Matrix::Constant(1, 1, 0.01), Matrix::Constant(1, 1, 1e12));
  const auto kf = kalman_extended(model, row({0.0}));
  Matrix pred(2, 2);
  pred << 2.01, 1.0, 1.0, 1.0;
  CHECK((kf[0].cov - pred).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("the filter mean follows the measurements") {
  const GaussianSsm model = make_bias_model();
  const Matrix y = row({0.5, 1.0});
  const auto kf = kalman_extended(model, row({0.0, 0.0}), &y);
  // Prior mean is zero; the first update moves x toward 0.5.
  CHECK(kf[0].mean(0) > 0.45);
  CHECK(kf[0].mean(0) < 0.5);
  CHECK(kf[1].mean(1) > 0.0);
}

TEST_CASE("the Kalman oracle refuses a nonlinear model") {
  CHECK_THROWS_AS(kalman_extended(make_benchmark_model(), row({0.8})), OracleMisuse);
}

TEST_CASE("enumeration of the uniform policy is the plain average") {
  DesignConfig c;
  c.tmpl = {CaseId::kCase4};
  c.N = 2;
  c.M = 50;
  const std::size_t groups = 6;
  const auto ex = enumerate_objective(c, {}, groups);
  CHECK(ex.sequences == 4);
  CHECK(ex.supported == 4);
  double v = 0.0;
  for (double a : {-0.8, 0.8}) {
    for (double b : {-0.8, 0.8}) {
      for (std::uint64_t g = 0; g < groups; ++g) v += bound_sum_for_inputs(c, row({a, b}), g);
    }
  }
  CHECK(ex.value == doctest::Approx(v / (4.0 * groups)).epsilon(1e-12));
  CHECK(ex.std_error > 0.0);
}

TEST_CASE("enumeration skips impossible sequences") {
  DesignConfig c;
  c.tmpl = {CaseId::kCase1};
  c.N = 3;
  c.M = 50;
  const auto ex = enumerate_objective(c, {1.0}, 3);
  CHECK(ex.sequences == 8);
  CHECK(ex.supported == 1);
  double v = 0.0;
  for (std::uint64_t g = 0; g < 3; ++g) v += bound_sum_for_inputs(c, row({-0.8, -0.8, -0.8}), g);
  CHECK(ex.value == doctest::Approx(v / 3.0).epsilon(1e-12));
}

TEST_CASE("enumeration argument checks") {
  DesignConfig c;
  c.N = 13;
  CHECK_THROWS_AS(enumerate_objective(c, {}, 3), CapacityError);
  c.N = 2;
  c.phi = PhiKind::kLogDet;
  CHECK_THROWS_AS(enumerate_objective(c, {}, 3), OracleMisuse);
  c.phi = PhiKind::kTrace;
  CHECK_THROWS_AS(enumerate_objective(c, {}, 1), ParameterError);
}

TEST_CASE("finite differences of a linear model are exact") {
  const GaussianSsm model = make_bias_model();
  const CounterRng rng(2);
  const int S = 10;
  Matrix x(1, S), th(1, S), xn(1, S), y(1, S);
  for (int j = 0; j < S; ++j) {
    x(0, j) = rng.uniform(Stream::kGeneric, 0, j) - 0.5;
    th(0, j) = rng.uniform(Stream::kGeneric, 1, j) - 0.5;
    xn(0, j) = rng.uniform(Stream::kGeneric, 2, j) - 0.5;
    y(0, j) = rng.uniform(Stream::kGeneric, 3, j) - 0.5;
  }
  const Vector u = Vector::Constant(1, 0.8);
  const auto fd = fd_h_blocks(model, x, th, xn, y, u, u);
  const auto close = [](const Matrix& a, double b) { return std::abs(a(0, 0) - b) < 1e-6 * (1 + std::abs(b)); };
  CHECK(close(fd.mean.H11, 100));
  CHECK(close(fd.mean.H12, 100));
  CHECK(close(fd.mean.H13, -100));
  CHECK(close(fd.mean.H22, 100));
  CHECK(close(fd.mean.H23, -100));
  CHECK(close(fd.mean.H33, 200));
  const HBlocks an = estimate_h_blocks(model, x, th, xn, u, u);
  CHECK(close(fd.mean.H33, an.H33(0, 0)));
}

TEST_CASE("finite differences without state measurement") {
  GaussianSsm model = make_benchmark_model();
  Vector th(4);
  th << 0.8, 0.7, 0.0, 0.0;
  const Matrix x = Matrix::Constant(1, 3, 0.3), xn = Matrix::Constant(1, 3, 0.5), y = Matrix::Constant(1, 3, 0.1);
  const Matrix theta = th.replicate(1, 3);
  const Vector u = Vector::Constant(1, -0.8);
  const auto fd = fd_h_blocks(model, x, theta, xn, y, u, u);
  CHECK(fd.mean.H33(0, 0) == doctest::Approx(100.0).epsilon(1e-6));
  CHECK(fd.richardson_gap >= 0.0);
}

TEST_CASE("finite difference step range") {
  const GaussianSsm model = make_bias_model();
  const Matrix one = Matrix::Zero(1, 2);
  const Vector u = Vector::Zero(1);
  CHECK_THROWS_AS(fd_h_blocks(model, one, one, one, one, u, u, 1e-2), ParameterError);
  CHECK_THROWS_AS(fd_h_blocks(model, one, one, one, one, u, u, 1e-8), ParameterError);
  CHECK_NOTHROW(fd_h_blocks(model, one, one, one, one, u, u, 1e-3));
}
