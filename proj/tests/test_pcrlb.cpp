#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <sstream>

#include "bidesign/errors.hpp"
#include "bidesign/pcrlb.hpp"
#include "test_util.hpp"

using namespace bidesign;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

// Covariance-form Kalman filter on the bias model, written out by hand for
// the 2 x 2 extended state (x, theta): an independent route to [J_t]^{-1}.
std::vector<Matrix> kalman_bias(double q, double r, const Matrix& P0, int steps) {
  Eigen::Matrix2d F;
  F << 1, 1, 0, 1;
  Eigen::RowVector2d H(1, 0);
  Eigen::Matrix2d P = P0;
  std::vector<Matrix> out;
  for (int t = 0; t < steps; ++t) {
    Eigen::Matrix2d Pp = F * P * F.transpose();
    Pp(0, 0) += q;
    const double S = (H * Pp * H.transpose())(0, 0) + r;
    const Eigen::Vector2d K = Pp * H.transpose() / S;
    P = Pp - K * H * Pp;
    out.push_back(P);
  }
  return out;
}

}  // namespace

TEST_CASE("initial information is the inverse prior covariance") {
  const Pim J = init_pim(make_benchmark_model());
  CHECK(J.Jx.isApprox(scalar(100.0)));
  CHECK(J.Jtheta.isApprox(100.0 * Matrix::Identity(4, 4)));
  CHECK(J.Jxtheta.isZero(1e-12));
  const GaussianSsm id = make_benchmark_model().with_prior(Vector::Zero(5), Matrix::Identity(5, 5));
  CHECK(init_pim(id).assembled().isApprox(Matrix::Identity(5, 5)));
  const Pim b = init_pim(make_bias_model());
  CHECK(b.Jx(0, 0) == doctest::Approx(1.0));
  CHECK(b.Jtheta(0, 0) == doctest::Approx(1.0));
  CHECK(b.Jxtheta(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("bias model H-blocks have the constant-gradient closed form") {
  const GaussianSsm m = make_bias_model();
  for (std::size_t M : {1, 7, 100}) {
    Matrix x, th, xn;
    const CounterRng rng(3);
    sample_prior_into(m, M, rng, x, th);
    const Vector u = Vector::Constant(1, 0.8);
    propagate_states(m, x, th, u, state_noise_table(rng, 1, 1, 0, M), xn);
    const HBlocks H = estimate_h_blocks(m, x, th, xn, u, u);
    CHECK(H.H11(0, 0) == doctest::Approx(100.0));
    CHECK(H.H12(0, 0) == doctest::Approx(100.0));
    CHECK(H.H13(0, 0) == doctest::Approx(-100.0));
    CHECK(H.H22(0, 0) == doctest::Approx(100.0));
    CHECK(H.H23(0, 0) == doctest::Approx(-100.0));
    CHECK(H.H33(0, 0) == doctest::Approx(200.0));
  }
}

TEST_CASE("a state-blind measurement leaves H33 = Q^{-1}") {
  GaussianSsm m = make_benchmark_model();
  Vector mean = m.prior_mean();
  mean(3) = 0.0;
  mean(4) = 0.0;
  Matrix cov = m.prior_cov();
  cov(3, 3) = cov(4, 4) = 1e-30;
  m = m.with_prior(mean, cov);
  Matrix x, th, xn;
  const CounterRng rng(4);
  sample_prior_into(m, 500, rng, x, th);
  th.row(2).setZero();
  th.row(3).setZero();
  const Vector u = Vector::Constant(1, -0.8);
  propagate_states(m, x, th, u, state_noise_table(rng, 1, 1, 0, 500), xn);
  const HBlocks H = estimate_h_blocks(m, x, th, xn, u, u);
  CHECK(H.H33(0, 0) == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("H-block estimates converge at the square-root rate") {
  // Spread of the estimate over independent seeds halves when M quadruples.
  const GaussianSsm m = make_benchmark_model();
  const Vector u = Vector::Constant(1, 0.8);
  auto spread = [&](std::size_t M) {
    std::vector<double> h11, h22;
    for (std::uint64_t s = 0; s < 30; ++s) {
      Matrix x, th, xn;
      const CounterRng rng(100 + s);
      sample_prior_into(m, M, rng, x, th);
      propagate_states(m, x, th, u, state_noise_table(rng, 1, 1, 0, M), xn);
      const HBlocks H = estimate_h_blocks(m, x, th, xn, u, u);
      h11.push_back(H.H11(0, 0));
      h22.push_back(H.H22.norm());
    }
    return std::make_pair(testing::stddev(h11), testing::stddev(h22));
  };
  const auto a = spread(10000), b = spread(40000);
  CHECK(b.first / a.first == doctest::Approx(0.5).epsilon(0.35));
  CHECK(b.second / a.second == doctest::Approx(0.5).epsilon(0.35));
}

TEST_CASE("update with decoupled blocks") {
  Pim J{scalar(3.0), Matrix::Zero(1, 2), Matrix::Identity(2, 2)};
  HBlocks H{scalar(1.0), Matrix::Zero(1, 2), scalar(0.0), 2.0 * Matrix::Identity(2, 2),
            Matrix::Constant(2, 1, 0.5), scalar(4.0)};
  const Pim next = update_pim(J, H);
  CHECK(next.Jx.isApprox(H.H33));
  CHECK(next.Jxtheta.isApprox(H.H23.transpose()));
  CHECK(next.Jtheta.isApprox(J.Jtheta + H.H22));
}

TEST_CASE("bias model first update matches the Kalman posterior") {
  const Pim J0 = init_pim(make_bias_model());
  const HBlocks H{scalar(100), scalar(100), scalar(-100), scalar(100), scalar(-100), scalar(200)};
  const Pim J1 = update_pim(J0, H);
  Matrix expected(2, 2);
  expected << 100.9901, -0.9901, -0.9901, 1.9901;
  CHECK((J1.assembled() - expected).cwiseAbs().maxCoeff() < 1e-4);
  Matrix P1(2, 2);
  P1 << 0.00995, 0.00495, 0.00495, 0.50495;
  CHECK((J1.assembled().inverse() - P1).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(lower_bound_theta(J1)(0, 0) == doctest::Approx(0.50495).epsilon(1e-5));
  const Matrix kf = kalman_bias(0.01, 0.01, Matrix::Identity(2, 2), 1)[0];
  CHECK((J1.assembled().inverse() - kf).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("the update rejects a non positive definite result") {
  const Pim J{scalar(1), scalar(1), scalar(1)};
  const HBlocks H{scalar(1), scalar(1), scalar(-1), scalar(0.5), scalar(-1), scalar(1)};
  // J^x = 1 - 1/2 = 0.5, J^{x th} = 0, J^th = 1 + 0.5 - 2 < 0.
  CHECK_THROWS_AS(update_pim(J, H), BoundDegeneracy);
}

TEST_CASE("lower bound equals the block of the full inverse") {
  const Pim diag{scalar(50), Matrix::Zero(1, 4), 100.0 * Matrix::Identity(4, 4)};
  CHECK(lower_bound_theta(diag).isApprox(0.01 * Matrix::Identity(4, 4)));
  const CounterRng rng(12);
  for (std::uint64_t k = 0; k < 50; ++k) {
    Matrix A(5, 5);
    for (int i = 0; i < 25; ++i) A.data()[i] = CounterRng::normal(rng.key(Stream::kGeneric, k, 0), i);
    const Matrix J = A * A.transpose() + 0.1 * Matrix::Identity(5, 5);
    for (int n : {1, 2}) {
      const Matrix full = J.inverse();
      const Matrix L = lower_bound_theta(Pim::from_assembled(J, n));
      const Matrix ref = full.bottomRightCorner(5 - n, 5 - n);
      CHECK((L - ref).norm() / ref.norm() < 1e-10);
    }
  }
  const Pim bad{scalar(1), Matrix::Constant(1, 1, 2.0), scalar(1)};
  try {
    lower_bound_theta(bad);
    FAIL("expected a degenerate bound");
  } catch (const BoundDegeneracy& e) {
    CHECK(e.eigenvalue() == doctest::Approx(-3.0));
  }
}

TEST_CASE("bias model bound trajectory equals the Kalman parameter variance") {
  const GaussianSsm m = make_bias_model();
  for (double level : {0.8, -0.8, 0.0}) {
    const BoundTrajectory b = bound_trajectory(m, Matrix::Constant(1, 100, level), 100,
                                               PhiKind::kTrace, CounterRng(1));
    const auto kf = kalman_bias(0.01, 0.01, Matrix::Identity(2, 2), 100);
    for (int t = 0; t < 100; ++t) {
      CHECK(testing::rel_err(b.Ltheta[t](0, 0), kf[t](1, 1)) < 1e-8);
      CHECK(b.phi[t] == b.Ltheta[t](0, 0));
    }
  }
}

TEST_CASE("weaker data gives no smaller a bound") {
  const GaussianSsm m = make_bias_model();
  const GaussianSsm weak = m.with_noise(2.0 * m.Q(), 2.0 * m.R());
  const Matrix u = Matrix::Constant(1, 40, 0.3);
  const double base = bound_trajectory(m, u, 10, PhiKind::kTrace, CounterRng(1)).phi.back();
  const double worse = bound_trajectory(weak, u, 10, PhiKind::kTrace, CounterRng(1)).phi.back();
  CHECK(worse >= base);
}

TEST_CASE("benchmark bound trajectory is positive, symmetric and decreasing on average") {
  const GaussianSsm m = make_benchmark_model();
  Matrix u(1, 50);
  for (int t = 0; t < 50; ++t) u(0, t) = (t / 3) % 2 ? 0.8 : -0.8;
  const BoundTrajectory b = bound_trajectory(m, u, 1000, PhiKind::kTrace, CounterRng(21));
  REQUIRE(b.Ltheta.size() == 50);
  for (const Matrix& L : b.Ltheta) {
    CHECK((L - L.transpose()).norm() < 1e-12);
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(L).eigenvalues().minCoeff() > 0.0);
    CHECK(L.trace() < 0.04);  // below the prior variance sum
  }
  CHECK(b.phi.back() < b.phi.front());
  // Same rng, same inputs: identical bound.
  const BoundTrajectory again = bound_trajectory(m, u, 1000, PhiKind::kTrace, CounterRng(21));
  CHECK(again.total() == b.total());
}

TEST_CASE("log-det test function") {
  Matrix L = Matrix::Identity(3, 3);
  L(0, 0) = 2.0;
  L(1, 1) = 3.0;
  CHECK(apply_phi(PhiKind::kLogDet, L) == doctest::Approx(std::log(6.0)));
  CHECK(apply_phi(PhiKind::kTrace, L) == doctest::Approx(6.0));
  CHECK(phi_from_string("logdet") == PhiKind::kLogDet);
  CHECK_THROWS(phi_from_string("det"));
  CHECK_THROWS_AS(apply_phi(PhiKind::kLogDet, -L), BoundDegeneracy);
}

TEST_CASE("bound CSV layout") {
  std::vector<Matrix> bounds{Matrix::Identity(2, 2), 0.5 * Matrix::Identity(2, 2)};
  bounds[1](0, 1) = bounds[1](1, 0) = 0.25;
  std::ostringstream out;
  write_bound_csv(out, bounds, PhiKind::kTrace, "seed=1");
  CHECK(out.str() ==
        "# seed=1\n"
        "t,phi,L_1_1,L_1_2,L_2_1,L_2_2\n"
        "1,2,1,0,0,1\n"
        "2,1,0.5,0.25,0.25,0.5\n");
}

TEST_CASE("bound trajectory argument checks") {
  const GaussianSsm m = make_benchmark_model();
  CHECK_THROWS(bound_trajectory(m, Matrix(1, 0), 10, PhiKind::kTrace, CounterRng(1)));
  CHECK_THROWS(bound_trajectory(m, Matrix::Zero(1, 3), 1, PhiKind::kTrace, CounterRng(1)));
  CHECK_THROWS(bound_trajectory(m, Matrix::Zero(2, 3), 10, PhiKind::kTrace, CounterRng(1)));
}
