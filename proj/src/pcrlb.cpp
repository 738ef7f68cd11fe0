#include "bidesign/pcrlb.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "bidesign/errors.hpp"

namespace bidesign {

namespace {

void symmetrize(Matrix& a) { a = 0.5 * (a + a.transpose()).eval(); }

double min_eigenvalue(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Replaces every row block B_j of `stacked` by W B_j (W lower triangular).
void whiten_blocks(const Matrix& W, Matrix& stacked) {
  const Eigen::Index rows = W.rows();
  if (rows == 1) {
    stacked *= W(0, 0);
    return;
  }
  const Eigen::Index blocks = stacked.rows() / rows;
  for (Eigen::Index j = 0; j < blocks; ++j) {
    auto block = stacked.middleRows(j * rows, rows);
    block = (W.triangularView<Eigen::Lower>() * block).eval();
  }
}

}  // namespace

Matrix Pim::assembled() const {
  const auto n = Jx.rows();
  const auto q = Jtheta.rows();
  Matrix J(n + q, n + q);
  J.topLeftCorner(n, n) = Jx;
  J.topRightCorner(n, q) = Jxtheta;
  J.bottomLeftCorner(q, n) = Jxtheta.transpose();
  J.bottomRightCorner(q, q) = Jtheta;
  return J;
}

Pim Pim::from_assembled(const Matrix& J, int n) {
  const auto q = J.rows() - n;
  return Pim{J.topLeftCorner(n, n), J.topRightCorner(n, q), J.bottomRightCorner(q, q)};
}

double apply_phi(PhiKind kind, const Matrix& bound) {
  switch (kind) {
    case PhiKind::kTrace:
      return bound.trace();
    case PhiKind::kLogDet: {
      Eigen::LLT<Matrix> llt(bound);
      if (llt.info() != Eigen::Success) {
        throw BoundDegeneracy("log-det of a non positive definite bound", min_eigenvalue(bound));
      }
      return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    }
  }
  return 0.0;
}

std::string to_string(PhiKind kind) { return kind == PhiKind::kTrace ? "trace" : "logdet"; }

PhiKind phi_from_string(const std::string& name) {
  if (name == "trace") return PhiKind::kTrace;
  if (name == "logdet") return PhiKind::kLogDet;
  throw Error(fmt::format("unknown test function '{}' (expected trace or logdet)", name));
}

double BoundTrajectory::total() const {
  double sum = 0.0;
  for (double v : phi) sum += v;
  return sum;
}

Pim init_pim(const GaussianSsm& model) {
  Eigen::LLT<Matrix> llt(model.prior_cov());
  if (llt.info() != Eigen::Success) throw ModelError("prior covariance is singular");
  const Eigen::Index s = model.dims().extended();
  Matrix J = llt.solve(Matrix::Identity(s, s));
  symmetrize(J);
  return Pim::from_assembled(J, model.n());
}

HBlocks estimate_h_blocks(const GaussianSsm& model, const Matrix& x_t, const Matrix& theta,
                          const Matrix& x_next, VectorCRef u_drift, VectorCRef u_obs) {
  const int n = model.n();
  const int q = model.q();
  const int m = model.m();
  const int s = n + q;
  const Eigen::Index count = x_t.cols();
  if (count < 1) throw Error("estimate_h_blocks needs at least one sample");
  if (x_t.rows() != n || x_next.rows() != n || theta.rows() != q || theta.cols() != count ||
      x_next.cols() != count) {
    throw Error("estimate_h_blocks: sample dimensions do not match the model");
  }
  if (u_drift.size() != model.p() || u_obs.size() != model.p()) {
    throw Error("estimate_h_blocks: input dimension does not match the model");
  }

  // Row block j of F (resp. G) holds [d/dx  d/dtheta] of the drift (resp.
  // measurement map) at sample j. Whitening each block with W (W^T W = Q^{-1}
  // or R^{-1}) turns the sums of F_j^T Q^{-1} F_j into one Gram product.
  Matrix F(n * count, s), G(m * count, s);
  model.maps().drift_jacobian_batch(x_t, theta, u_drift, F);
  model.maps().observation_jacobian_batch(x_next, theta, u_obs, G);

  Matrix mean_F = Matrix::Zero(n, s);
  if (n == 1) {
    mean_F = F.colwise().sum();
  } else {
    for (Eigen::Index j = 0; j < count; ++j) mean_F += F.middleRows(j * n, n);
  }
  const double inv = 1.0 / static_cast<double>(count);
  mean_F *= inv;

  whiten_blocks(model.Q_info_sqrt(), F);
  whiten_blocks(model.R_info_sqrt(), G);
  Matrix gram_drift = Matrix::Zero(s, s);
  Matrix gram_obs = Matrix::Zero(s, s);
  gram_drift.selfadjointView<Eigen::Lower>().rankUpdate(F.transpose(), inv);
  gram_obs.selfadjointView<Eigen::Lower>().rankUpdate(G.transpose(), inv);
  gram_drift = gram_drift.selfadjointView<Eigen::Lower>();
  gram_obs = gram_obs.selfadjointView<Eigen::Lower>();
  const Matrix& Qi = model.Q_inv();

  HBlocks H;
  H.H11 = gram_drift.topLeftCorner(n, n);
  H.H12 = gram_drift.topRightCorner(n, q);
  H.H13 = -mean_F.leftCols(n).transpose() * Qi;
  H.H22 = gram_drift.bottomRightCorner(q, q) + gram_obs.bottomRightCorner(q, q);
  H.H23 = -mean_F.rightCols(q).transpose() * Qi + gram_obs.bottomLeftCorner(q, n);
  H.H33 = Qi + gram_obs.topLeftCorner(n, n);
  return H;
}

Pim update_pim(const Pim& J, const HBlocks& H) {
  const auto n = J.Jx.rows();
  Matrix D = J.Jx + H.H11;
  symmetrize(D);
  Eigen::LLT<Matrix> llt(D);
  if (llt.info() != Eigen::Success) {
    D += 1e-9 * Matrix::Identity(n, n);
    llt.compute(D);
    if (llt.info() != Eigen::Success) {
      throw BoundDegeneracy("J^x + H11 is singular even after jitter", min_eigenvalue(D));
    }
  }
  const Matrix coupling = J.Jxtheta + H.H12;     // n x q
  const Matrix solved_13 = llt.solve(H.H13);     // D^{-1} H13
  const Matrix solved_c = llt.solve(coupling);   // D^{-1} (J^{x th} + H12)

  Pim next;
  next.Jx = H.H33 - H.H13.transpose() * solved_13;
  next.Jxtheta = H.H23.transpose() - H.H13.transpose() * solved_c;
  next.Jtheta = J.Jtheta + H.H22 - coupling.transpose() * solved_c;
  symmetrize(next.Jx);
  symmetrize(next.Jtheta);

  const Matrix assembled = next.assembled();
  if (!assembled.allFinite()) {
    throw BoundDegeneracy("updated information matrix has non-finite entries",
                          std::numeric_limits<double>::quiet_NaN());
  }
  Eigen::LLT<Matrix> check(assembled);
  if (check.info() != Eigen::Success) {
    const double lambda = min_eigenvalue(assembled);
    throw BoundDegeneracy(
        fmt::format("updated information matrix is not positive definite (min eigenvalue {:.6g})",
                    lambda),
        lambda);
  }
  return next;
}

Matrix lower_bound_theta(const Pim& J) {
  Eigen::LLT<Matrix> jx(J.Jx);
  if (jx.info() != Eigen::Success) {
    throw BoundDegeneracy("J^x is not invertible", min_eigenvalue(J.Jx));
  }
  Matrix schur = J.Jtheta - J.Jxtheta.transpose() * jx.solve(J.Jxtheta);
  symmetrize(schur);
  Eigen::LLT<Matrix> llt(schur);
  if (llt.info() != Eigen::Success) {
    const double lambda = min_eigenvalue(schur);
    throw BoundDegeneracy(
        fmt::format("Schur complement is not positive definite (min eigenvalue {:.6g})", lambda),
        lambda);
  }
  Matrix bound = llt.solve(Matrix::Identity(schur.rows(), schur.cols()));
  symmetrize(bound);
  return bound;
}

BoundTrajectory bound_trajectory(const GaussianSsm& model, const Matrix& inputs,
                                 std::size_t samples, PhiKind phi, const CounterRng& rng) {
  if (inputs.cols() < 1) throw Error("bound_trajectory needs N >= 1");
  if (inputs.rows() != model.p()) throw Error("input dimension does not match the model");
  if (samples < 2) throw Error("bound_trajectory needs M >= 2");
  const auto horizon = static_cast<std::size_t>(inputs.cols());

  Matrix x, theta, x_next;
  sample_prior_into(model, samples, rng, x, theta);
  const int n = model.n();
  const Matrix noise = state_noise_table(rng, n, horizon, 0, samples);
  Pim J = init_pim(model);

  BoundTrajectory out;
  out.Ltheta.reserve(horizon);
  out.phi.reserve(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    const auto u = inputs.col(static_cast<Eigen::Index>(t));
    propagate_states(model, x, theta, u, noise.middleRows(static_cast<Eigen::Index>(t) * n, n),
                     x_next, t);
    const HBlocks H = estimate_h_blocks(model, x, theta, x_next, u, u);
    J = update_pim(J, H);
    out.Ltheta.push_back(lower_bound_theta(J));
    out.phi.push_back(apply_phi(phi, out.Ltheta.back()));
    x.swap(x_next);
  }
  return out;
}

void write_bound_csv(std::ostream& out, const std::vector<Matrix>& bounds, PhiKind phi,
                     const std::string& comment) {
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "t,phi";
  const Eigen::Index q = bounds.empty() ? 0 : bounds.front().rows();
  for (Eigen::Index r = 0; r < q; ++r) {
    for (Eigen::Index c = 0; c < q; ++c) out << fmt::format(",L_{}_{}", r + 1, c + 1);
  }
  out << '\n';
  for (std::size_t t = 0; t < bounds.size(); ++t) {
    out << (t + 1) << ',' << fmt::format("{:.17g}", apply_phi(phi, bounds[t]));
    for (Eigen::Index r = 0; r < q; ++r) {
      for (Eigen::Index c = 0; c < q; ++c) out << fmt::format(",{:.17g}", bounds[t](r, c));
    }
    out << '\n';
  }
}

}  // namespace bidesign
