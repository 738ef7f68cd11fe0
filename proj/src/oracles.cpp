#include "bidesign/oracles.hpp"

#include <cmath>

#include <fmt/format.h>

#include "bidesign/errors.hpp"
#include "bidesign/input_policy.hpp"
#include "bidesign/parallel.hpp"

namespace bidesign {

namespace {

bool close(const Matrix& a, const Matrix& b) {
  return ((a - b).array().abs() <= 1e-9 * (1.0 + a.array().abs())).all();
}

void require_affine(const GaussianSsm& model, const Vector& u) {
  const int n = model.n(), q = model.q();
  const Vector x0 = model.prior_mean().head(n);
  const Vector th0 = model.prior_mean().tail(q);
  const Matrix A = model.jac_drift_x(x0, th0, u), B = model.jac_drift_theta(x0, th0, u);
  const Matrix C = model.jac_obs_x(x0, th0, u), D = model.jac_obs_theta(x0, th0, u);
  const double shifts[] = {-3.0, 0.5, 2.0, 7.0};
  for (int i = 0; i < 4; ++i) {
    const Vector x = x0 + Vector::LinSpaced(n, shifts[i], 1.5 * shifts[i]);
    const Vector th = th0 + Vector::LinSpaced(q, -shifts[i], 0.3 * shifts[i]);
    if (!close(A, model.jac_drift_x(x, th, u)) || !close(B, model.jac_drift_theta(x, th, u)) ||
        !close(C, model.jac_obs_x(x, th, u)) || !close(D, model.jac_obs_theta(x, th, u))) {
      throw OracleMisuse(fmt::format(
          "model '{}' is not affine in (x, theta); the Kalman oracle does not apply", model.name()));
    }
  }
}

}  // namespace

std::vector<KalmanState> kalman_extended(const GaussianSsm& model, const Matrix& inputs,
                                         const Matrix* measurements) {
  const int n = model.n(), q = model.q(), m = model.m();
  const int s = n + q;
  const Eigen::Index N = inputs.cols();
  if (N < 1 || inputs.rows() != model.p()) throw Error("kalman_extended: bad input sequence");
  if (measurements && (measurements->rows() != m || measurements->cols() != N)) {
    throw Error("kalman_extended: measurements must be m x N");
  }
  require_affine(model, inputs.col(0));
  require_affine(model, inputs.col(N - 1));

  Vector mean = model.prior_mean();
  Matrix P = model.prior_cov();
  Matrix F = Matrix::Identity(s, s);
  Matrix Qz = Matrix::Zero(s, s);
  Qz.topLeftCorner(n, n) = model.Q();
  Matrix H(m, s);
  const Matrix I = Matrix::Identity(s, s);

  std::vector<KalmanState> out;
  out.reserve(static_cast<std::size_t>(N));
  for (Eigen::Index t = 0; t < N; ++t) {
    const Vector u = inputs.col(t);
    const Vector x = mean.head(n), th = mean.tail(q);
    F.topLeftCorner(n, n) = model.jac_drift_x(x, th, u);
    F.topRightCorner(n, q) = model.jac_drift_theta(x, th, u);
    // Predict.
    Vector pred(s);
    pred.head(n) = model.drift(x, th, u);
    pred.tail(q) = th;
    Matrix Pp = F * P * F.transpose() + Qz;
    // Update (Joseph form).
    const Vector xp = pred.head(n), thp = pred.tail(q);
    H.leftCols(n) = model.jac_obs_x(xp, thp, u);
    H.rightCols(q) = model.jac_obs_theta(xp, thp, u);
    const Matrix S = H * Pp * H.transpose() + model.R();
    const Matrix K = S.ldlt().solve(H * Pp).transpose();
    const Matrix IKH = I - K * H;
    P = IKH * Pp * IKH.transpose() + K * model.R() * K.transpose();
    P = 0.5 * (P + P.transpose()).eval();
    mean = pred;
    if (measurements) mean += K * (measurements->col(t) - model.observation(xp, thp, u));
    out.push_back(KalmanState{mean, P});
  }
  return out;
}

EnumerationResult enumerate_objective(const DesignConfig& config, const std::vector<double>& phi,
                                      std::size_t groups, std::size_t capacity) {
  if (config.phi != PhiKind::kTrace) {
    throw OracleMisuse("enumeration averages bound sums, which matches the objective only for trace");
  }
  if (groups < 2) throw ParameterError("enumeration needs at least two noise groups");
  const MarkovInputPolicy policy = policy_from_template(config.tmpl, config.space, phi);
  const auto r = static_cast<std::size_t>(config.space.r());
  std::size_t count = 1;
  for (std::size_t t = 0; t < config.N; ++t) {
    count *= r;
    if (count > capacity) {
      throw CapacityError(fmt::format("{}^{} input sequences exceed the capacity {}", r, config.N,
                                      capacity));
    }
  }

  EnumerationResult res;
  res.sequences = count;
  std::vector<Matrix> inputs;
  std::vector<double> probs;
  std::vector<int> symbols(config.N);
  for (std::size_t c = 0; c < count; ++c) {
    std::size_t rest = c;
    for (std::size_t t = config.N; t-- > 0;) {
      symbols[t] = static_cast<int>(rest % r);
      rest /= r;
    }
    const double lp = symbols_log_prob(policy, symbols);
    if (std::isinf(lp)) continue;
    inputs.push_back(symbols_to_inputs(config.space, symbols));
    probs.push_back(std::exp(lp));
  }
  res.supported = inputs.size();

  std::vector<double> per_group(groups);
  parallel_for(groups, config.threads, [&](std::size_t g) {
    double v = 0.0;
    for (std::size_t c = 0; c < inputs.size(); ++c) {
      v += probs[c] * bound_sum_for_inputs(config, inputs[c], g);
    }
    per_group[g] = v;
  });
  double mean = 0.0;
  for (double v : per_group) mean += v;
  mean /= static_cast<double>(groups);
  double ss = 0.0;
  for (double v : per_group) ss += (v - mean) * (v - mean);
  res.value = mean;
  res.std_error = std::sqrt(ss / static_cast<double>(groups - 1) / static_cast<double>(groups));
  return res;
}

FdHBlocks fd_h_blocks(const GaussianSsm& model, const Matrix& x_t, const Matrix& theta,
                      const Matrix& x_next, const Matrix& y_next, VectorCRef u_drift,
                      VectorCRef u_obs, double step) {
  if (!(step >= 1e-7 && step <= 1e-3)) throw ParameterError("finite-difference step must lie in [1e-7, 1e-3]");
  const int n = model.n(), q = model.q(), m = model.m();
  const int dim = 2 * n + q;
  const Eigen::Index M = x_t.cols();
  if (M < 2 || theta.cols() != M || x_next.cols() != M || y_next.cols() != M ||
      y_next.rows() != m) {
    throw Error("fd_h_blocks: sample matrices do not match");
  }
  const Vector ud = u_drift, uo = u_obs;

  // -log p for one sample at the stacked point v = (x, theta, x').
  auto neg_log = [&](const Vector& v, const Vector& y) {
    const Vector x = v.head(n), th = v.segment(n, q), xn = v.tail(n);
    const Vector e = xn - model.drift(x, th, ud);
    const Vector w = y - model.observation(xn, th, uo);
    const double val = 0.5 * e.dot(model.Q_inv() * e) + 0.5 * w.dot(model.R_inv() * w);
    if (!std::isfinite(val)) throw Error("fd_h_blocks: non-finite log-density");
    return val;
  };
  auto hessian = [&](const Vector& v, const Vector& y, double h) {
    Matrix Hs(dim, dim);
    const double f0 = neg_log(v, y);
    for (int i = 0; i < dim; ++i) {
      Vector vp = v, vm = v;
      vp(i) += h;
      vm(i) -= h;
      Hs(i, i) = (neg_log(vp, y) - 2.0 * f0 + neg_log(vm, y)) / (h * h);
      for (int j = 0; j < i; ++j) {
        Vector pp = v, pm = v, mp = v, mm = v;
        pp(i) += h; pp(j) += h;
        pm(i) += h; pm(j) -= h;
        mp(i) -= h; mp(j) += h;
        mm(i) -= h; mm(j) -= h;
        Hs(i, j) = Hs(j, i) =
            (neg_log(pp, y) - neg_log(pm, y) - neg_log(mp, y) + neg_log(mm, y)) / (4.0 * h * h);
      }
    }
    return Hs;
  };

  Matrix sum = Matrix::Zero(dim, dim), sum_sq = Matrix::Zero(dim, dim);
  double gap = 0.0;
  Vector v(dim);
  for (Eigen::Index j = 0; j < M; ++j) {
    v << x_t.col(j), theta.col(j), x_next.col(j);
    const Vector y = y_next.col(j);
    const Matrix h1 = hessian(v, y, step);
    const Matrix h2 = hessian(v, y, 2.0 * step);
    gap = std::max(gap, (h1 - h2).cwiseAbs().maxCoeff());
    const Matrix est = (4.0 * h1 - h2) / 3.0;
    sum += est;
    sum_sq += est.cwiseProduct(est);
  }
  const double Md = static_cast<double>(M);
  const Matrix mean = sum / Md;
  const Matrix var = ((sum_sq / Md - mean.cwiseProduct(mean)) * (Md / (Md - 1.0))).cwiseMax(0.0);
  const Matrix se = (var / Md).cwiseSqrt();

  auto split = [&](const Matrix& Hs) {
    HBlocks b;
    b.H11 = Hs.block(0, 0, n, n);
    b.H12 = Hs.block(0, n, n, q);
    b.H13 = Hs.block(0, n + q, n, n);
    b.H22 = Hs.block(n, n, q, q);
    b.H23 = Hs.block(n, n + q, q, n);
    b.H33 = Hs.block(n + q, n + q, n, n);
    return b;
  };
  return FdHBlocks{split(mean), split(se), gap};
}

}  // namespace bidesign
