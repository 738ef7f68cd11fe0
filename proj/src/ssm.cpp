#include "bidesign/ssm.hpp"

#include <cmath>
#include <mutex>

#include <fmt/format.h>

#include "bidesign/errors.hpp"
#include "bidesign/parallel.hpp"

namespace bidesign {

namespace {

Matrix checked_cholesky(const Matrix& a, const char* what) {
  if (a.rows() != a.cols()) throw ModelError(fmt::format("{} is not square", what));
  if ((a - a.transpose()).norm() > 1e-12 * std::max(1.0, a.norm())) {
    throw ModelError(fmt::format("{} is not symmetric", what));
  }
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw ModelError(fmt::format("{} is not positive definite", what));
  }
  return llt.matrixL();
}

class BenchmarkMaps final : public ModelMaps {
 public:
  void drift(VectorCRef x, VectorCRef th, VectorCRef u, VectorRef out) const override {
    const double xv = x[0];
    out[0] = th[0] * xv + xv / (th[1] + xv * xv) + u[0];
  }
  void observation(VectorCRef x, VectorCRef th, VectorCRef, VectorRef out) const override {
    const double xv = x[0];
    out[0] = th[2] * xv + th[3] * xv * xv;
  }
  void drift_jacobian(VectorCRef x, VectorCRef th, VectorCRef, MatrixRef dx,
                      MatrixRef dth) const override {
    const double xv = x[0];
    const double den = th[1] + xv * xv;
    dx(0, 0) = th[0] + (th[1] - xv * xv) / (den * den);
    dth(0, 0) = xv;
    dth(0, 1) = -xv / (den * den);
    dth(0, 2) = 0.0;
    dth(0, 3) = 0.0;
  }
  void observation_jacobian(VectorCRef x, VectorCRef th, VectorCRef, MatrixRef dx,
                            MatrixRef dth) const override {
    const double xv = x[0];
    dx(0, 0) = th[2] + 2.0 * th[3] * xv;
    dth(0, 0) = 0.0;
    dth(0, 1) = 0.0;
    dth(0, 2) = xv;
    dth(0, 3) = xv * xv;
  }

  void drift_batch(const Matrix& x, const Matrix& th, VectorCRef u, Matrix& out) const override {
    const double uv = u[0];
    const Eigen::Index count = x.cols();
    for (Eigen::Index j = 0; j < count; ++j) {
      const double xv = x(0, j);
      out(0, j) = th(0, j) * xv + xv / (th(1, j) + xv * xv) + uv;
    }
  }
  void drift_jacobian_batch(const Matrix& x, const Matrix& th, VectorCRef,
                            Matrix& jac) const override {
    const Eigen::Index count = x.cols();
    for (Eigen::Index j = 0; j < count; ++j) {
      const double xv = x(0, j);
      const double den = th(1, j) + xv * xv;
      const double den2 = den * den;
      jac(j, 0) = th(0, j) + (th(1, j) - xv * xv) / den2;
      jac(j, 1) = xv;
      jac(j, 2) = -xv / den2;
      jac(j, 3) = 0.0;
      jac(j, 4) = 0.0;
    }
  }
  void observation_jacobian_batch(const Matrix& x, const Matrix& th, VectorCRef,
                                  Matrix& jac) const override {
    const Eigen::Index count = x.cols();
    for (Eigen::Index j = 0; j < count; ++j) {
      const double xv = x(0, j);
      jac(j, 0) = th(2, j) + 2.0 * th(3, j) * xv;
      jac(j, 1) = 0.0;
      jac(j, 2) = 0.0;
      jac(j, 3) = xv;
      jac(j, 4) = xv * xv;
    }
  }
};

class BiasMaps final : public ModelMaps {
 public:
  void drift(VectorCRef x, VectorCRef th, VectorCRef u, VectorRef out) const override {
    out[0] = x[0] + th[0] + u[0];
  }
  void observation(VectorCRef x, VectorCRef, VectorCRef, VectorRef out) const override {
    out[0] = x[0];
  }
  void drift_jacobian(VectorCRef, VectorCRef, VectorCRef, MatrixRef dx,
                      MatrixRef dth) const override {
    dx(0, 0) = 1.0;
    dth(0, 0) = 1.0;
  }
  void observation_jacobian(VectorCRef, VectorCRef, VectorCRef, MatrixRef dx,
                            MatrixRef dth) const override {
    dx(0, 0) = 1.0;
    dth(0, 0) = 0.0;
  }
};

struct Registry {
  std::mutex mutex;
  std::map<std::string, ModelFactory> factories{
      {"benchmark", make_benchmark_model},
      {"bias", make_bias_model},
  };
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void ModelMaps::drift_batch(const Matrix& x, const Matrix& theta, VectorCRef u,
                            Matrix& out) const {
  for (Eigen::Index j = 0; j < x.cols(); ++j) drift(x.col(j), theta.col(j), u, out.col(j));
}

void ModelMaps::drift_jacobian_batch(const Matrix& x, const Matrix& theta, VectorCRef u,
                                     Matrix& jac) const {
  const Eigen::Index n = x.rows();
  const Eigen::Index q = theta.rows();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    drift_jacobian(x.col(j), theta.col(j), u, jac.block(j * n, 0, n, n),
                   jac.block(j * n, n, n, q));
  }
}

void ModelMaps::observation_jacobian_batch(const Matrix& x, const Matrix& theta, VectorCRef u,
                                           Matrix& jac) const {
  const Eigen::Index n = x.rows();
  const Eigen::Index q = theta.rows();
  const Eigen::Index m = jac.rows() / std::max<Eigen::Index>(x.cols(), 1);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    observation_jacobian(x.col(j), theta.col(j), u, jac.block(j * m, 0, m, n),
                         jac.block(j * m, n, m, q));
  }
}

GaussianSsm::GaussianSsm(std::string name, ModelDims dims, std::shared_ptr<const ModelMaps> maps,
                         Matrix Q, Matrix R, Vector prior_mean, Matrix prior_cov)
    : name_(std::move(name)),
      dims_(dims),
      maps_(std::move(maps)),
      Q_(std::move(Q)),
      R_(std::move(R)),
      prior_mean_(std::move(prior_mean)),
      prior_cov_(std::move(prior_cov)) {
  if (dims_.n < 1 || dims_.q < 1 || dims_.p < 1 || dims_.m < 1) {
    throw ModelError("model dimensions must all be positive");
  }
  if (!maps_) throw ModelError("model maps are missing");
  if (Q_.rows() != dims_.n) throw ModelError("Q must be n x n");
  if (R_.rows() != dims_.m) throw ModelError("R must be m x m");
  const int s = dims_.extended();
  if (prior_mean_.size() != s || prior_cov_.rows() != s) {
    throw ModelError("prior must have dimension n + q");
  }
  Q_chol_ = checked_cholesky(Q_, "Q");
  R_chol_ = checked_cholesky(R_, "R");
  prior_chol_ = checked_cholesky(prior_cov_, "prior covariance");

  const Matrix In = Matrix::Identity(dims_.n, dims_.n);
  const Matrix Im = Matrix::Identity(dims_.m, dims_.m);
  Q_info_sqrt_ = Q_chol_.triangularView<Eigen::Lower>().solve(In);
  R_info_sqrt_ = R_chol_.triangularView<Eigen::Lower>().solve(Im);
  Q_inv_ = Q_info_sqrt_.transpose() * Q_info_sqrt_;
  R_inv_ = R_info_sqrt_.transpose() * R_info_sqrt_;
  Q_inv_ = 0.5 * (Q_inv_ + Q_inv_.transpose()).eval();
  R_inv_ = 0.5 * (R_inv_ + R_inv_.transpose()).eval();
}

Vector GaussianSsm::drift(const Vector& x, const Vector& theta, const Vector& u) const {
  Vector out(n());
  maps_->drift(x, theta, u, out);
  return out;
}

Vector GaussianSsm::observation(const Vector& x, const Vector& theta, const Vector& u) const {
  Vector out(m());
  maps_->observation(x, theta, u, out);
  return out;
}

Matrix GaussianSsm::jac_drift_x(const Vector& x, const Vector& theta, const Vector& u) const {
  Matrix dx(n(), n()), dth(n(), q());
  maps_->drift_jacobian(x, theta, u, dx, dth);
  return dx;
}

Matrix GaussianSsm::jac_drift_theta(const Vector& x, const Vector& theta, const Vector& u) const {
  Matrix dx(n(), n()), dth(n(), q());
  maps_->drift_jacobian(x, theta, u, dx, dth);
  return dth;
}

Matrix GaussianSsm::jac_obs_x(const Vector& x, const Vector& theta, const Vector& u) const {
  Matrix dx(m(), n()), dth(m(), q());
  maps_->observation_jacobian(x, theta, u, dx, dth);
  return dx;
}

Matrix GaussianSsm::jac_obs_theta(const Vector& x, const Vector& theta, const Vector& u) const {
  Matrix dx(m(), n()), dth(m(), q());
  maps_->observation_jacobian(x, theta, u, dx, dth);
  return dth;
}

GaussianSsm GaussianSsm::with_noise(Matrix Q, Matrix R) const {
  return GaussianSsm(name_, dims_, maps_, std::move(Q), std::move(R), prior_mean_, prior_cov_);
}

GaussianSsm GaussianSsm::with_prior(Vector mean, Matrix cov) const {
  return GaussianSsm(name_, dims_, maps_, Q_, R_, std::move(mean), std::move(cov));
}

GaussianSsm make_benchmark_model() {
  Vector mean(5);
  mean << 1.0, 0.7, 0.6, 0.5, 0.4;
  return GaussianSsm("benchmark", ModelDims{1, 4, 1, 1}, std::make_shared<BenchmarkMaps>(),
                     Matrix::Constant(1, 1, 0.01), Matrix::Constant(1, 1, 0.01), mean,
                     0.01 * Matrix::Identity(5, 5));
}

GaussianSsm make_bias_model() {
  return GaussianSsm("bias", ModelDims{1, 1, 1, 1}, std::make_shared<BiasMaps>(),
                     Matrix::Constant(1, 1, 0.01), Matrix::Constant(1, 1, 0.01), Vector::Zero(2),
                     Matrix::Identity(2, 2));
}

void register_model(const std::string& name, ModelFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[name] = std::move(factory);
}

GaussianSsm make_model(const std::string& name) {
  ModelFactory factory;
  {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    auto it = r.factories.find(name);
    if (it == r.factories.end()) throw ModelError(fmt::format("unknown model '{}'", name));
    factory = it->second;
  }
  return factory();
}

std::vector<std::string> registered_models() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& [name, _] : r.factories) names.push_back(name);
  return names;
}

Vector ExtendedState::concat() const {
  Vector z(x.size() + theta.size());
  z << x, theta;
  return z;
}

void sample_prior_into(const GaussianSsm& model, std::size_t count, const CounterRng& rng,
                       Matrix& states, Matrix& theta) {
  const int n = model.n();
  const int s = model.dims().extended();
  states.resize(n, static_cast<Eigen::Index>(count));
  theta.resize(model.q(), static_cast<Eigen::Index>(count));
  Vector z(s);
  for (std::size_t j = 0; j < count; ++j) {
    rng.normals(Stream::kPrior, j, 0, z, s);
    const Vector draw = model.prior_mean() + model.prior_chol() * z;
    states.col(static_cast<Eigen::Index>(j)) = draw.head(n);
    theta.col(static_cast<Eigen::Index>(j)) = draw.tail(model.q());
  }
}

std::vector<ExtendedState> sample_prior(const GaussianSsm& model, std::size_t count,
                                        const CounterRng& rng) {
  if (count < 1) throw Error("sample_prior needs at least one draw");
  Matrix states, theta;
  sample_prior_into(model, count, rng, states, theta);
  std::vector<ExtendedState> out(count);
  for (std::size_t j = 0; j < count; ++j) {
    out[j].x = states.col(static_cast<Eigen::Index>(j));
    out[j].theta = theta.col(static_cast<Eigen::Index>(j));
  }
  return out;
}

namespace {

void check_finite(const Matrix& values, std::size_t first_path, std::size_t time,
                  const char* what) {
  if (values.allFinite()) return;
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    if (!values.col(j).allFinite()) {
      const std::size_t path = first_path + static_cast<std::size_t>(j);
      throw SimulationDivergence(path, time,
                                 fmt::format("{} diverged on path {} at time {}", what, path, time));
    }
  }
}

Matrix noise_table(const CounterRng& rng, Stream stream, int rows, std::size_t horizon,
                   std::size_t first_path, std::size_t count) {
  const std::size_t per_path = static_cast<std::size_t>(rows) * horizon;
  Matrix table(static_cast<Eigen::Index>(per_path), static_cast<Eigen::Index>(count));
  for (std::size_t j = 0; j < count; ++j) {
    const std::uint64_t key = rng.key(stream, first_path + j, 0);
    double* col = table.col(static_cast<Eigen::Index>(j)).data();
    for (std::size_t c = 0; c < per_path; c += 2) {
      const auto [z0, z1] = CounterRng::normal_pair(key, c / 2);
      col[c] = z0;
      if (c + 1 < per_path) col[c + 1] = z1;
    }
  }
  return table;
}

}  // namespace

Matrix state_noise_table(const CounterRng& rng, int n, std::size_t horizon,
                         std::size_t first_path, std::size_t count) {
  return noise_table(rng, Stream::kProcess, n, horizon, first_path, count);
}

Matrix measurement_noise_table(const CounterRng& rng, int m, std::size_t horizon,
                               std::size_t first_path, std::size_t count) {
  return noise_table(rng, Stream::kMeasurement, m, horizon, first_path, count);
}

void propagate_states(const GaussianSsm& model, const Matrix& x, const Matrix& theta,
                      VectorCRef u, MatrixCRef noise, Matrix& x_next, std::size_t time,
                      std::size_t first_path) {
  const int n = model.n();
  x_next.resize(n, x.cols());
  model.maps().drift_batch(x, theta, u, x_next);
  if (n == 1) {
    x_next.row(0) += model.Q_chol()(0, 0) * noise.row(0);
  } else {
    x_next.noalias() += model.Q_chol().triangularView<Eigen::Lower>() * noise;
  }
  check_finite(x_next, first_path, time + 1, "state");
}

void measure_states(const GaussianSsm& model, const Matrix& x, const Matrix& theta, VectorCRef u,
                    MatrixCRef noise, Matrix& y, std::size_t time, std::size_t first_path) {
  const int m = model.m();
  y.resize(m, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) model.maps().observation(x.col(j), theta.col(j), u, y.col(j));
  y.noalias() += model.R_chol().triangularView<Eigen::Lower>() * noise;
  check_finite(y, first_path, time, "measurement");
}

SampleEnsemble simulate_paths(const GaussianSsm& model, const Matrix& inputs,
                              const std::vector<ExtendedState>& initial, const CounterRng& rng,
                              int threads) {
  if (inputs.cols() < 1) throw Error("simulate_paths needs a non-empty input sequence");
  if (inputs.rows() != model.p()) throw Error("input dimension does not match the model");
  if (initial.empty()) throw Error("simulate_paths needs at least one initial state");
  const auto count = static_cast<Eigen::Index>(initial.size());
  const auto horizon = static_cast<std::size_t>(inputs.cols());

  SampleEnsemble ens;
  ens.inputs = inputs;
  ens.theta.resize(model.q(), count);
  ens.states.assign(horizon + 1, Matrix(model.n(), count));
  ens.measurements.assign(horizon, Matrix(model.m(), count));
  for (Eigen::Index j = 0; j < count; ++j) {
    const auto& z = initial[static_cast<std::size_t>(j)];
    if (z.x.size() != model.n() || z.theta.size() != model.q()) {
      throw Error(fmt::format("initial state {} has the wrong dimension", j));
    }
    ens.states[0].col(j) = z.x;
    ens.theta.col(j) = z.theta;
  }

  // Fixed blocks of paths; the block layout does not depend on the thread count.
  constexpr Eigen::Index kBlock = 256;
  const auto blocks = static_cast<std::size_t>((count + kBlock - 1) / kBlock);
  parallel_for(blocks, threads, [&](std::size_t b) {
    const Eigen::Index begin = static_cast<Eigen::Index>(b) * kBlock;
    const Eigen::Index width = std::min(kBlock, count - begin);
    const auto first = static_cast<std::size_t>(begin);
    const auto paths = static_cast<std::size_t>(width);
    const Matrix state_noise = state_noise_table(rng, model.n(), horizon, first, paths);
    const Matrix obs_noise = measurement_noise_table(rng, model.m(), horizon, first, paths);
    const Matrix theta = ens.theta.middleCols(begin, width);
    Matrix x = ens.states[0].middleCols(begin, width);
    Matrix x_next, y;
    for (std::size_t t = 0; t < horizon; ++t) {
      const auto tc = static_cast<Eigen::Index>(t);
      const auto u = inputs.col(tc);
      propagate_states(model, x, theta, u, state_noise.middleRows(tc * model.n(), model.n()),
                       x_next, t, first);
      measure_states(model, x_next, theta, u, obs_noise.middleRows(tc * model.m(), model.m()), y,
                     t + 1, first);
      ens.states[t + 1].middleCols(begin, width) = x_next;
      ens.measurements[t].middleCols(begin, width) = y;
      x.swap(x_next);
    }
  });
  return ens;
}

}  // namespace bidesign
