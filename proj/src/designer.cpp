#include "bidesign/designer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "bidesign/errors.hpp"
#include "bidesign/parallel.hpp"

namespace bidesign {

namespace {

double logistic(double y) { return 1.0 / (1.0 + std::exp(-y)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

std::vector<double> to_unit(const std::vector<double>& y) {
  std::vector<double> phi(y.size());
  std::transform(y.begin(), y.end(), phi.begin(), logistic);
  return phi;
}

void check_config(const DesignConfig& c) {
  if (c.N < static_cast<std::size_t>(c.space.k) + 1) throw ParameterError("N must be at least k + 1");
  if (c.M < 2) throw ParameterError("M must be at least 2");
  if (c.M_u < 1) throw ParameterError("M_u must be at least 1");
  if (c.model.p() != c.space.p) {
    throw ParameterError("input space dimension does not match the model input dimension");
  }
}

}  // namespace

double bound_sum_for_inputs(const DesignConfig& config, const Matrix& inputs, std::uint64_t group) {
  return bound_trajectory(config.model, inputs, config.M, config.phi,
                          CounterRng(config.seed, group))
      .total();
}

ObjectiveEstimate evaluate_policy(const DesignConfig& config, const MarkovInputPolicy& policy) {
  check_config(config);
  const std::size_t paths = config.M_u;
  std::vector<std::vector<Matrix>> bounds(paths);
  std::vector<double> totals(paths);
  parallel_for(paths, config.threads, [&](std::size_t i) {
    const CounterRng rng(config.seed, i);
    const Matrix inputs = sample_sequence(policy, config.N, rng);
    try {
      BoundTrajectory traj = bound_trajectory(config.model, inputs, config.M, config.phi, rng);
      totals[i] = traj.total();
      bounds[i] = std::move(traj.Ltheta);
    } catch (const SimulationDivergence& e) {
      throw SimulationDivergence(
          e.path(), e.time(),
          fmt::format("input path {} (seed {}): {}", i, config.seed, e.what()));
    } catch (const BoundDegeneracy& e) {
      throw BoundDegeneracy(fmt::format("input path {} (seed {}): {}", i, config.seed, e.what()),
                            e.eigenvalue());
    }
  });

  ObjectiveEstimate out;
  const double inv = 1.0 / static_cast<double>(paths);
  out.mean_bound.resize(config.N);
  std::vector<Matrix> slice(paths);
  for (std::size_t t = 0; t < config.N; ++t) {
    for (std::size_t i = 0; i < paths; ++i) slice[i] = bounds[i][t];
    out.mean_bound[t] = pairwise_sum(slice) * inv;
  }
  const double mean_total = pairwise_sum(totals) * inv;
  if (config.phi == PhiKind::kTrace) {
    out.value = mean_total;
    double ss = 0.0;
    if (paths > 1) {
      std::vector<double> dev(paths);
      for (std::size_t i = 0; i < paths; ++i) dev[i] = (totals[i] - mean_total) * (totals[i] - mean_total);
      ss = pairwise_sum(dev) / static_cast<double>(paths - 1);
    }
    out.std_error = std::sqrt(ss * inv);
  } else {
    // Phi of the mean bound, summed over time.
    double v = 0.0;
    for (const Matrix& L : out.mean_bound) v += apply_phi(config.phi, L);
    out.value = v;
    out.std_error = std::numeric_limits<double>::quiet_NaN();
  }
  out.path_totals = std::move(totals);
  return out;
}

ObjectiveEstimate evaluate_objective(const DesignConfig& config, const std::vector<double>& phi) {
  return evaluate_policy(config, policy_from_template(config.tmpl, config.space, phi));
}

SimplexResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                          const std::vector<double>& start, const OptimizerSettings& settings) {
  const std::size_t d = start.size();
  SimplexResult result;
  if (d == 0) {
    result.x = start;
    result.value = f(start);
    result.converged = true;
    return result;
  }
  constexpr double kReflect = 1.0, kExpand = 2.0, kContract = 0.5, kShrink = 0.5;

  std::vector<std::vector<double>> simplex(d + 1, start);
  for (std::size_t i = 0; i < d; ++i) simplex[i + 1][i] += settings.initial_step;
  std::vector<double> values(d + 1);
  for (std::size_t i = 0; i <= d; ++i) values[i] = f(simplex[i]);

  std::vector<double> best_trace;  // best value after each iteration
  auto order = [&] {
    std::vector<std::size_t> idx(d + 1);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    std::vector<std::vector<double>> s(d + 1);
    std::vector<double> v(d + 1);
    for (std::size_t i = 0; i <= d; ++i) {
      s[i] = simplex[idx[i]];
      v[i] = values[idx[i]];
    }
    simplex.swap(s);
    values.swap(v);
  };
  auto along = [&](const std::vector<double>& centroid, double coef) {
    std::vector<double> x(d);
    for (std::size_t j = 0; j < d; ++j) x[j] = centroid[j] + coef * (centroid[j] - simplex[d][j]);
    return x;
  };

  order();
  best_trace.push_back(values[0]);
  int it = 0;
  for (; it < settings.max_iterations; ++it) {
    std::vector<double> centroid(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) centroid[j] += simplex[i][j] / static_cast<double>(d);
    }
    const auto xr = along(centroid, kReflect);
    const double fr = f(xr);
    if (fr < values[0]) {
      const auto xe = along(centroid, kExpand);
      const double fe = f(xe);
      if (fe < fr) {
        simplex[d] = xe;
        values[d] = fe;
      } else {
        simplex[d] = xr;
        values[d] = fr;
      }
    } else if (fr < values[d - 1]) {
      simplex[d] = xr;
      values[d] = fr;
    } else {
      const bool outside = fr < values[d];
      const auto xc = along(centroid, outside ? kContract : -kContract);
      const double fc = f(xc);
      if (fc < (outside ? fr : values[d])) {
        simplex[d] = xc;
        values[d] = fc;
      } else {
        for (std::size_t i = 1; i <= d; ++i) {
          for (std::size_t j = 0; j < d; ++j) {
            simplex[i][j] = simplex[0][j] + kShrink * (simplex[i][j] - simplex[0][j]);
          }
          values[i] = f(simplex[i]);
        }
      }
    }
    order();
    best_trace.push_back(values[0]);
    const auto window = static_cast<std::size_t>(settings.patience);
    if (best_trace.size() > window) {
      const double before = best_trace[best_trace.size() - 1 - window];
      const double now = best_trace.back();
      if (before - now <= settings.tolerance * std::abs(before)) {
        result.converged = true;
        ++it;
        break;
      }
    }
  }
  result.x = simplex[0];
  result.value = values[0];
  result.iterations = it;
  return result;
}

DesignResult optimize(const DesignConfig& config) {
  check_config(config);
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t d = config.tmpl.arity(config.space);

  DesignResult out;
  out.case_name = config.tmpl.name();
  std::map<std::vector<double>, double> cache;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_phi;
  int restart = 0;

  auto objective = [&](const std::vector<double>& y) {
    const std::vector<double> phi = to_unit(y);
    if (auto it = cache.find(phi); it != cache.end()) return it->second;
    const double v = evaluate_objective(config, phi).value;
    cache.emplace(phi, v);
    if (v < best) {
      best = v;
      best_phi = phi;
    }
    ++out.evaluations;
    out.history.push_back(HistoryEntry{restart, out.evaluations, phi, v, best});
    return v;
  };

  if (d == 0) {
    objective({});
  } else {
    const double starts[] = {0.5, 0.25, 0.75};
    const int restarts = std::clamp(config.optimizer.restarts, 1, 3);
    for (restart = 0; restart < restarts; ++restart) {
      const std::vector<double> y0(d, logit(starts[restart]));
      const SimplexResult r = nelder_mead(objective, y0, config.optimizer);
      out.converged = out.converged && r.converged;
    }
  }

  out.phi_star = best_phi;
  out.policy = policy_from_template(config.tmpl, config.space, best_phi);
  out.objective = evaluate_policy(config, out.policy);
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::vector<GridPoint> grid_search(const DesignConfig& config, int points) {
  const std::size_t d = config.tmpl.arity(config.space);
  if (d > 2) throw ParameterError("grid search supports at most two parameters");
  if (points < 2) throw ParameterError("grid search needs at least two points per axis");
  std::vector<GridPoint> out;
  std::vector<int> idx(d, 0);
  const auto level = [points](int i) { return static_cast<double>(i) / (points - 1); };
  while (true) {
    GridPoint g;
    for (std::size_t j = 0; j < d; ++j) g.phi.push_back(level(idx[j]));
    g.value = evaluate_objective(config, g.phi).value;
    out.push_back(std::move(g));
    std::size_t j = 0;
    while (j < d && ++idx[j] == points) idx[j++] = 0;
    if (j == d) break;
  }
  return out;
}

std::vector<CaseResult> rank_cases(const DesignConfig& config,
                                   const std::vector<PolicyTemplate>& templates) {
  std::vector<CaseResult> out;
  for (const PolicyTemplate& t : templates) {
    DesignConfig c = config;
    c.tmpl = t;
    out.push_back(CaseResult{t.name(), optimize(c)});
  }
  std::stable_sort(out.begin(), out.end(), [](const CaseResult& a, const CaseResult& b) {
    return a.result.objective.value < b.result.objective.value;
  });
  return out;
}

}  // namespace bidesign
