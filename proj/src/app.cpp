#include "bidesign/app.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "bidesign/errors.hpp"
#include "bidesign/oracles.hpp"

namespace bidesign {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    std::istringstream words(item);
    std::string w;
    while (words >> w) out.push_back(w);
  }
  return out;
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value, T min_value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    if (!value.empty() && value[0] == '-') {
      throw ConfigError(key, fmt::format("{} must be at least {} (got {})", key, min_value, value));
    }
    throw ConfigError(key, fmt::format("{} must be an integer (got '{}')", key, value));
  }
  if (out < min_value) {
    throw ConfigError(key, fmt::format("{} must be at least {} (got {})", key, min_value, value));
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& value, std::size_t min_value) {
  if (!value.empty() && value[0] == '-') {
    throw ConfigError(key, fmt::format("{} must be at least {} (got {})", key, min_value, value));
  }
  return parse_integer<std::size_t>(key, value, min_value);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, fmt::format("{} must be a number (got '{}')", key, value));
  }
}

std::vector<double> parse_doubles(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& item : split_list(value)) out.push_back(parse_double(key, item));
  return out;
}

void apply_preset(RunConfig& c, const std::string& preset) {
  if (preset == "desk") {
    c.N = 50;
    c.M = 500;
    c.M_u = 500;
    c.runs = 100;
  } else if (preset == "paper") {
    c.N = 100;
    c.M = 2000;
    c.M_u = 2000;
    c.runs = 500;
  } else {
    throw ConfigError("preset", fmt::format("preset must be 'desk' or 'paper' (got '{}')", preset));
  }
  c.preset = preset;
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += fmt::format("{}{:.17g}", i ? "," : "", v[i]);
  return out;
}

// Opens `name` in the output directory and writes the metadata comment.
std::ofstream open_csv(const RunConfig& c, const std::string& name) {
  const fs::path path = fs::path(c.output_dir) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("output_dir", fmt::format("cannot write {}", path.string()));
  out << fmt::format("# seed={} config_hash={}\n", c.seed, hex64(config_hash(c)));
  return out;
}

std::string metadata(const RunConfig& c) {
  return fmt::format("seed={} config_hash={}", c.seed, hex64(config_hash(c)));
}

std::vector<double> case_params(const RunConfig& c, CaseId id, const InputSpace& space) {
  const PolicyTemplate tmpl{id};
  const auto it = c.params.find(id);
  if (it != c.params.end()) return it->second;
  if (tmpl.arity(space) == 0) return {};
  throw ConfigError("params." + to_string(id),
                    fmt::format("params.{} is required for this subcommand", to_string(id)));
}

struct NamedPolicy {
  std::string name;
  MarkovInputPolicy policy;
};

std::vector<NamedPolicy> fixed_policies(const RunConfig& c) {
  std::vector<NamedPolicy> out;
  if (!c.policy_file.empty()) {
    std::ifstream in(c.policy_file);
    if (!in) throw ConfigError("policy_file", fmt::format("cannot read {}", c.policy_file));
    try {
      out.push_back({"policy", read_policy(in)});
    } catch (const Error& e) {
      throw ConfigError("policy_file", e.what());
    }
    return out;
  }
  for (CaseId id : c.cases) {
    const DesignConfig d = design_config(c, id);
    out.push_back({to_string(id), policy_from_template(d.tmpl, d.space, case_params(c, id, d.space))});
  }
  return out;
}

std::string phi_cells(const std::vector<double>& phi, std::size_t width) {
  std::string out;
  for (std::size_t i = 0; i < width; ++i) {
    out += ',';
    if (i < phi.size()) out += fmt::format("{:.17g}", phi[i]);
  }
  return out;
}

std::string phi_header(std::size_t width) {
  std::string out;
  for (std::size_t i = 0; i < width; ++i) out += fmt::format(",phi_{}", i + 1);
  return out;
}

void write_policy_file(const RunConfig& c, const std::string& name, const MarkovInputPolicy& p) {
  std::ofstream out(fs::path(c.output_dir) / ("policy_" + name + ".txt"), std::ios::binary);
  out << "# " << metadata(c) << '\n';
  write_policy(out, p);
}

void run_design(const RunConfig& c, std::ostream& log) {
  std::vector<CaseResult> results;
  std::size_t width = 0;
  for (CaseId id : c.cases) {
    const DesignConfig d = design_config(c, id);
    width = std::max(width, d.tmpl.arity(d.space));
    log << fmt::format("design {}: N={} M={} M_u={}\n", to_string(id), c.N, c.M, c.M_u);
    DesignResult r = optimize(d);
    log << fmt::format("  phi* = [{}]  psi = {:.6g}  ({} evaluations, {:.1f} s)\n",
                       fmt_list(r.phi_star), r.objective.value, r.evaluations, r.wall_seconds);
    results.push_back(CaseResult{to_string(id), std::move(r)});
  }
  // Rank by objective (stable, so ties keep the configured order).
  std::vector<std::size_t> order(results.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return results[a].result.objective.value < results[b].result.objective.value;
  });
  std::vector<std::size_t> rank(results.size());
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i + 1;

  auto report = open_csv(c, "case_report.csv");
  report << "case" << phi_header(width) << ",psi_bar,std_error,rank,converged,evaluations\n";
  auto history = open_csv(c, "design_history.csv");
  history << "case,restart,evaluation" << phi_header(width) << ",objective,best\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& [name, r] = results[i];
    report << name << phi_cells(r.phi_star, width)
           << fmt::format(",{:.17g},{:.17g},{},{},{}\n", r.objective.value, r.objective.std_error,
                          rank[i], r.converged ? 1 : 0, r.evaluations);
    for (const HistoryEntry& h : r.history) {
      history << name << ',' << h.restart << ',' << h.evaluation << phi_cells(h.phi, width)
              << fmt::format(",{:.17g},{:.17g}\n", h.objective, h.best);
    }
    auto trace = open_csv(c, "bound_trace_" + name + ".csv");
    write_bound_csv(trace, r.objective.mean_bound, c.phi, "");
    write_policy_file(c, name, r.policy);
  }
}

void run_bound(const RunConfig& c, std::ostream& log) {
  auto summary = open_csv(c, "bound_summary.csv");
  summary << "case,psi_bar,std_error\n";
  for (const NamedPolicy& np : fixed_policies(c)) {
    DesignConfig d = design_config(c, c.cases.front());
    d.space = np.policy.space;
    const ObjectiveEstimate est = evaluate_policy(d, np.policy);
    log << fmt::format("bound {}: psi = {:.6g} +- {:.2g}\n", np.name, est.value, est.std_error);
    summary << fmt::format("{},{:.17g},{:.17g}\n", np.name, est.value, est.std_error);
    auto trace = open_csv(c, "bound_trace_" + np.name + ".csv");
    write_bound_csv(trace, est.mean_bound, c.phi, "");
  }
}

void run_validate(const RunConfig& c, std::ostream& log) {
  const GaussianSsm model = make_model(c.model);
  const Vector theta = Eigen::Map<const Vector>(c.theta_true.data(),
                                                static_cast<Eigen::Index>(c.theta_true.size()));
  ValidationSettings vs;
  vs.runs = c.runs;
  vs.N = c.N;
  vs.bound_samples = c.bound_M ? c.bound_M : c.M;
  vs.seed = c.seed;
  vs.threads = c.threads;
  auto summary = open_csv(c, "validation_summary.csv");
  summary << "case,sum_trace_mse,sum_trace_bound,violations,runs,degenerate\n";
  for (const NamedPolicy& np : fixed_policies(c)) {
    const ValidationReport rep = mse_experiment(model, theta, np.policy, vs, c.smc);
    log << fmt::format("validate {}: sum tr MSE = {:.6g}, sum tr bound = {:.6g}, violations {}/{}\n",
                       np.name, rep.sum_trace_mse, rep.sum_trace_bound, rep.violations, c.N);
    summary << fmt::format("{},{:.17g},{:.17g},{},{},{}\n", np.name, rep.sum_trace_mse,
                           rep.sum_trace_bound, rep.violations, rep.runs, rep.degenerate);
    auto trace = open_csv(c, "mse_trace_" + np.name + ".csv");
    trace << "t,trace_mse,trace_bound\n";
    for (std::size_t t = 0; t < rep.trace_mse.size(); ++t) {
      trace << fmt::format("{},{:.17g},{:.17g}\n", t + 1, rep.trace_mse[t], rep.trace_bound[t]);
    }
  }
}

void run_oracle(const RunConfig& c, std::ostream& log) {
  auto out = open_csv(c, "oracle_report.csv");
  out << "check,value,reference,abs_diff,tolerance,pass\n";
  std::size_t failures = 0;
  auto row = [&](const std::string& name, double value, double ref, double tol) {
    const double diff = std::abs(value - ref);
    const bool pass = diff <= tol;
    if (!pass) ++failures;
    out << fmt::format("{},{:.17g},{:.17g},{:.6e},{:.6e},{}\n", name, value, ref, diff, tol,
                       pass ? 1 : 0);
  };

  // Information recursion against the Kalman filter on the linear model.
  {
    const GaussianSsm bias = make_model("bias");
    const InputSpace space = build_input_space(c.u_min, c.u_max, c.b, 1, 0);
    const MarkovInputPolicy prbs = policy_from_template(PolicyTemplate{CaseId::kFree}, space,
                                                        std::vector<double>(PolicyTemplate{CaseId::kFree}.arity(space), 1.0));
    const Matrix inputs = sample_sequence(prbs, c.N, CounterRng(c.seed, 0));
    const BoundTrajectory traj = bound_trajectory(bias, inputs, 100, PhiKind::kTrace, CounterRng(c.seed, 0));
    const auto kf = kalman_extended(bias, inputs);
    double worst = 0.0;
    for (std::size_t t = 0; t < kf.size(); ++t) {
      const double ref = kf[t].cov(1, 1);
      worst = std::max(worst, std::abs(traj.Ltheta[t](0, 0) - ref) / ref);
    }
    row("kalman_L_theta_1", traj.Ltheta[0](0, 0), kf[0].cov(1, 1), 1e-8 * kf[0].cov(1, 1));
    row("kalman_max_rel_err", worst, 0.0, 1e-8);
  }

  // H-blocks against finite-difference Hessians at t = 0.
  {
    const GaussianSsm model = make_model(c.model);
    const CounterRng rng(c.seed, 0);
    Matrix x, theta, x_next, y;
    sample_prior_into(model, c.fd_samples, rng, x, theta);
    const Vector u = Vector::Constant(model.p(), c.u_max);
    propagate_states(model, x, theta, u, state_noise_table(rng, model.n(), 1, 0, c.fd_samples), x_next);
    measure_states(model, x_next, theta, u, measurement_noise_table(rng, model.m(), 1, 0, c.fd_samples), y);
    const HBlocks h = estimate_h_blocks(model, x, theta, x_next, u, u);
    const FdHBlocks fd = fd_h_blocks(model, x, theta, x_next, y, u, u);
    auto compare = [&](const char* name, const Matrix& a, const Matrix& b, const Matrix& se) {
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
          row(fmt::format("fd_{}_{}_{}", name, i + 1, j + 1), a(i, j), b(i, j),
              5.0 * se(i, j) + 1e-6 * (1.0 + std::abs(b(i, j))));
        }
      }
    };
    compare("H11", h.H11, fd.mean.H11, fd.std_error.H11);
    compare("H12", h.H12, fd.mean.H12, fd.std_error.H12);
    compare("H13", h.H13, fd.mean.H13, fd.std_error.H13);
    compare("H22", h.H22, fd.mean.H22, fd.std_error.H22);
    compare("H23", h.H23, fd.mean.H23, fd.std_error.H23);
    compare("H33", h.H33, fd.mean.H33, fd.std_error.H33);
  }

  // Monte-Carlo objective against exact enumeration at N = 2.
  if (c.phi == PhiKind::kTrace) {
    for (CaseId id : c.cases) {
      DesignConfig d = design_config(c, id);
      if (d.space.k + 1 > 2) continue;
      d.N = 2;
      d.M = c.enum_M;
      d.M_u = c.enum_paths;
      const auto pit = c.params.find(id);
      const std::vector<double> phi =
          pit != c.params.end() ? pit->second : std::vector<double>(d.tmpl.arity(d.space), 0.5);
      const ObjectiveEstimate mc = evaluate_objective(d, phi);
      const EnumerationResult ex = enumerate_objective(d, phi, c.enum_groups);
      row("enumeration_" + to_string(id), mc.value, ex.value,
          5.0 * std::hypot(mc.std_error, ex.std_error));
    }
  }
  log << fmt::format("oracle: {} check(s) failed\n", failures);
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const ConfigOverrides& overrides) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", fmt::format("line {}: expected 'key = value'", line_no));
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "case") key = "cases";
    if (kv.count(key)) throw ConfigError(key, fmt::format("{} is given twice", key));
    kv[key] = value;
  }

  RunConfig c;
  std::string preset = overrides.preset.value_or(kv.count("preset") ? kv["preset"] : "desk");
  apply_preset(c, preset);

  static const std::set<std::string> known = {
      "model", "cases", "preset", "seed", "output_dir", "threads", "phi", "N", "M", "M_u", "runs",
      "input.u_min", "input.u_max", "input.b", "input.k", "optimizer.max_iterations",
      "optimizer.restarts", "optimizer.tolerance", "optimizer.patience", "optimizer.initial_step",
      "smc.particles", "smc.threshold", "smc.shrinkage", "validate.theta_true", "validate.bound_M",
      "policy_file", "oracle.fd_samples", "oracle.enum_groups", "oracle.enum_paths", "oracle.enum_M"};
  for (const auto& [key, value] : kv) {
    if (key.rfind("params.", 0) == 0) {
      CaseId id;
      try {
        id = case_from_string(key.substr(7));
      } catch (const Error&) {
        throw ConfigError(key, fmt::format("unknown key '{}'", key));
      }
      c.params[id] = parse_doubles(key, value);
      continue;
    }
    if (!known.count(key)) throw ConfigError(key, fmt::format("unknown key '{}'", key));
    if (value.empty()) throw ConfigError(key, fmt::format("{} has no value", key));
  }

  auto get = [&](const std::string& key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto v = get("model")) c.model = *v;
  if (auto v = get("cases")) {
    c.cases.clear();
    for (const auto& name : split_list(*v)) {
      try {
        c.cases.push_back(case_from_string(name));
      } catch (const Error& e) {
        throw ConfigError("cases", e.what());
      }
    }
    if (c.cases.empty()) throw ConfigError("cases", "cases lists no case");
  }
  if (auto v = get("seed")) c.seed = parse_integer<std::uint64_t>("seed", *v, 0);
  if (auto v = get("output_dir")) c.output_dir = *v;
  if (auto v = get("threads")) c.threads = parse_integer<int>("threads", *v, 1);
  if (auto v = get("phi")) {
    try {
      c.phi = phi_from_string(*v);
    } catch (const Error& e) {
      throw ConfigError("phi", e.what());
    }
  }
  if (auto v = get("N")) c.N = parse_size("N", *v, 1);
  if (auto v = get("M")) c.M = parse_size("M", *v, 2);
  if (auto v = get("M_u")) c.M_u = parse_size("M_u", *v, 1);
  if (auto v = get("runs")) c.runs = parse_size("runs", *v, 2);
  if (auto v = get("input.u_min")) c.u_min = parse_double("input.u_min", *v);
  if (auto v = get("input.u_max")) c.u_max = parse_double("input.u_max", *v);
  if (auto v = get("input.b")) c.b = parse_integer<int>("input.b", *v, 2);
  if (auto v = get("input.k")) c.k = parse_integer<int>("input.k", *v, 0);
  if (auto v = get("optimizer.max_iterations")) {
    c.optimizer.max_iterations = parse_integer<int>("optimizer.max_iterations", *v, 1);
  }
  if (auto v = get("optimizer.restarts")) {
    c.optimizer.restarts = parse_integer<int>("optimizer.restarts", *v, 1);
    if (c.optimizer.restarts > 3) throw ConfigError("optimizer.restarts", "optimizer.restarts must be at most 3");
  }
  if (auto v = get("optimizer.tolerance")) {
    c.optimizer.tolerance = parse_double("optimizer.tolerance", *v);
    if (c.optimizer.tolerance < 0) throw ConfigError("optimizer.tolerance", "optimizer.tolerance must be nonnegative");
  }
  if (auto v = get("optimizer.patience")) c.optimizer.patience = parse_integer<int>("optimizer.patience", *v, 1);
  if (auto v = get("optimizer.initial_step")) {
    c.optimizer.initial_step = parse_double("optimizer.initial_step", *v);
    if (c.optimizer.initial_step <= 0) throw ConfigError("optimizer.initial_step", "optimizer.initial_step must be positive");
  }
  if (auto v = get("smc.particles")) c.smc.particles = parse_size("smc.particles", *v, 100);
  if (auto v = get("smc.threshold")) c.smc.threshold = parse_double("smc.threshold", *v);
  if (auto v = get("smc.shrinkage")) c.smc.shrinkage = parse_double("smc.shrinkage", *v);
  if (auto v = get("validate.theta_true")) c.theta_true = parse_doubles("validate.theta_true", *v);
  if (auto v = get("validate.bound_M")) c.bound_M = parse_size("validate.bound_M", *v, 2);
  if (auto v = get("policy_file")) c.policy_file = *v;
  if (auto v = get("oracle.fd_samples")) c.fd_samples = parse_size("oracle.fd_samples", *v, 2);
  if (auto v = get("oracle.enum_groups")) c.enum_groups = parse_size("oracle.enum_groups", *v, 2);
  if (auto v = get("oracle.enum_paths")) c.enum_paths = parse_size("oracle.enum_paths", *v, 2);
  if (auto v = get("oracle.enum_M")) c.enum_M = parse_size("oracle.enum_M", *v, 2);

  if (overrides.seed) c.seed = *overrides.seed;
  if (overrides.output_dir) c.output_dir = *overrides.output_dir;
  if (overrides.threads) {
    if (*overrides.threads < 1) throw ConfigError("threads", "threads must be at least 1");
    c.threads = *overrides.threads;
  }

  // Cross-field checks.
  GaussianSsm model = [&] {
    try {
      return make_model(c.model);
    } catch (const Error& e) {
      throw ConfigError("model", e.what());
    }
  }();
  if (!(c.u_min < c.u_max)) throw ConfigError("input.u_min", "input.u_min must be below input.u_max");
  InputSpace space;
  try {
    space = build_input_space(c.u_min, c.u_max, c.b, model.p(), c.k);
  } catch (const Error& e) {
    throw ConfigError("input.k", e.what());
  }
  if (c.N < static_cast<std::size_t>(c.k) + 1) throw ConfigError("N", "N must be at least input.k + 1");
  try {
    validate(c.smc);
  } catch (const Error& e) {
    const std::string what = e.what();
    const std::string key = what.substr(0, what.find(' '));
    throw ConfigError(key, what);
  }
  if (c.theta_true.size() != static_cast<std::size_t>(model.q())) {
    throw ConfigError("validate.theta_true",
                      fmt::format("validate.theta_true needs {} values", model.q()));
  }
  for (const auto& [id, phi] : c.params) {
    const std::string key = "params." + to_string(id);
    try {
      policy_from_template(PolicyTemplate{id}, space, phi);
    } catch (const Error& e) {
      throw ConfigError(key, fmt::format("{}: {}", key, e.what()));
    }
  }
  return c;
}

RunConfig parse_config(const std::string& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", fmt::format("cannot read config file '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), overrides);
}

std::string canonical_config(const RunConfig& c) {
  std::string out;
  auto add = [&out](const std::string& key, const std::string& value) {
    out += key + '=' + value + '\n';
  };
  add("model", c.model);
  std::string cases;
  for (CaseId id : c.cases) cases += (cases.empty() ? "" : ",") + to_string(id);
  add("cases", cases);
  add("N", std::to_string(c.N));
  add("M", std::to_string(c.M));
  add("M_u", std::to_string(c.M_u));
  add("runs", std::to_string(c.runs));
  add("phi", to_string(c.phi));
  add("seed", std::to_string(c.seed));
  add("input", fmt::format("{:.17g},{:.17g},{},{}", c.u_min, c.u_max, c.b, c.k));
  add("optimizer", fmt::format("{},{},{:.17g},{},{:.17g}", c.optimizer.max_iterations,
                               c.optimizer.restarts, c.optimizer.tolerance, c.optimizer.patience,
                               c.optimizer.initial_step));
  add("smc", fmt::format("{},{:.17g},{:.17g}", c.smc.particles, c.smc.threshold, c.smc.shrinkage));
  add("theta_true", fmt_list(c.theta_true));
  add("bound_M", std::to_string(c.bound_M));
  for (const auto& [id, phi] : c.params) add("params." + to_string(id), fmt_list(phi));
  add("policy_file", c.policy_file);
  add("oracle", fmt::format("{},{},{},{}", c.fd_samples, c.enum_groups, c.enum_paths, c.enum_M));
  return out;
}

std::uint64_t config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

DesignConfig design_config(const RunConfig& c, CaseId id) {
  DesignConfig d;
  d.model = make_model(c.model);
  d.space = build_input_space(c.u_min, c.u_max, c.b, d.model.p(), c.k);
  d.tmpl = PolicyTemplate{id};
  d.N = c.N;
  d.M = c.M;
  d.M_u = c.M_u;
  d.phi = c.phi;
  d.seed = c.seed;
  d.optimizer = c.optimizer;
  d.threads = c.threads;
  return d;
}

int run_command(const std::string& subcommand, const RunConfig& config, std::ostream& log) {
  try {
    std::error_code ec;
    fs::create_directories(config.output_dir, ec);
    if (ec) {
      throw ConfigError("output_dir",
                        fmt::format("cannot create output directory '{}': {}", config.output_dir,
                                    ec.message()));
    }
    if (subcommand == "design") {
      run_design(config, log);
    } else if (subcommand == "bound") {
      run_bound(config, log);
    } else if (subcommand == "validate") {
      run_validate(config, log);
    } else if (subcommand == "oracle") {
      run_oracle(config, log);
    } else {
      throw ConfigError("subcommand", fmt::format("unknown subcommand '{}'", subcommand));
    }
    return 0;
  } catch (const ConfigError& e) {
    log << "config error";
    if (!e.field().empty()) log << " [" << e.field() << "]";
    log << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    log << "numerical failure: " << e.what() << '\n';
    std::ofstream diag(fs::path(config.output_dir) / "diagnostic.txt", std::ios::binary);
    diag << "subcommand: " << subcommand << '\n' << metadata(config) << '\n';
    if (auto* sd = dynamic_cast<const SimulationDivergence*>(&e)) {
      diag << "path: " << sd->path() << "\ntime: " << sd->time() << '\n';
    } else if (auto* bd = dynamic_cast<const BoundDegeneracy*>(&e)) {
      diag << "eigenvalue: " << fmt::format("{:.17g}", bd->eigenvalue()) << '\n';
    } else if (auto* de = dynamic_cast<const DegeneracyError*>(&e)) {
      diag << "time: " << de->time() << '\n';
    }
    diag << "error: " << e.what() << '\n';
    diag << "config:\n" << canonical_config(config);
    return 2;
  }
}

}  // namespace bidesign
