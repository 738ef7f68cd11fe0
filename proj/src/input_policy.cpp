#include "bidesign/input_policy.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "bidesign/errors.hpp"

namespace bidesign {

namespace {

constexpr double kSumTolerance = 1e-12;

std::size_t ipow(std::size_t base, int exp) {
  std::size_t out = 1;
  for (int i = 0; i < exp; ++i) out *= base;
  return out;
}

// Smallest index whose cumulative probability exceeds `u`; zero-probability
// entries are never selected.
std::size_t inverse_cdf(const double* probs, std::size_t count, std::size_t stride, double u) {
  double cum = 0.0;
  std::size_t last = count;
  for (std::size_t i = 0; i < count; ++i) {
    const double pr = probs[i * stride];
    if (pr <= 0.0) continue;
    last = i;
    cum += pr;
    if (u < cum) return i;
  }
  // Round-off left u above the total; take the last supported entry.
  return last;
}

double check_unit(double v, std::size_t i) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ParameterError(fmt::format("parameter {} = {} is outside [0, 1]", i + 1, v));
  }
  return v;
}

}  // namespace

std::size_t InputSpace::windows() const { return ipow(static_cast<std::size_t>(r()), k + 1); }

std::vector<int> InputSpace::window_symbols(std::size_t w) const {
  std::vector<int> out(static_cast<std::size_t>(k + 1));
  const auto rr = static_cast<std::size_t>(r());
  for (int i = k; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = static_cast<int>(w % rr);
    w /= rr;
  }
  return out;
}

std::size_t InputSpace::window_index(const std::vector<int>& symbols) const {
  std::size_t w = 0;
  for (int s : symbols) w = w * static_cast<std::size_t>(r()) + static_cast<std::size_t>(s);
  return w;
}

bool InputSpace::consistent(std::size_t source, std::size_t target) const {
  if (k == 0) return true;
  const std::size_t tail = ipow(static_cast<std::size_t>(r()), k);
  return (source % tail) == (target / static_cast<std::size_t>(r()));
}

int InputSpace::symbol_of(const Eigen::Ref<const Eigen::VectorXd>& u) const {
  if (u.size() != p) throw EncodingError("input dimension does not match the input space");
  int symbol = 0;
  for (int d = 0; d < p; ++d) {
    const double span = u_max(d) - u_min(d);
    const double pos = (u(d) - u_min(d)) / span * (b - 1);
    const double level = std::round(pos);
    if (!(std::abs(pos - level) <= 1e-9) || level < 0 || level > b - 1) {
      throw EncodingError(fmt::format("input {} in dimension {} is not a grid level", u(d), d + 1));
    }
    symbol = symbol * b + static_cast<int>(level);
  }
  return symbol;
}

InputSpace build_input_space(const Eigen::VectorXd& u_min, const Eigen::VectorXd& u_max, int b,
                             int p, int k, std::size_t capacity) {
  if (p < 1) throw ParameterError("input dimension p must be at least 1");
  if (u_min.size() != p || u_max.size() != p) {
    throw ParameterError("u_min and u_max must have one entry per input dimension");
  }
  if (b < 2) throw ParameterError("b must be at least 2");
  if (k < 0) throw ParameterError("memory order k must be nonnegative");
  for (int d = 0; d < p; ++d) {
    if (!(u_min(d) < u_max(d))) throw ParameterError("u_min must be below u_max");
  }
  // Overflow-safe r^{k+1} against the cap.
  std::size_t states = 1;
  for (int i = 0; i < p * (k + 1); ++i) {
    states *= static_cast<std::size_t>(b);
    if (states > capacity) {
      throw CapacityError(fmt::format(
          "b^(p(k+1)) chain states exceed the capacity {} (b={}, p={}, k={})", capacity, b, p, k));
    }
  }

  InputSpace space;
  space.p = p;
  space.b = b;
  space.k = k;
  space.u_min = u_min;
  space.u_max = u_max;
  const auto r = static_cast<Eigen::Index>(ipow(static_cast<std::size_t>(b), p));
  space.grid.resize(p, r);
  for (Eigen::Index s = 0; s < r; ++s) {
    Eigen::Index rest = s;
    for (int d = p - 1; d >= 0; --d) {
      const Eigen::Index level = rest % b;
      rest /= b;
      space.grid(d, s) = (level == b - 1)
                             ? u_max(d)
                             : u_min(d) + (u_max(d) - u_min(d)) * static_cast<double>(level) / (b - 1);
    }
  }
  return space;
}

InputSpace build_input_space(double u_min, double u_max, int b, int p, int k, std::size_t capacity) {
  return build_input_space(Eigen::VectorXd::Constant(p, u_min), Eigen::VectorXd::Constant(p, u_max),
                           b, p, k, capacity);
}

MarkovInputPolicy make_policy(InputSpace space, Eigen::VectorXd P_gamma, Eigen::MatrixXd P_pi,
                              bool repair, std::vector<std::string>* warnings) {
  const auto W = static_cast<Eigen::Index>(space.windows());
  if (P_gamma.size() != W || P_pi.rows() != W || P_pi.cols() != W) {
    throw StructuralError(fmt::format("policy matrices must have {} window states", W));
  }
  auto check_entries = [](const auto& values, const char* what) {
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      const double v = values.data()[i];
      if (!(v >= 0.0 && v <= 1.0)) {
        throw StructuralError(fmt::format("{} has an entry {} outside [0, 1]", what, v));
      }
    }
  };
  check_entries(P_gamma, "P_gamma");
  check_entries(P_pi, "P_pi");
  if (std::abs(P_gamma.sum() - 1.0) > kSumTolerance) {
    throw StructuralError(fmt::format("P_gamma sums to {:.17g}, not 1", P_gamma.sum()));
  }
  // Overlap consistency of the initial window is automatic; only P_pi is constrained.
  for (Eigen::Index i = 0; i < W; ++i) {
    double dropped = 0.0;
    for (Eigen::Index j = 0; j < W; ++j) {
      if (!space.consistent(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) &&
          P_pi(i, j) != 0.0) {
        if (!repair) {
          throw StructuralError(fmt::format(
              "P_pi({}, {}) = {} moves between windows that do not overlap", i, j, P_pi(i, j)));
        }
        dropped += P_pi(i, j);
        P_pi(i, j) = 0.0;
      }
    }
    if (dropped > 0.0) {
      const double rest = P_pi.row(i).sum();
      if (rest <= 0.0) {
        throw StructuralError(fmt::format("row {} of P_pi has no mass on overlapping windows", i));
      }
      P_pi.row(i) /= rest;
      if (warnings) {
        warnings->push_back(fmt::format(
            "P_pi row {}: dropped mass {:.6g} on non-overlapping windows and renormalized", i,
            dropped));
      }
    }
    const double sum = P_pi.row(i).sum();
    if (std::abs(sum - 1.0) > kSumTolerance) {
      throw StructuralError(fmt::format("row {} of P_pi sums to {:.17g}, not 1", i, sum));
    }
  }
  return MarkovInputPolicy{std::move(space), std::move(P_gamma), std::move(P_pi)};
}

std::string to_string(CaseId id) {
  switch (id) {
    case CaseId::kCase1: return "Case1";
    case CaseId::kCase2: return "Case2";
    case CaseId::kCase3: return "Case3";
    case CaseId::kCase4: return "Case4";
    case CaseId::kFree: return "Free";
  }
  return "?";
}

CaseId case_from_string(const std::string& name) {
  for (CaseId id : {CaseId::kCase1, CaseId::kCase2, CaseId::kCase3, CaseId::kCase4, CaseId::kFree}) {
    if (to_string(id) == name) return id;
  }
  throw ParameterError(fmt::format("unknown case '{}' (expected Case1..Case4 or Free)", name));
}

std::size_t PolicyTemplate::arity(const InputSpace& space) const {
  switch (id) {
    case CaseId::kCase1: return 1;
    case CaseId::kCase2: return 2;
    case CaseId::kCase3: return 3;
    case CaseId::kCase4: return 0;
    case CaseId::kFree: return space.windows() * (1 + static_cast<std::size_t>(space.r()));
  }
  return 0;
}

std::size_t free_entry_count(const InputSpace& space) {
  const std::size_t W = space.windows();
  return W * (1 + W);
}

MarkovInputPolicy policy_from_template(const PolicyTemplate& tmpl, const InputSpace& space,
                                       const std::vector<double>& phi) {
  const std::size_t d = tmpl.arity(space);
  if (phi.size() != d) {
    throw ParameterError(
        fmt::format("{} takes {} parameters, got {}", tmpl.name(), d, phi.size()));
  }
  for (std::size_t i = 0; i < phi.size(); ++i) check_unit(phi[i], i);

  if (tmpl.id == CaseId::kFree) {
    const auto W = static_cast<Eigen::Index>(space.windows());
    const int r = space.r();
    Eigen::VectorXd gamma(W);
    Eigen::MatrixXd pi = Eigen::MatrixXd::Zero(W, W);
    auto normalize = [](Eigen::VectorXd v) {
      const double s = v.sum();
      if (s > 0.0) return Eigen::VectorXd(v / s);
      return Eigen::VectorXd(Eigen::VectorXd::Constant(v.size(), 1.0 / static_cast<double>(v.size())));
    };
    for (Eigen::Index w = 0; w < W; ++w) gamma(w) = phi[static_cast<std::size_t>(w)];
    gamma = normalize(gamma);
    std::size_t next = static_cast<std::size_t>(W);
    const auto rr = static_cast<std::size_t>(r);
    for (Eigen::Index i = 0; i < W; ++i) {
      Eigen::VectorXd weights(r);
      for (int s = 0; s < r; ++s) weights(s) = phi[next++];
      weights = normalize(weights);
      // Consistent targets of window i: (tail of i) followed by each symbol.
      const std::size_t tail = (space.k == 0) ? 0 : static_cast<std::size_t>(i) % (space.windows() / rr);
      for (int s = 0; s < r; ++s) {
        pi(i, static_cast<Eigen::Index>(tail * rr + static_cast<std::size_t>(s))) = weights(s);
      }
    }
    return make_policy(space, std::move(gamma), std::move(pi));
  }

  if (space.b != 2 || space.p != 1 || space.k != 0) {
    throw ParameterError(fmt::format("{} needs a binary scalar input space with k = 0 (b=2, p=1)",
                                     tmpl.name()));
  }
  Eigen::VectorXd gamma(2);
  Eigen::MatrixXd pi(2, 2);
  switch (tmpl.id) {
    case CaseId::kCase1:
      gamma << phi[0], 1.0 - phi[0];
      pi << phi[0], 1.0 - phi[0], 1.0 - phi[0], phi[0];
      break;
    case CaseId::kCase2:
      gamma << phi[0], 1.0 - phi[0];
      pi << phi[0], 1.0 - phi[0], 1.0 - phi[1], phi[1];
      break;
    case CaseId::kCase3:
      gamma << phi[0], 1.0 - phi[0];
      pi << phi[1], 1.0 - phi[1], 1.0 - phi[2], phi[2];
      break;
    default:
      gamma.setConstant(0.5);
      pi.setConstant(0.5);
      break;
  }
  return make_policy(space, std::move(gamma), std::move(pi));
}

std::vector<std::size_t> sample_windows(const MarkovInputPolicy& policy, std::size_t N,
                                        const CounterRng& rng) {
  const auto k = static_cast<std::size_t>(policy.space.k);
  if (N < k + 1) throw ParameterError(fmt::format("sequence length {} is below k + 1", N));
  const std::size_t W = policy.space.windows();
  const std::uint64_t key = rng.key(Stream::kInputPath, 0, 0);
  std::vector<std::size_t> path(N - k);
  path[0] = inverse_cdf(policy.P_gamma.data(), W, 1, CounterRng::uniform(key, 0));
  if (path[0] >= W) throw StructuralError("P_gamma has no mass");
  const auto stride = static_cast<std::size_t>(policy.P_pi.rows());
  for (std::size_t t = 1; t < path.size(); ++t) {
    const double* row = policy.P_pi.data() + path[t - 1];  // column-major: row i, stride rows
    const std::size_t next = inverse_cdf(row, W, stride, CounterRng::uniform(key, t));
    if (next >= W || !policy.space.consistent(path[t - 1], next)) {
      throw StructuralError(fmt::format("transition from window {} is not overlap consistent",
                                        path[t - 1]));
    }
    path[t] = next;
  }
  return path;
}

std::vector<int> decode_windows(const InputSpace& space, const std::vector<std::size_t>& windows) {
  std::vector<int> symbols;
  if (windows.empty()) return symbols;
  symbols = space.window_symbols(windows[0]);
  const auto r = static_cast<std::size_t>(space.r());
  for (std::size_t t = 1; t < windows.size(); ++t) {
    symbols.push_back(static_cast<int>(windows[t] % r));
  }
  return symbols;
}

Eigen::MatrixXd symbols_to_inputs(const InputSpace& space, const std::vector<int>& symbols) {
  Eigen::MatrixXd u(space.p, static_cast<Eigen::Index>(symbols.size()));
  for (std::size_t t = 0; t < symbols.size(); ++t) {
    u.col(static_cast<Eigen::Index>(t)) = space.grid.col(symbols[t]);
  }
  return u;
}

std::vector<int> inputs_to_symbols(const InputSpace& space, const Eigen::MatrixXd& inputs) {
  std::vector<int> symbols(static_cast<std::size_t>(inputs.cols()));
  for (Eigen::Index t = 0; t < inputs.cols(); ++t) {
    symbols[static_cast<std::size_t>(t)] = space.symbol_of(inputs.col(t));
  }
  return symbols;
}

Eigen::MatrixXd sample_sequence(const MarkovInputPolicy& policy, std::size_t N,
                                const CounterRng& rng) {
  return symbols_to_inputs(policy.space, decode_windows(policy.space, sample_windows(policy, N, rng)));
}

double symbols_log_prob(const MarkovInputPolicy& policy, const std::vector<int>& symbols) {
  const InputSpace& space = policy.space;
  const auto k = static_cast<std::size_t>(space.k);
  if (symbols.size() < k + 1) {
    throw ParameterError(fmt::format("sequence length {} is below k + 1", symbols.size()));
  }
  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<int> window(symbols.begin(), symbols.begin() + static_cast<long>(k + 1));
  std::size_t w = space.window_index(window);
  const double g = policy.P_gamma(static_cast<Eigen::Index>(w));
  if (g <= 0.0) return neg_inf;
  double lp = std::log(g);
  const std::size_t W = space.windows();
  const auto r = static_cast<std::size_t>(space.r());
  for (std::size_t t = k + 1; t < symbols.size(); ++t) {
    const std::size_t next = (w * r) % W + static_cast<std::size_t>(symbols[t]);
    const double pr = policy.P_pi(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(next));
    if (pr <= 0.0) return neg_inf;
    lp += std::log(pr);
    w = next;
  }
  return lp;
}

double sequence_log_prob(const MarkovInputPolicy& policy, const Eigen::MatrixXd& inputs) {
  return symbols_log_prob(policy, inputs_to_symbols(policy.space, inputs));
}

void write_policy(std::ostream& out, const MarkovInputPolicy& policy) {
  const InputSpace& s = policy.space;
  auto row = [&out](const char* tag, const auto& values) {
    out << tag;
    for (Eigen::Index i = 0; i < values.size(); ++i) out << fmt::format(" {:.17g}", values(i));
    out << '\n';
  };
  out << "b " << s.b << '\n' << "p " << s.p << '\n' << "k " << s.k << '\n';
  row("u_min", s.u_min);
  row("u_max", s.u_max);
  for (int d = 0; d < s.p; ++d) {
    // Levels of dimension d, in increasing order.
    Eigen::VectorXd levels(s.b);
    for (int l = 0; l < s.b; ++l) {
      levels(l) = (l == s.b - 1) ? s.u_max(d)
                                 : s.u_min(d) + (s.u_max(d) - s.u_min(d)) * l / (s.b - 1);
    }
    row("levels", levels);
  }
  row("gamma", policy.P_gamma);
  for (Eigen::Index i = 0; i < policy.P_pi.rows(); ++i) {
    row("pi", Eigen::VectorXd(policy.P_pi.row(i).transpose()));
  }
}

MarkovInputPolicy read_policy(std::istream& in) {
  std::map<std::string, std::vector<std::vector<double>>> fields;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    std::vector<double> values;
    std::string token;
    while (ls >> token) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw StructuralError(fmt::format("policy file: '{}' is not a number", token));
      }
    }
    fields[tag].push_back(std::move(values));
  }
  auto scalar = [&](const std::string& tag) {
    auto it = fields.find(tag);
    if (it == fields.end() || it->second.size() != 1 || it->second[0].size() != 1) {
      throw StructuralError(fmt::format("policy file: expected one '{}' value", tag));
    }
    return static_cast<int>(it->second[0][0]);
  };
  auto vec = [&](const std::string& tag) {
    auto it = fields.find(tag);
    if (it == fields.end() || it->second.size() != 1) {
      throw StructuralError(fmt::format("policy file: expected one '{}' line", tag));
    }
    return Eigen::Map<const Eigen::VectorXd>(it->second[0].data(),
                                             static_cast<Eigen::Index>(it->second[0].size()))
        .eval();
  };
  const int b = scalar("b"), p = scalar("p"), k = scalar("k");
  InputSpace space = build_input_space(vec("u_min"), vec("u_max"), b, p, k);
  const auto levels = fields["levels"];
  if (levels.size() != static_cast<std::size_t>(p)) {
    throw StructuralError("policy file: expected one 'levels' line per input dimension");
  }
  for (int d = 0; d < p; ++d) {
    if (levels[static_cast<std::size_t>(d)].size() != static_cast<std::size_t>(b)) {
      throw StructuralError("policy file: 'levels' line has the wrong length");
    }
    for (int l = 0; l < b; ++l) {
      Eigen::VectorXd probe = space.grid.col(0);
      probe(d) = levels[static_cast<std::size_t>(d)][static_cast<std::size_t>(l)];
      if (space.symbol_of(probe) < 0) throw StructuralError("policy file: bad levels");
    }
  }
  const Eigen::VectorXd gamma = vec("gamma");
  const auto rows = fields["pi"];
  const auto W = static_cast<Eigen::Index>(space.windows());
  if (static_cast<Eigen::Index>(rows.size()) != W) {
    throw StructuralError(fmt::format("policy file: expected {} 'pi' lines", W));
  }
  Eigen::MatrixXd pi(W, W);
  for (Eigen::Index i = 0; i < W; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(r.size()) != W) {
      throw StructuralError(fmt::format("policy file: 'pi' line {} has the wrong length", i + 1));
    }
    for (Eigen::Index j = 0; j < W; ++j) pi(i, j) = r[static_cast<std::size_t>(j)];
  }
  return make_policy(std::move(space), gamma, std::move(pi));
}

}  // namespace bidesign
