#pragma once

// Discretized input space and Markov-chain input policies.
//
// The input space U is the Cartesian product of b equispaced levels per input
// dimension (endpoints included), so r = b^p grid points. A chain state is a
// window of k + 1 consecutive grid points; windows are enumerated
// lexicographically with the oldest input most significant, and grid points
// likewise with the first input dimension most significant.
//
// A transition from window (s_1 .. s_{k+1}) may only go to a window of the form
// (s_2 .. s_{k+1}, s_new); every transition therefore appends exactly one input.

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bidesign/random.hpp"

namespace bidesign {

struct InputSpace {
  int p = 1;
  int b = 2;
  int k = 0;
  Eigen::VectorXd u_min;
  Eigen::VectorXd u_max;
  Eigen::MatrixXd grid;  ///< p x r, column s is grid point s

  int r() const { return static_cast<int>(grid.cols()); }
  /// r^{k+1}
  std::size_t windows() const;
  /// Grid symbols of window `w`, oldest first.
  std::vector<int> window_symbols(std::size_t w) const;
  std::size_t window_index(const std::vector<int>& symbols) const;
  /// True when `target` is `source` shifted by one input.
  bool consistent(std::size_t source, std::size_t target) const;
  /// Grid symbol of `u`; EncodingError when `u` is not a grid point.
  int symbol_of(const Eigen::Ref<const Eigen::VectorXd>& u) const;
};

InputSpace build_input_space(const Eigen::VectorXd& u_min, const Eigen::VectorXd& u_max, int b,
                             int p, int k, std::size_t capacity = 4096);

/// Scalar convenience: the same bounds in every dimension.
InputSpace build_input_space(double u_min, double u_max, int b, int p, int k,
                             std::size_t capacity = 4096);

struct MarkovInputPolicy {
  InputSpace space;
  Eigen::VectorXd P_gamma;  ///< initial window distribution
  Eigen::MatrixXd P_pi;     ///< row-stochastic window transitions
};

/// Checks the stochastic and overlap structure. With `repair`, mass on
/// transitions that break the overlap is dropped and the row renormalized; a
/// message per repaired row is appended to `warnings` (when given). Otherwise
/// any violation raises StructuralError.
MarkovInputPolicy make_policy(InputSpace space, Eigen::VectorXd P_gamma, Eigen::MatrixXd P_pi,
                              bool repair = false, std::vector<std::string>* warnings = nullptr);

enum class CaseId { kCase1, kCase2, kCase3, kCase4, kFree };

std::string to_string(CaseId id);
CaseId case_from_string(const std::string& name);

/// Maps free parameters phi in [0, 1]^d to a policy.
///
/// Case1..Case4 are the tied binary templates (b = 2, p = 1, k = 0):
///   Case1  phi = (p1):          P_gamma = [p1, 1-p1], P_pi = [[p1, 1-p1], [1-p1, p1]]
///   Case2  phi = (p1, p2):      P_gamma = [p1, 1-p1], P_pi = [[p1, 1-p1], [1-p2, p2]]
///   Case3  phi = (p0, p1, p2):  P_gamma = [p0, 1-p0], P_pi as Case2
///   Case4  phi = ():            every entry 1/2
/// Free is the untied template on any space: one nonnegative weight per
/// window for P_gamma, then, row by row, one weight per consistent target
/// (r per row); each group is normalized to sum to one (all zero means uniform).
struct PolicyTemplate {
  CaseId id = CaseId::kCase4;

  std::size_t arity(const InputSpace& space) const;
  std::string name() const { return to_string(id); }
};

MarkovInputPolicy policy_from_template(const PolicyTemplate& tmpl, const InputSpace& space,
                                       const std::vector<double>& phi);

/// Number of (P_gamma, P_pi) entries of an untied policy: r^{k+1} (1 + r^{k+1}).
std::size_t free_entry_count(const InputSpace& space);

/// Window-state path of length N - k. The first window is drawn from P_gamma by
/// inverse CDF of uniform (Stream::kInputPath, 0, 0), transition t of the
/// uniform (Stream::kInputPath, 0, t), so a change of the policy moves the
/// path only where the inverse CDF crosses a level.
std::vector<std::size_t> sample_windows(const MarkovInputPolicy& policy, std::size_t N,
                                        const CounterRng& rng);

/// Grid symbols s_1..s_N of a window path.
std::vector<int> decode_windows(const InputSpace& space, const std::vector<std::size_t>& windows);

/// Input sequence u_1..u_N (p x N) drawn from the policy; requires N >= k + 1.
Eigen::MatrixXd sample_sequence(const MarkovInputPolicy& policy, std::size_t N,
                                const CounterRng& rng);

Eigen::MatrixXd symbols_to_inputs(const InputSpace& space, const std::vector<int>& symbols);
std::vector<int> inputs_to_symbols(const InputSpace& space, const Eigen::MatrixXd& inputs);

/// log P_gamma(first window) + sum of log P_pi over successive windows.
/// Returns -infinity for a sequence the policy cannot produce.
double sequence_log_prob(const MarkovInputPolicy& policy, const Eigen::MatrixXd& inputs);
double symbols_log_prob(const MarkovInputPolicy& policy, const std::vector<int>& symbols);

/// Plain-text form: `b`, `p`, `k`, `u_min`, `u_max`, one `levels` line per input
/// dimension, `gamma`, then one `pi` line per row; numbers printed with 17
/// significant digits so that reading back is exact. '#' starts a comment.
void write_policy(std::ostream& out, const MarkovInputPolicy& policy);
MarkovInputPolicy read_policy(std::istream& in);

}  // namespace bidesign
