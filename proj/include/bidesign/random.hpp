#pragma once

// Counter-based random streams.
//
// Every random number is a pure function of (master seed, stream tag, up to
// three integer coordinates, component index). Nothing is consumed
// sequentially, so the value drawn for path j at time t never depends on what
// other paths, inputs or threads did. This is what gives the design objective
// its common-random-numbers property.

#include <cmath>
#include <cstdint>
#include <utility>

namespace bidesign {

/// Stream tags separate the independent uses of the master seed.
enum class Stream : std::uint64_t {
  kPrior = 1,
  kProcess = 2,
  kMeasurement = 11,
  kInputPath = 3,
  kSmcInit = 4,
  kSmcKernel = 5,
  kSmcProcess = 6,
  kSmcResample = 7,
  kTruthPrior = 8,
  kTruthNoise = 9,
  kGeneric = 10,
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Handle to a family of counter-based streams derived from one master seed.
///
/// `group` selects an independent sub-family (e.g. one input path of the
/// design objective); the coordinates `a`, `b` and the component index then
/// address individual numbers.
class CounterRng {
 public:
  constexpr CounterRng() = default;
  constexpr explicit CounterRng(std::uint64_t seed, std::uint64_t group = 0)
      : seed_(seed), group_(group), base_(mix64(mix64(seed) + group)) {}

  constexpr std::uint64_t seed() const { return seed_; }
  constexpr std::uint64_t group() const { return group_; }

  /// Same seed, different sub-family.
  constexpr CounterRng with_group(std::uint64_t group) const { return CounterRng(seed_, group); }

  /// Hash of (seed, group, stream, a, b); individual numbers are then
  /// addressed by a component counter.
  constexpr std::uint64_t key(Stream stream, std::uint64_t a, std::uint64_t b) const {
    std::uint64_t h = mix64(base_ ^ (static_cast<std::uint64_t>(stream) * 0xd1b54a32d192ed03ULL));
    h = mix64(h + a);
    return mix64(h + b);
  }

  static constexpr std::uint64_t bits(std::uint64_t key, std::uint64_t k) { return mix64(key + k); }

  /// Uniform on the open interval (0, 1).
  static double uniform(std::uint64_t key, std::uint64_t k) {
    return (static_cast<double>(bits(key, k) >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(Stream stream, std::uint64_t a, std::uint64_t b, std::uint64_t k = 0) const {
    return uniform(key(stream, a, b), k);
  }

  /// Standard normal pair number `pair` under `key` (Marsaglia polar method;
  /// rejected candidates advance a counter private to the pair).
  static std::pair<double, double> normal_pair(std::uint64_t key, std::uint64_t pair) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      const std::uint64_t base = (pair << 8) + 2 * attempt;
      const double v1 = 2.0 * uniform(key, base) - 1.0;
      const double v2 = 2.0 * uniform(key, base + 1) - 1.0;
      const double r2 = v1 * v1 + v2 * v2;
      if (r2 < 1.0 && r2 > 0.0) {
        const double scale = std::sqrt(-2.0 * std::log(r2) / r2);
        return {v1 * scale, v2 * scale};
      }
    }
  }

  std::pair<double, double> normal_pair(Stream stream, std::uint64_t a, std::uint64_t b,
                                        std::uint64_t pair) const {
    return normal_pair(key(stream, a, b), pair);
  }

  /// Standard normal number `index` under `key`; normals 2i and 2i+1 share a pair.
  static double normal(std::uint64_t key, std::uint64_t index) {
    const auto [z0, z1] = normal_pair(key, index / 2);
    return (index % 2 == 0) ? z0 : z1;
  }

  /// Fill `out[0..count)` with standard normals addressed by (stream, a, b).
  template <typename Out>
  void normals(Stream stream, std::uint64_t a, std::uint64_t b, Out&& out, long count) const {
    const std::uint64_t k = key(stream, a, b);
    for (long i = 0; i < count; i += 2) {
      const auto [z0, z1] = normal_pair(k, static_cast<std::uint64_t>(i / 2));
      out[i] = z0;
      if (i + 1 < count) out[i + 1] = z1;
    }
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t group_ = 0;
  std::uint64_t base_ = mix64(mix64(0));
};

}  // namespace bidesign
