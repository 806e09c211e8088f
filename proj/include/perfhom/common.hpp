#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace perfhom {

using index_t = std::int64_t;

/// Error with a machine-checkable kind ("layout-violation", "grid-mismatch",
/// "size-limit", ...) in front of the human-readable message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

[[noreturn]] inline void fail(const std::string& kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool ok, const std::string& kind, const std::string& msg) {
  if (!ok) fail(kind, msg);
}

/// SplitMix64. Used both as a sequential generator and as a counter-based
/// hash (rng_at), so right-hand-side bank fields can be regenerated node by
/// node without ever being stored.
struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  /// uniform in (0,1)
  double next_unit() { return (next() >> 11) * 0x1.0p-53 + 0x1.0p-54; }
  /// uniform in (-1,1)
  double next_sym() { return 2.0 * next_unit() - 1.0; }
  /// standard normal (Box-Muller; implementation pinned for reproducibility)
  double next_normal() {
    double u = next_unit(), v = next_unit();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586476925287 * v);
  }
};

/// Stateless hash of (seed, stream, counter): the value at position `counter`
/// of stream `stream` is the same no matter in which order positions are asked.
inline std::uint64_t hash_mix(std::uint64_t seed, std::uint64_t stream,
                              std::uint64_t counter) {
  SplitMix64 g(seed ^ (0x632be59bd9b4e019ULL * (stream + 1)) ^
               (0x9e3779b97f4a7c15ULL * (counter + 1)));
  g.next();
  return g.next();
}

inline double hash_unit(std::uint64_t seed, std::uint64_t stream,
                        std::uint64_t counter) {
  return (hash_mix(seed, stream, counter) >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

inline double hash_sym(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t counter) {
  return 2.0 * hash_unit(seed, stream, counter) - 1.0;
}

class WallTimer {
 public:
  WallTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline double sqr(double x) { return x * x; }

/// |S^{n-1}|, the surface measure of the unit sphere in R^n.
inline double unit_sphere_area(int n) {
  // 2 pi^{n/2} / Gamma(n/2)
  return 2.0 * std::pow(M_PI, 0.5 * n) / std::tgamma(0.5 * n);
}

}  // namespace perfhom
