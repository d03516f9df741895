#pragma once

// Small shared vocabulary: fixed-size vectors, the library error type and
// seeded random helpers that behave identically on every platform.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace drc {

using Vec3 = std::array<double, 3>;
using Vec6 = std::array<double, 6>;

inline constexpr double kPi = 3.14159265358979323846;

enum class ErrorCode {
  kInvalidArgument,
  kNonFinite,
  kFormat,
  kVersionMismatch,
  kDigestMismatch,
  kIo,
  kDiverged,
  kBudgetExhausted,
  kOracleFailure,
  kNetwork,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

template <std::size_t N>
inline double norm(const std::array<double, N>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

template <std::size_t N>
inline bool all_finite(const std::array<double, N>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

template <std::size_t N>
inline std::array<double, N> add(const std::array<double, N>& a,
                                  const std::array<double, N>& b) {
  std::array<double, N> r{};
  for (std::size_t i = 0; i < N; ++i) r[i] = a[i] + b[i];
  return r;
}

template <std::size_t N>
inline std::array<double, N> sub(const std::array<double, N>& a,
                                  const std::array<double, N>& b) {
  std::array<double, N> r{};
  for (std::size_t i = 0; i < N; ++i) r[i] = a[i] - b[i];
  return r;
}

template <std::size_t N>
inline std::array<double, N> scale(const std::array<double, N>& a, double s) {
  std::array<double, N> r{};
  for (std::size_t i = 0; i < N; ++i) r[i] = a[i] * s;
  return r;
}

// SplitMix64 finalizer. Used to derive independent sub-seeds and for
// counter-based noise so that pure functions can draw reproducible samples.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  return mix64(mix64(mix64(base ^ mix64(a)) ^ b) + c);
}

// std::uniform_real_distribution is implementation-defined, so conversions
// from raw engine output are done by hand.
inline double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return to_unit(engine_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Standard normal sample addressed by (key, counter, channel).
inline double hashed_normal(std::uint64_t key, std::uint64_t counter,
                            std::uint64_t channel) {
  const std::uint64_t a = mix64(key ^ mix64(counter * 16 + channel * 2));
  const std::uint64_t b = mix64(a + 0x632be59bd9b4e019ULL);
  double u1 = to_unit(a);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double u2 = to_unit(b);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

}  // namespace drc
