#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace scenestress {

/// Discrete stress level. Ordered: low < medium < high.
enum class StressClass : std::uint8_t { low = 0, medium = 1, high = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<StressClass, kNumClasses> kAllClasses{
    StressClass::low, StressClass::medium, StressClass::high};

constexpr std::size_t index_of(StressClass c) noexcept {
  return static_cast<std::size_t>(c);
}

constexpr StressClass class_at(std::size_t i) {
  if (i >= kNumClasses) throw std::out_of_range("stress class index out of range");
  return static_cast<StressClass>(i);
}

constexpr std::string_view to_string(StressClass c) noexcept {
  switch (c) {
    case StressClass::low: return "low";
    case StressClass::medium: return "medium";
    case StressClass::high: return "high";
  }
  return "?";
}

// Errors map onto CLI exit codes: config 2, data 3, training 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
  virtual std::string_view kind() const noexcept { return "error"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
  std::string_view kind() const noexcept override { return "config"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
  std::string_view kind() const noexcept override { return "data"; }
};

class TrainingError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
  std::string_view kind() const noexcept override { return "training"; }
};

inline StressClass parse_stress_class(std::string_view s) {
  for (auto c : kAllClasses)
    if (to_string(c) == s) return c;
  throw DataError("unknown stress class '" + std::string(s) + "'");
}

inline bool& warnings_enabled() {
  static bool enabled = true;
  return enabled;
}

inline void warn(std::string_view msg) {
  if (warnings_enabled()) std::clog << "warning: " << msg << '\n';
}

// ---------------------------------------------------------------------------
// Randomness. Everything is driven by std::mt19937_64; the helpers below avoid
// the implementation-defined std::*_distribution so sequences are portable.

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Child seed for a named component, so one root seed reproduces a whole run.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view component) noexcept {
  return splitmix64(root ^ fnv1a64(component));
}

/// Uniform integer in [0, n). Rejection sampling, unbiased.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = Rng::max() - (Rng::max() % bound + 1) % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x > limit);
  return static_cast<std::size_t>(x % bound);
}

/// Uniform double in [0, 1).
inline double uniform01(Rng& rng) noexcept {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_real(Rng& rng, double lo, double hi) noexcept {
  return lo + (hi - lo) * uniform01(rng);
}

/// Standard normal via Box-Muller.
inline double standard_normal(Rng& rng) noexcept {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

template <typename It>
void shuffle_range(It first, It last, Rng& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    using std::swap;
    swap(first[i - 1], first[j]);
  }
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// Shortest round-trip formatting / strict parsing of doubles.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw DataError("not a number: '" + std::string(s) + "'");
  return v;
}

}  // namespace scenestress
