#pragma once
/**
 * Shared plumbing: error types, deterministic counter-derived RNG streams,
 * FNV hashing, nearest-rank percentile counting and float formatting.
 *
 * Everything downstream leans on two properties established here:
 *   - all randomness is derived from explicit (seed, label, counter...) tuples,
 *     so any part of a run can be replayed or resumed without carrying hidden
 *     generator state;
 *   - floats are printed with shortest round-trip formatting, so emitted CSV /
 *     JSONL artifacts are byte-stable across identical runs.
 */

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace lpreg {

// ============================================================================
// Errors
// ============================================================================

/// Parameters, gradients or losses went non-finite.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A noise filter removed every token of a distribution (misconfigured
/// threshold); callers treat this as a configuration bug, not data.
struct DegenerateFilterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed experiment configuration; the message carries the field path.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File / serialization problems (checkpoints, eval sets, run artifacts).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ============================================================================
// Deterministic RNG
// ============================================================================

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Collapses a list of stream labels/counters into one 64-bit seed. Used to
/// carve independent substreams (per trajectory, per probe, ...) out of a
/// single run seed with no shared mutable generator.
inline uint64_t derive_seed(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0x243f6a8885a308d3ull;
  for (uint64_t p : parts) {
    uint64_t s = h ^ p;
    h = splitmix64(s);
  }
  return h;
}

/// Label helper for derive_seed: hashes a short string tag.
inline uint64_t stream_tag(const char* tag) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const char* p = tag; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Small deterministic PRNG over a splitmix64 sequence. One instance per
/// logical stream; the single u64 is the entire state.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n); n must be positive. Modulo bias is
  /// irrelevant at the n <= a-few-hundred scales used here.
  uint64_t below(uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller (no spare caching; determinism over
  /// thrift).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  uint64_t state_;
};

// ============================================================================
// Hashing
// ============================================================================

inline uint64_t fnv1a64(const void* data, size_t n,
                        uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ============================================================================
// Nearest-rank selection
// ============================================================================

/// Number of items selected by a nearest-rank fraction: ceil(fraction * n),
/// clamped to [1, n] for fraction in (0, 1]. The 1e-9 guard keeps binary
/// artifacts of decimal fractions (e.g. 0.2 * 5 = 1.0000000000000002) from
/// rounding the count up spuriously.
inline size_t nearest_rank_count(double fraction, size_t n) {
  if (n == 0 || fraction <= 0.0) return 0;
  if (fraction >= 1.0) return n;
  double raw = fraction * static_cast<double>(n);
  double adj = std::ceil(raw - 1e-9);
  size_t k = adj < 1.0 ? 1 : static_cast<size_t>(adj);
  return k > n ? n : k;
}

// ============================================================================
// Numeric helpers
// ============================================================================

/// Probabilities are clamped at this floor inside logarithms only; stored
/// probabilities are never modified.
constexpr double kLogFloor = 1e-12;

inline double log_clamped(double p) {
  return std::log(p < kLogFloor ? kLogFloor : p);
}

inline bool all_finite(const double* p, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

/// Shortest decimal that round-trips the exact double. Keeps CSV/JSONL output
/// byte-identical across identical runs without drowning files in digits.
inline std::string fmt_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace lpreg
