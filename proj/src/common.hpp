#pragma once

// Shared plumbing: error types, deterministic RNG with named substreams,
// FNV hashing, little-endian encode/decode helpers.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fnet {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

// Malformed on-disk data (VOX4, FNCK, manifest, config). `offset` is the byte
// offset at which the problem was detected, or -1 when not applicable.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& msg, std::int64_t offset = -1)
      : std::runtime_error(offset >= 0 ? msg + " (byte offset " + std::to_string(offset) + ")"
                                       : msg),
        offset_(offset) {}
  std::int64_t offset() const { return offset_; }

 private:
  std::int64_t offset_;
};

// Shape disagreement between operands.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument values (bad interval, empty split, unknown variant, ...).
class InvalidArgumentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or failed numeric procedures.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// ---------------------------------------------------------------------------
// RNG
// ---------------------------------------------------------------------------

// Deterministic generator. Distributions are implemented here rather than via
// <random> adaptors so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}

  // Named substream; all project randomness hangs off one root seed.
  static Rng substream(std::uint64_t root_seed, const std::string& name) {
    return Rng(splitmix64(root_seed ^ fnv1a64(name)));
  }

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // modulo bias negligible for n << 2^64; acceptable for experiment plumbing
    return next_u64() % n;
  }

  std::int64_t range(std::int64_t lo, std::int64_t hi) {  // inclusive ends
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename It>
  void shuffle(It first, It last) {  // Fisher-Yates, fixed traversal order
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    shuffle(v.begin(), v.end());
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// Little-endian byte helpers (VOX4 / FNCK are little-endian on every host)
// ---------------------------------------------------------------------------

inline void put_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32le(std::vector<unsigned char>& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32le(out, v);
}

inline float get_f32le(const unsigned char* p) {
  std::uint32_t v = get_u32le(p);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace fnet
