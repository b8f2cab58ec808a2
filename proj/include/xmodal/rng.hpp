// Copyright 2026 xmodal authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace xmodal {

/// Deterministic random stream identified by (seed, label).
///
/// Every source of randomness in the toolkit flows through a labeled stream
/// ("batching", "langpair", "init", "testset", ...) so that two runs differing
/// in one knob draw identical values everywhere else. The engine is
/// std::mt19937_64 (bit-exact by the standard); the uniform/normal/shuffle
/// transforms are implemented here because the std::*_distribution adaptors
/// are not bit-portable across standard library implementations.
class SeededRng {
 public:
  SeededRng(long long seed, std::string label)
      : seed_(seed), label_(std::move(label)), engine_(mix(seed, label_)) {}

  long long seed() const { return seed_; }
  const std::string& label() const { return label_; }

  /// Child stream with an extended label; independent of draws made so far.
  SeededRng derive(const std::string& sub) const {
    return SeededRng(seed_, label_ + "/" + sub);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n); n must be positive. Rejection sampling keeps
  /// the draw unbiased.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller; consumes two uniforms per pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Fisher-Yates shuffle driven by uniform_index.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_index(i + 1));
      std::swap(items[i], items[j]);
    }
  }

 private:
  // splitmix64 over the seed and an FNV-1a digest of the label.
  static std::uint64_t mix(long long seed, const std::string& label) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : label) {
      h ^= c;
      h *= 1099511628211ull;
    }
    std::uint64_t z = static_cast<std::uint64_t>(seed) + 0x9e3779b97f4a7c15ull;
    z ^= h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  long long seed_;
  std::string label_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace xmodal
