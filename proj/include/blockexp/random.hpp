// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "blockexp/tensor.hpp"

namespace blockexp {

// 64-bit FNV-1a. Used for stable seed derivation and content hashes.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

// Per-component seed derived from the run seed and a tag, stable across
// platforms and builds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = fnv1a64(&seed, sizeof(seed));
  h = fnv1a64(tag, h);
  // splitmix64 finalizer
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return h;
}

// mt19937_64 is fully specified by the standard; the distributions below are
// written out so sequences do not depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: empty range");
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  // Index drawn with probability proportional to weights (all >= 0, sum > 0).
  template <typename Range>
  std::size_t weighted_index(const Range& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw std::invalid_argument("Rng::weighted_index: zero total weight");
    double r = uniform() * total;
    std::size_t i = 0, last = 0;
    for (double w : weights) {
      if (w > 0.0) {
        last = i;
        if (r < w) return i;
        r -= w;
      }
      ++i;
    }
    return last;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  Tensor uniform_tensor(Shape shape, float bound) {
    Tensor t(std::move(shape));
    for (float& x : t.mutable_data()) x = static_cast<float>(uniform(-bound, bound));
    return t;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace blockexp
