#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace mpolar {

// Counter-based generator: the i-th draw is a pure function of (key, i), so
// streams are reproducible across platforms and can be forked by key
// derivation instead of sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t key = 0) : key_(mix(key ^ 0x6a09e667f3bcc909ULL)) {}

  static std::uint64_t mix(std::uint64_t z);
  // Deterministic child key from a parent key and a tag/index.
  static std::uint64_t derive(std::uint64_t key, std::uint64_t index);
  static std::uint64_t derive(std::uint64_t key, std::string_view tag);

  Rng fork(std::uint64_t index) const { return Rng(derive(key_, index)); }
  Rng fork(std::string_view tag) const { return Rng(derive(key_, tag)); }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller (one output per call).
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace mpolar
