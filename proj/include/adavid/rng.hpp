#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace adavid {

// SplitMix64 counter generator: draw k of a stream seeded with s is
// mix64(s + k * 0x9E3779B97F4A7C15). Pure integer arithmetic, so streams are
// identical on every platform. Normals use Box-Muller on top of uniform().
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64";

  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double normal();
  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n);

  // Fisher-Yates shuffle driven by below().
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t z);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

// Sub-seed for a named purpose: mix64(seed ^ fnv1a(purpose)).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

}  // namespace adavid
