#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace shortcut {

// Splittable counter-based PRNG (SplitMix64 core).
//
// Every generator is identified by a 64-bit key. Substreams are derived by
// hashing the parent key with a label (and optional index), never by
// consuming draws, so the set of substreams a computation uses does not
// depend on how many values were drawn before the split. That makes
// per-class / per-sample generation schedule-independent.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : key_(seed), state_(seed) {}

  // Child generator for a named substream. Independent of this
  // generator's draw position.
  Prng substream(std::string_view label) const {
    return Prng(mix(key_ ^ fnv1a(label)));
  }
  Prng substream(std::string_view label, std::uint64_t index) const {
    return Prng(mix(mix(key_ ^ fnv1a(label)) + index * kGamma));
  }

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }

  // Uniform in [0,1), 53-bit resolution.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo,hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  // Uniform integer in [0,n).
  std::uint64_t next_below(std::uint64_t n) {
    // 53-bit scaling; n is tiny in all callers so the bias is negligible.
    std::uint64_t v = static_cast<std::uint64_t>(next_unit() * static_cast<double>(n));
    return v < n ? v : n - 1;
  }

  bool next_bool() { return (next_u64() >> 63) != 0; }

  // Standard normal draw via Box-Muller; the second value of each pair is
  // cached so consecutive draws cost one log/sincos per two values.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = next_unit();
    } while (u1 <= 0.0);
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * kPi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  // SplitMix64 output function; next_u64 therefore reproduces the published
  // SplitMix64 stream for a given seed.
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char ch : s) {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001B3ull;
    }
    return h;
  }

  std::uint64_t key_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// n i.i.d. standard-normal draws.
inline std::vector<double> sample_standard_normal(Prng& prng, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = prng.next_normal();
  return out;
}

}  // namespace shortcut
