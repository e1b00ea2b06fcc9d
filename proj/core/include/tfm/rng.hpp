#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace tfm {

/// Counter-based random stream keyed by (seed, purpose, index).
///
/// Each draw hashes `key + counter * golden_gamma` through the SplitMix64
/// finalizer, so a stream is fully determined by its label and position and
/// two streams with different labels never share state. Integer output is
/// platform independent; normal variates go through Box-Muller on top of it.
class RngStream {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64-counter";

  RngStream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  /// Uniform integer on [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal variate.
  double normal();

  /// Independent child stream; the parent is not advanced.
  RngStream split(std::string_view purpose, std::uint64_t index = 0) const;

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }

 private:
  std::uint64_t seed_;
  std::string label_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::optional<double> spare_normal_;
};

/// 64-bit FNV-1a, used to fold stream labels into keys.
std::uint64_t fnv1a64(std::string_view text);

/// SplitMix64 output function.
std::uint64_t mix64(std::uint64_t x);

}  // namespace tfm
