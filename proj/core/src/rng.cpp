#include "tfm/rng.hpp"

#include <cmath>
#include <numbers>

#include "tfm/error.hpp"

namespace tfm {
namespace {
constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

RngStream::RngStream(std::uint64_t seed, std::string_view purpose, std::uint64_t index)
    : seed_(seed), label_(std::string(purpose) + "#" + std::to_string(index)) {
  key_ = mix64(seed ^ kGoldenGamma);
  key_ = mix64(key_ ^ fnv1a64(purpose));
  key_ = mix64(key_ + index * kGoldenGamma);
}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGoldenGamma);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t RngStream::below(std::uint64_t bound) {
  if (bound == 0) {
    throw ValueError("RngStream::below: bound must be positive");
  }
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t draw = next_u64();
  while (draw >= limit) {
    draw = next_u64();
  }
  return draw % bound;
}

double RngStream::normal() {
  if (spare_normal_) {
    const double value = *spare_normal_;
    spare_normal_.reset();
    return value;
  }
  double u1 = uniform();
  while (u1 <= 0.0) {
    u1 = uniform();
  }
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  return radius * std::cos(angle);
}

RngStream RngStream::split(std::string_view purpose, std::uint64_t index) const {
  RngStream child(seed_, purpose, index);
  child.key_ = mix64(key_ ^ child.key_);
  child.label_ = label_ + "/" + child.label_;
  return child;
}

}  // namespace tfm
