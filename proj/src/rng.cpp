#include "milnet/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace milnet {

std::uint64_t Rng::below(std::uint64_t n) {
  const std::uint64_t residue = (std::numeric_limits<std::uint64_t>::max() % n + 1) % n;
  if (residue == 0) {
    return engine_() % n;
  }
  // Reject the top 2^64 mod n values to keep the draw unbiased.
  const std::uint64_t bound = 0 - residue;
  std::uint64_t r = engine_();
  while (r >= bound) {
    r = engine_();
  }
  return r % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t p : path) {
    h = splitmix64(h ^ splitmix64(p));
  }
  return h;
}

}  // namespace milnet
