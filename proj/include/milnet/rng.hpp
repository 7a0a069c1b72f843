#ifndef MILNET_RNG_HPP_
#define MILNET_RNG_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace milnet {

// Deterministic random source. All distributions are derived from the
// mt19937_64 word stream by hand so that sequences are identical across
// platforms and standard-library implementations (std::normal_distribution
// and std::shuffle are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Unbiased uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  // Standard normal deviate (Box-Muller, spare cached).
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Mixes a base seed with a path of indices (splitmix64 steps) so that nested
// tasks (repetition, fold, grid cell, ...) own independent streams.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

// Fisher-Yates shuffle driven by Rng::below.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[rng.below(i)]);
  }
}

}  // namespace milnet

#endif  // MILNET_RNG_HPP_
