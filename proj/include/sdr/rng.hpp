#ifndef SDR_RNG_HPP
#define SDR_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sdr {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derive an independent substream seed from a parent seed and a tag path,
// e.g. derive_seed(master, {population, draw, stream::sampling}).
inline std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t h = mix64(parent);
  for (auto t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

namespace stream {
inline constexpr std::uint64_t population = 1;
inline constexpr std::uint64_t sampling = 2;
inline constexpr std::uint64_t labels = 3;
inline constexpr std::uint64_t folds = 4;
inline constexpr std::uint64_t learner = 5;
inline constexpr std::uint64_t gate = 6;
inline constexpr std::uint64_t base_predictor = 7;
}  // namespace stream

}  // namespace sdr

#endif  // SDR_RNG_HPP
