#pragma once

#include <cstdint>
#include <random>

namespace chainmeld {

using Rng = std::mt19937_64;

/// Independent generator for (master seed, stream id). Streams with distinct
/// ids are seeded through std::seed_seq from both values.
Rng make_stream(std::uint64_t seed, std::uint64_t stream);

/// Stream id ranges reserved by the samplers; chain c of a stage uses base + c.
namespace streams {
inline constexpr std::uint64_t stage_one_first = 1'000;
inline constexpr std::uint64_t stage_one_last = 2'000;
inline constexpr std::uint64_t stage_two = 3'000;
inline constexpr std::uint64_t sequential_two = 4'000;
inline constexpr std::uint64_t sequential_three = 5'000;
inline constexpr std::uint64_t generic = 6'000;
inline constexpr std::uint64_t prior_first = 7'000;
inline constexpr std::uint64_t prior_last = 8'000;
}  // namespace streams

}  // namespace chainmeld
