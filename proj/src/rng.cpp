#include "chainmeld/rng.hpp"

namespace chainmeld {

Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x6d656c64u};
  return Rng(seq);
}

}  // namespace chainmeld
