#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cinelstm {

using Rng = std::mt19937_64;

// Seed for a named substream of a root seed ("fold/3/member/1/init").
// Distinct names give statistically independent streams; the mapping is
// stable across runs and platforms.
std::uint64_t substream_seed(std::uint64_t root, std::string_view name);

inline Rng make_rng(std::uint64_t root, std::string_view name) { return Rng(substream_seed(root, name)); }

}  // namespace cinelstm
