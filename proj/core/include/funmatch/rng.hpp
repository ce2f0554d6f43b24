#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace funmatch {

using Rng = std::mt19937_64;

/// Stream tags keep the random streams of different subsystems apart.
enum class Stream : std::uint64_t {
  init = 1,
  shuffle = 2,
  views = 3,
  synthetic = 4,
  eval = 5,
};

/// Independent generator for one stream, e.g. make_rng(seed, Stream::views, {epoch, batch}).
/// Coordinates are folded through std::seed_seq, so every (seed, tag, coords)
/// tuple gets its own generator regardless of the order streams are created in.
inline Rng make_rng(std::uint64_t seed, Stream tag, std::initializer_list<std::uint64_t> coords = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(4 + 2 * coords.size());
  const auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  push(static_cast<std::uint64_t>(tag));
  for (std::uint64_t c : coords) push(c);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace funmatch
