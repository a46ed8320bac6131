#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace rprloc {

using Rng = std::mt19937_64;

// Deterministic independent stream keyed by (seed, path...). Lets parallel
// workers, ensemble runs and dataset cases draw without sharing state.
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * path.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (std::uint64_t p : path) push(p);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// 64-bit FNV-1a; stable across platforms, used for config and spec hashes.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);

}  // namespace rprloc
