#pragma once

// Deterministic randomness. Every random draw in the library descends from a
// single 64-bit root seed: streams are split off by hashing (seed, label,
// index) with SplitMix64, and each stream drives its own mt19937_64. Boost's
// distributions are used because their output is identical across standard
// libraries (the normal sampler is a ziggurat).

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <cstdint>
#include <random>
#include <string_view>

namespace advsketch {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a; labels only need to be stable, not secret.
inline std::uint64_t hash_label(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
  return splitmix64(splitmix64(seed ^ hash_label(label)) + index);
}

inline Rng make_rng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, label, index));
}

// Child stream of an existing generator (consumes one draw).
inline Rng fork(Rng& parent, std::uint64_t index = 0) { return Rng(splitmix64(parent() + index)); }

template <class G>
double std_normal(G& g) {
  boost::random::normal_distribution<double> nd(0.0, 1.0);  // stateless ziggurat
  return nd(g);
}

template <class G>
double uniform01(G& g) {
  boost::random::uniform_01<double> u;
  return u(g);
}

template <class G>
std::int64_t uniform_int(G& g, std::int64_t lo, std::int64_t hi) {
  boost::random::uniform_int_distribution<std::int64_t> d(lo, hi);
  return d(g);
}

}  // namespace advsketch
