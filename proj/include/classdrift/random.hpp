#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace classdrift {

// Stateless mixer used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Seed for the stream (component `name`, item `index`) under a master seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name,
                                    std::uint64_t index = 0) {
  return splitmix64(splitmix64(seed ^ hash_name(name)) + index);
}

// A named stream.  Draws are defined bit-for-bit here rather than through
// std:: distributions, whose output is implementation-specific.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : gen_(seed) {}
  RandomStream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0)
      : gen_(derive_seed(seed, name, index)) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double exponential() { return -std::log1p(-uniform()); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }
  std::uint64_t bits() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace classdrift
