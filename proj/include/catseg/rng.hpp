#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

// Counter-based randomness. Every random draw in the project is keyed by a
// tuple (seed, role, step, index, ...) instead of advancing a shared stream, so
// results never depend on evaluation order or worker scheduling.
namespace catseg::rng {

enum class Role : std::uint64_t {
  kCaseSeed = 1,
  kCaseChoice,
  kCrop,
  kAugment,
  kAnatomicalPrompt,
  kTextualPrompt,
  kGumbel,
  kInference,
  kTextCorpus,
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (std::uint64_t p : parts) h = mix(h ^ mix(p));
  return h;
}

constexpr std::uint64_t key(std::uint64_t seed, Role role, std::uint64_t step = 0,
                            std::uint64_t index = 0) {
  return key({seed, static_cast<std::uint64_t>(role), step, index});
}

/// Uniform in the open interval (0, 1), 53-bit resolution.
constexpr double uniform_open(std::uint64_t k) {
  const std::uint64_t bits = mix(k) >> 11;
  return (static_cast<double>(bits) + 0.5) * (1.0 / 9007199254740992.0);
}

/// FNV-1a, used to fold strings (case ids, tokens) into keys.
constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::mt19937_64 engine(std::uint64_t k) { return std::mt19937_64(k); }

inline std::mt19937_64 engine(std::uint64_t seed, Role role, std::uint64_t step = 0,
                              std::uint64_t index = 0) {
  return std::mt19937_64(key(seed, role, step, index));
}

}  // namespace catseg::rng
