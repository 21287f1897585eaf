#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace mmt {

// Counter-based deterministic RNG. Every draw is a pure function of
// (key, counter), so any field of any example can be regenerated in
// isolation without replaying a sequential state.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2)));
}

inline std::uint64_t hash_tag(std::string_view tag) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// A stream is (key, counter). Copyable, serializable, no hidden state.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t key, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void restore(std::uint64_t key, std::uint64_t counter) {
    key_ = key;
    counter_ = counter;
  }

  RngStream fork(std::string_view tag) const {
    return RngStream(mix_key(key_, hash_tag(tag)));
  }
  RngStream fork(std::uint64_t salt) const {
    return RngStream(mix_key(key_, salt));
  }

  std::uint64_t next_u64() { return splitmix64(mix_key(key_, counter_++)); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    return n ? next_u64() % n : 0;
  }

  // Marsaglia polar method; rejection loop is deterministic per stream.
  double normal() {
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// Derives the stream for a (seed, purpose, ...) path, e.g.
// derive_stream(seed, "droptoken", step, example).
inline RngStream derive_stream(std::uint64_t seed, std::string_view purpose) {
  return RngStream(mix_key(seed, hash_tag(purpose)));
}
inline RngStream derive_stream(std::uint64_t seed, std::string_view purpose,
                               std::uint64_t a) {
  return RngStream(mix_key(mix_key(seed, hash_tag(purpose)), a));
}
inline RngStream derive_stream(std::uint64_t seed, std::string_view purpose,
                               std::uint64_t a, std::uint64_t b) {
  return RngStream(mix_key(mix_key(mix_key(seed, hash_tag(purpose)), a), b));
}

}  // namespace mmt
