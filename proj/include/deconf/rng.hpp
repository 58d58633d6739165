#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

namespace deconf::diffcore {

// Counter-based pseudo-random stream. Every draw is a pure function of
// (key, counter), so independent streams never perturb each other and a
// run is reproducible regardless of how many streams exist or in which
// order they are consumed.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() {
    std::uint64_t z = key_ + 0x9e3779b97f4a7c15ULL * ++counter_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    return next_u64() % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // standard normal via Box-Muller; no cached spare so the draw count
  // stays a deterministic function of call count
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

inline std::uint64_t hash64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent stream from (seed, purpose). Streams for distinct
// purposes are decoupled: adding a consumer of one stream never changes the
// values another stream produces.
inline RngStream make_stream(std::uint64_t seed, std::string_view purpose) {
  std::uint64_t k = hash64(purpose);
  k ^= seed + 0x9e3779b97f4a7c15ULL + (k << 6) + (k >> 2);
  return RngStream(k);
}

template <typename T>
void shuffle(std::vector<T>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.uniform_int(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace deconf::diffcore
