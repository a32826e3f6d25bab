#pragma once

#include <cstdint>
#include <vector>

namespace graphvalue {

// splitmix64 finalizer. Stateless bit mix used both as the generator step
// and for seed derivation.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic PRNG (splitmix64). Chosen over std::mt19937_64 so that the
// whole random stream, including floating-point draws, is pinned by this
// header rather than by the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix64(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive and small relative to 2^64.
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

 private:
  std::uint64_t state_;
};

// Documented counter scheme for deriving independent streams: fold each
// (tag, index) pair into the base seed through the splitmix64 finalizer.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index = 0) {
  std::uint64_t s = mix64(base ^ (0x9e3779b97f4a7c15ull * (tag + 1)));
  return mix64(s ^ (0xd1b54a32d192ed03ull * (index + 1)));
}

}  // namespace graphvalue
