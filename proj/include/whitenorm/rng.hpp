#ifndef WHITENORM_RNG_HPP
#define WHITENORM_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace whitenorm {

// Deterministic random source. Draws come from a std::mt19937_64 engine
// (whose output sequence is fixed by the standard) through hand-rolled
// uniform/normal transforms, so identical seeds give identical streams on
// any platform. Substreams are derived by hashing a name into the root
// seed; adding a new named consumer never perturbs existing streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static Rng substream(std::uint64_t root_seed, std::string_view name);

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal();
  // Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stateless mixing helpers shared with the substream scheme.
std::uint64_t splitmix64(std::uint64_t value);
std::uint64_t hash_name(std::string_view name);

}  // namespace whitenorm

#endif  // WHITENORM_RNG_HPP
