#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace cpift {

// Derives an independent seed for a named phase from the root seed:
// splitmix64(root ^ fnv1a64(tag)). Every consumer of randomness gets its own
// tag so that rerunning one phase never shifts another phase's stream.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

// Seeded generator with portable distributions. std::mt19937_64 is fully
// specified by the standard, the std:: distributions are not, so uniform,
// normal and bounded draws are implemented here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; caches the second variate.
  double normal();

  // Uniform integer in [0, n); n > 0.
  std::size_t below(std::size_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cpift
