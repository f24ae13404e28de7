#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cafe {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view s);

// Independent stream seed for a named purpose under a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

// mt19937_64 with portable conversions (the standard distributions are
// implementation defined, which would break cross-toolchain replay).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  Rng(std::uint64_t seed, std::string_view stream) : eng_(derive_seed(seed, stream)) {}

  std::uint64_t next() { return eng_(); }
  double uniform();                          // [0,1)
  double uniform(double lo, double hi);
  double normal();                           // N(0,1)
  std::size_t below(std::size_t n);          // uniform integer in [0,n)

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cafe
