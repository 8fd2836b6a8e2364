#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace hofa {

// splitmix64, used to derive child seeds. Good enough as a mixing function;
// the actual stream is mt19937_64.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(const std::string& tag) {
  // FNV-1a
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// A seedable random stream that can be forked deterministically: every
// parallel unit of work gets fork(tag) so results do not depend on the
// interleaving of draws.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), eng_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  RngStream fork(std::uint64_t tag) const {
    return RngStream(splitmix64(seed_ ^ splitmix64(tag ^ 0xa5a5a5a5a5a5a5a5ULL)));
  }
  RngStream fork(const std::string& tag) const { return fork(hash_tag(tag)); }
  RngStream fork(const std::string& tag, std::uint64_t i) const {
    return fork(hash_tag(tag) ^ splitmix64(i));
  }

  std::uint64_t next_u64() { return eng_(); }

  // uniform in [0, m)
  std::uint64_t next_below(std::uint64_t m) {
    std::uniform_int_distribution<std::uint64_t> d(0, m - 1);
    return d(eng_);
  }

  int next_residue(int p) { return static_cast<int>(next_below(static_cast<std::uint64_t>(p))); }

  double next_real() {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(eng_);
  }

  bool next_bernoulli(double q) { return next_real() < q; }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace hofa
