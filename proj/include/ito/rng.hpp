#pragma once

#include <cstdint>
#include <initializer_list>

namespace ito {

// xoshiro256** seeded through splitmix64. All draws are derived from integer
// arithmetic only, so sequences are identical across platforms and compilers
// (std:: distributions are not).
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 bits of precision.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }
    // Standard normal via Box-Muller; caches the second draw.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

   private:
    std::uint64_t s_[4];
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state);

// Deterministic seed derivation for independent streams: hash of a base seed and a key path.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys);

}  // namespace ito
