#pragma once

#include <cstdint>
#include <string>

namespace umo {

// Deterministic xoshiro256++ generator seeded via splitmix64. All randomness in
// the pipeline flows through this type so runs are reproducible across
// platforms and rebuilds. Streams for sub-tasks are split off with derive().
class Rng {
  public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller (cached spare).
    double normal();
    double normal(double mean, double stddev);
    // Uniform integer in [0, n).
    uint64_t below(uint64_t n);

    // Independent child stream tied to (this stream's seed, label, index).
    Rng derive(const std::string& label, uint64_t index = 0) const;

  private:
    uint64_t state_[4];
    uint64_t seed_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over bytes; used for stable phrase -> seed mapping.
uint64_t fnv1a(const std::string& s);

}  // namespace umo
