#pragma once

#include <cstdint>
#include <random>

namespace forecaster {

// Seeded generator whose derived draws do not depend on the standard
// library's distribution implementations, so streams match across toolchains.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n);

    // Standard normal via Box-Muller; caches the second variate.
    double normal();

   private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Mixes a base seed with a stream tag so independent components draw from
// unrelated streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace forecaster
