#pragma once

#include <cstdint>
#include <vector>

namespace flowsr {

// Deterministic random stream. xoshiro256++ seeded through splitmix64, with
// explicit Box-Muller normals, so a given seed yields the same sequence on
// every platform and toolchain (std:: distributions do not guarantee that).
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform on [0,1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);

    // Uniform integer on [0,n), n >= 1. Rejection sampling, no modulo bias.
    std::uint64_t uniform_index(std::uint64_t n);

    // Standard normal via Box-Muller. Consumes two uniforms per draw; no
    // cached spare, so interleaving with other draws stays reproducible.
    double normal();

    void fill_normal(double* dst, std::size_t n, double stddev = 1.0);
    std::vector<double> normal_vec(std::size_t n, double stddev = 1.0);

private:
    std::uint64_t s_[4];
};

}  // namespace flowsr
