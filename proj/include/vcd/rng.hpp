#pragma once

// Portable deterministic sampling. std::normal_distribution and friends are
// implementation-defined, so the transforms here are written out explicitly
// on top of the standardised mt19937_64 engine.

#include "vcd/autodiff.hpp"

#include <cstdint>
#include <random>
#include <string>

namespace vcd {

/// SplitMix64 finaliser, used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Uniform on the open interval (0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    double logistic();
    std::uint64_t below(std::uint64_t n);

    Matrix normal_matrix(Index rows, Index cols);
    Matrix logistic_matrix(Index rows, Index cols);

    /// Text form of the full engine state; round-trips exactly.
    [[nodiscard]] std::string state() const;
    void set_state(const std::string& state);

private:
    std::mt19937_64 engine_;
};

}  // namespace vcd
