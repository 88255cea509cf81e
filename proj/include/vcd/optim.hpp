#pragma once

#include "vcd/autodiff.hpp"

#include <cstdint>
#include <vector>

namespace vcd {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamMoments {
    Matrix m;
    Matrix v;
};

/// Single bias-corrected ADAM update of one tensor.
void adam_update(Matrix& param, const Matrix& grad, AdamMoments& state, std::int64_t step, const AdamConfig& cfg);

/// ADAM over a fixed set of parameters. Parameters outside the set are never touched.
class Adam {
public:
    Adam(std::vector<ad::Parameter*> params, AdamConfig cfg);

    void step();
    void zero_grad();

    [[nodiscard]] std::int64_t steps() const { return step_; }
    [[nodiscard]] const std::vector<ad::Parameter*>& params() const { return params_; }
    [[nodiscard]] std::vector<AdamMoments>& moments() { return moments_; }
    [[nodiscard]] const std::vector<AdamMoments>& moments() const { return moments_; }
    void set_steps(std::int64_t s) { step_ = s; }
    AdamConfig& config() { return cfg_; }

private:
    std::vector<ad::Parameter*> params_;
    std::vector<AdamMoments> moments_;
    AdamConfig cfg_;
    std::int64_t step_ = 0;
};

/// Rescales gradients so their global L2 norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(const std::vector<ad::Parameter*>& params, double max_norm);

}  // namespace vcd
