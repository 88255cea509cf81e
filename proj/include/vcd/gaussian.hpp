#pragma once

#include "vcd/autodiff.hpp"

namespace vcd {

/// Diagonal Gaussian given by per-coordinate mean and log-variance.
struct GaussianParams {
    Matrix mean;
    Matrix logvar;
};

/// GaussianParams living on a tape.
struct GaussianVar {
    ad::Var mean;
    ad::Var logvar;

    [[nodiscard]] GaussianParams value() const { return {mean.value(), logvar.value()}; }
};

inline constexpr double kLogVarFloor = -3.0;

/// max(logvar, floor) inside the graph.
ad::Var clip_logvar(const ad::Var& logvar, double floor = kLogVarFloor);

/// mean + exp(logvar / 2) * noise. Rejects non-finite parameters.
ad::Var gaussian_reparam_sample(const GaussianVar& params, const ad::Var& noise);

/// Per-coordinate KL[q || p] between diagonal Gaussians.
ad::Var gaussian_kl_elementwise(const GaussianVar& q, const GaussianVar& p);

/// KL[q || p] summed over all coordinates, as a scalar.
ad::Var gaussian_kl(const GaussianVar& q, const GaussianVar& p);

/// Per-coordinate log N(x; mean, exp(logvar)).
ad::Var gaussian_log_prob(const ad::Var& x, const GaussianVar& dist);

/// Closed-form KL for plain values, summed over all coordinates.
double gaussian_kl_value(const GaussianParams& q, const GaussianParams& p);

}  // namespace vcd
