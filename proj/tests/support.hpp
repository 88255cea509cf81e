#pragma once

// Helpers shared by the unit tests: finite-difference gradients, random
// matrices and small model configurations.

#include "vcd/autodiff.hpp"
#include "vcd/models.hpp"
#include "vcd/rng.hpp"
#include "vcd/sim.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <set>
#include <string>
#include <cmath>
#include <functional>
#include <vector>

namespace vcd::testing {

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0) {
    return rng.normal_matrix(rows, cols) * scale;
}

/// Central differences of f with respect to every entry of x (x is restored).
inline Matrix numeric_gradient(const std::function<double()>& f, Matrix& x, double eps = 1e-6) {
    Matrix g(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + eps;
        const double up = f();
        x.data()[i] = keep - eps;
        const double down = f();
        x.data()[i] = keep;
        g.data()[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

/// |a - n| / max(|a|, |n|, floor), worst entry. The floor keeps entries whose
/// true gradient is zero from dominating through rounding noise.
inline double relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-6) {
    double worst = 0.0;
    for (Index i = 0; i < numeric.size(); ++i) {
        const double a = analytic.size() == 0 ? 0.0 : analytic.data()[i];
        const double n = numeric.data()[i];
        const double scale = std::max({std::abs(a), std::abs(n), floor});
        worst = std::max(worst, std::abs(a - n) / scale);
    }
    return worst;
}

/// Gradient of Var::grad() treating a missing gradient as zero.
inline Matrix grad_or_zero(const ad::Var& v) {
    return v.grad().size() == 0 ? Matrix::Zero(v.rows(), v.cols()) : v.grad();
}

/// Small model used where the default widths would make finite differences slow.
inline ModelConfig tiny_config(int latent = 2, int hidden = 4) {
    ModelConfig c;
    c.latent_dim = latent;
    c.mlp_hidden = hidden;
    c.mlp_layers = 1;
    c.rnn_hidden = hidden;
    c.activation = nn::Activation::Tanh;
    c.env_interventions = {0, 1, 5};
    return c;
}

/// Random trajectory with the given horizon, not produced by the simulator.
inline sim::Trajectory random_trajectory(Rng& rng, int horizon, int obs_dim = 8, int action_dim = 2, int env = 0) {
    sim::Trajectory t;
    t.observations = rng.normal_matrix(horizon + 1, obs_dim);
    t.actions = rng.normal_matrix(horizon + 1, action_dim);
    t.env = env;
    return t;
}

using OpFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

// Evaluates sum(op(inputs) * W) so every output entry carries a distinct weight.
inline double weighted_output(const OpFn& op, const std::vector<Matrix>& inputs, const Matrix& w) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& m : inputs) vars.push_back(tape.constant(m));
    const ad::Var out = op(tape, vars);
    return (out.value().array() * w.array()).sum();
}

// Worst relative error over all inputs between the tape gradient and central differences.
inline double op_gradient_error(const OpFn& op, std::vector<Matrix> inputs, Rng& rng) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& m : inputs) vars.push_back(tape.variable(m));
    const ad::Var out = op(tape, vars);
    const Matrix w = rng.normal_matrix(out.rows(), out.cols());
    tape.backward(ad::sum(ad::mul(out, tape.constant(w))));
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Matrix numeric = numeric_gradient([&] { return weighted_output(op, inputs, w); }, inputs[i]);
        worst = std::max(worst, relative_error(grad_or_zero(vars[i]), numeric));
    }
    return worst;
}

inline sim::SimState random_state(Rng& rng, double half) {
    sim::SimState s;
    for (double& x : s.pos) x = rng.uniform(-half, half);
    return s;
}

inline bool same_bits(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

// Names of the EnvParams fields that differ, at the granularity the intervention table uses.
inline std::set<std::string> changed_fields(const sim::EnvParams& a, const sim::EnvParams& b) {
    std::set<std::string> out;
    for (int i = 0; i < sim::kParticles; ++i) {
        const auto u = static_cast<std::size_t>(i);
        if (a.masses[u] != b.masses[u]) out.insert("mass" + std::to_string(i + 1));
        if (a.constraints[u] != b.constraints[u]) out.insert("constraint" + std::to_string(i + 1));
    }
    auto spring_key = [](const sim::Spring& s) { return std::to_string(s.a + 1) + std::to_string(s.b + 1); };
    std::map<std::string, sim::Spring> sa, sb;
    for (const auto& s : a.springs) sa[spring_key(s)] = s;
    for (const auto& s : b.springs) sb[spring_key(s)] = s;
    for (const auto& [k, s] : sa) {
        if (!sb.contains(k)) {
            out.insert("spring" + k + " removed");
        } else if (sb[k].stiffness != s.stiffness) {
            out.insert("spring" + k + " stiffness");
        } else if (!(sb[k] == s)) {
            out.insert("spring" + k + " other");
        }
    }
    for (const auto& [k, s] : sb) {
        if (!sa.contains(k)) out.insert("spring" + k + " added");
    }
    if (a.pair_forces != b.pair_forces) out.insert("pair forces");
    if (a.box != b.box || a.dt != b.dt || a.action_gain != b.action_gain || a.softening != b.softening) {
        out.insert("globals");
    }
    return out;
}

}  // namespace vcd::testing
