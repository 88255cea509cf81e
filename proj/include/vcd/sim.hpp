#pragma once

// Two-dimensional four-particle system with springs, inverse-square pair
// forces, wall reflection and an external force on the fourth particle.
// Particles are indexed 0..3 internally; the intervention catalogue and the
// state naming (x1, y1, ..., x4, y4) use 1-based labels.

#include "vcd/autodiff.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vcd::sim {

inline constexpr int kParticles = 4;
inline constexpr int kStateDim = 8;
inline constexpr int kActionDim = 2;
inline constexpr int kNumInterventions = 18;

using IntMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StateVector = std::array<double, kStateDim>;
using ActionVector = std::array<double, kActionDim>;

enum class Constraint { Free, XFrozen, YFrozen };

struct Spring {
    int a = 0;
    int b = 0;
    double stiffness = 0.0;
    double rest_length = 0.0;
    bool operator==(const Spring&) const = default;
};

/// Force on a from b is strength * m_a * m_b * (a - b) / (|a - b|^2 + eps^2)^(3/2)
/// with eps = EnvParams::softening; eps = 0 gives the bare inverse-square law,
/// capped at separation 1e-6. Positive strength repels, negative attracts.
struct PairForce {
    int a = 0;
    int b = 0;
    double strength = 0.0;
    bool operator==(const PairForce&) const = default;
};

struct EnvParams {
    std::array<double, kParticles> masses{1.0, 1.0, 1.0, 1.0};
    std::vector<Spring> springs;
    std::vector<PairForce> pair_forces;
    std::array<Constraint, kParticles> constraints{Constraint::Free, Constraint::Free, Constraint::Free,
                                                   Constraint::Free};
    double box = 1.0;
    double dt = 0.05;
    double action_gain = 1.0;
    double softening = 0.3;

    /// Springs (1,2), (2,3); pair forces (1,3) and (1,4) attractive, (3,4) repulsive.
    static EnvParams defaults();
    /// Throws std::invalid_argument on non-positive masses, dt, box or bad indices.
    void validate() const;
    bool operator==(const EnvParams&) const = default;
};

/// Positions (x1, y1, ..., x4, y4).
struct SimState {
    StateVector pos{};
    bool operator==(const SimState&) const = default;
};

struct InterventionSpec {
    int id = 0;

    /// Throws std::out_of_range unless 0 <= id <= 18.
    explicit InterventionSpec(int id_ = 0);
    [[nodiscard]] std::string description() const;
    /// Ground-truth intervention targets as state indices (x1 = 0, y1 = 1, ...).
    [[nodiscard]] std::vector<int> targets() const;
};

std::string state_name(int index);

EnvParams apply_intervention(const EnvParams& base, const InterventionSpec& spec);

/// One overdamped step: x += dt * F / m, frozen axes held, reflection at +-box.
SimState step(const SimState& s, const ActionVector& action, const EnvParams& p);

/// Net force on each particle, (Fx1, Fy1, ..., Fx4, Fy4), including the action term.
StateVector net_forces(const SimState& s, const ActionVector& action, const EnvParams& p);

/// (8 + 2) x 8 adjacency: entry (parent, child) = 1 iff the child coordinate at t
/// depends on the parent coordinate (or action component) at t - 1.
IntMatrix ground_truth_graph(const EnvParams& p);

/// Folds a coordinate back into [-box, box] by repeated mirror reflection.
double reflect(double x, double box);

struct MixingMatrix {
    Matrix a;
    Matrix inverse;
    std::uint64_t seed = 0;

    /// Draws unit-Gaussian entries, redrawing until the condition number is below max_condition.
    static MixingMatrix draw(std::uint64_t seed, double max_condition = 1e3);
    static MixingMatrix from_matrix(Matrix a, std::uint64_t seed = 0);
    [[nodiscard]] double condition_number() const;
};

Eigen::VectorXd mix_observation(const SimState& s, const MixingMatrix& m);
/// Rows of `observations` mapped back to ground-truth states.
Matrix unmix(const Matrix& observations, const MixingMatrix& m);

struct Trajectory {
    Matrix observations;  // (T+1) x 8
    Matrix actions;       // (T+1) x 2
    int env = 0;          // index into the dataset's environment list
};

struct EnvironmentData {
    int index = 0;
    InterventionSpec spec;
    std::vector<Trajectory> trajectories;
};

struct Dataset {
    std::vector<EnvironmentData> envs;
    MixingMatrix mixing;
    int horizon = 50;
    std::uint64_t seed = 0;
    int action_hold = 5;
    EnvParams base = EnvParams::defaults();  // parameters before any intervention

    [[nodiscard]] std::size_t total_trajectories() const;
    /// Environment with the given intervention id, or nullptr.
    [[nodiscard]] const EnvironmentData* find(int intervention) const;
};

struct GenerateOptions {
    std::vector<int> interventions{0, 1, 5, 11, 14, 17};
    int n_traj = 2000;
    int horizon = 50;
    std::uint64_t seed = 0;
    std::uint64_t mixing_seed = 7;
    int action_hold = 5;
    EnvParams base = EnvParams::defaults();
};

/// Positions after rolling `p` from `initial` under `actions`, (T+1) x 8.
Matrix simulate(const SimState& initial, const Matrix& actions, const EnvParams& p);

/// Fully determined by options.seed and options.mixing_seed. Observations are
/// rounded to 32-bit precision so that stored and in-memory data agree exactly.
Dataset generate_dataset(const GenerateOptions& options);

/// Single trajectory of one environment, as generated inside generate_dataset.
Trajectory generate_trajectory(const EnvParams& p, const MixingMatrix& mixing, int horizon, int action_hold,
                               std::uint64_t seed, int env_index, Matrix* states = nullptr);

}  // namespace vcd::sim
