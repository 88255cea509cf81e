#pragma once

// Rollout error in ground-truth state space, the decoder Jacobian used to
// match latent dimensions to ground-truth coordinates, and graph / target
// recovery counts through that matching.

#include "vcd/models.hpp"
#include "vcd/sim.hpp"
#include "vcd/training.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vcd {

struct RolloutOptions {
    /// Observations are filtered up to and including this step; -1 means T/2.
    int observe_until = -1;
    /// Sample from the prior during prediction instead of following its mean.
    bool sample = false;
    std::uint64_t seed = 0;
};

/// Binarised beliefs of a causal model, or nullopt for the dense variants.
std::optional<FixedMasks> binarized_masks(const WorldModel& model);

/// Decoded observation means, one (T+1) x obs_dim matrix per trajectory, all
/// run in slot k. Up to the split the posterior mean drives the latent state,
/// afterwards the transition prior (mean, or a sample) does.
std::vector<Matrix> rollout(const WorldModel& model, const std::vector<const sim::Trajectory*>& trajectories, int k,
                            const RolloutOptions& options = {});

/// error_t = |A^-1 pred_t - A^-1 truth_t|^2 for every row t.
Eigen::VectorXd rollout_error(const Matrix& pred, const Matrix& truth, const sim::MixingMatrix& mixing);

struct EnvRollout {
    int env = 0;           // dataset environment index
    int intervention = 0;
    int slot = 0;          // model slot used
    int trajectories = 0;
    Eigen::VectorXd mean_error;  // per time step, averaged over trajectories
    double predicted_mean = 0.0;  // average over steps after the split
};

struct RolloutReport {
    std::string model;
    std::string dataset_tag;
    int horizon = 0;
    int split = 0;
    std::vector<EnvRollout> envs;
    double predicted_mean = 0.0;  // mean of the per-environment values
};

/// Rollouts for every dataset environment the model has a slot for.
/// Environments without a slot are skipped unless `slot_override` >= 0, which
/// forces a single slot for all of them.
RolloutReport evaluate_rollouts(const WorldModel& model, const sim::Dataset& data, const RolloutOptions& options = {},
                                int slot_override = -1);

struct DisentanglementMatrix {
    Matrix jacobian;              // states x latents, mean |d state_i / d z_j|
    std::vector<int> assignment;  // latent index assigned to each ground-truth state
    bool injective = true;        // no latent is assigned to two states
};

/// Per-state argmax with ties to the lowest index.
std::vector<int> assign_latents(const Matrix& jacobian);

/// Jacobian of A^-1 * decode_mean(z) averaged over the probe rows.
DisentanglementMatrix disentanglement_jacobian(const WorldModel& model, const sim::MixingMatrix& mixing,
                                               const Matrix& probes);

/// Posterior means of `count` observations drawn deterministically from the dataset.
Matrix probe_latents(const WorldModel& model, const sim::Dataset& data, int count = 512, std::uint64_t seed = 0);

struct EnvTargets {
    int slot = 0;
    int intervention = 0;
    std::vector<int> learned;        // latent dimensions
    std::vector<int> mapped;         // ground-truth states reached through the assignment
    std::vector<int> truth;          // ground-truth target states
    int recovered = 0;               // |mapped & truth|
    int missed = 0;                  // |truth \ mapped|
    int false_positive = 0;          // learned latents that reach no ground-truth target
};

struct RecoveryReport {
    int possible_edges = 0;  // parents x latents
    int learned_edges = 0;   // in latent space
    int mapped_edges = 0;    // after mapping, duplicates collapsed
    int truth_edges = 0;
    int correct = 0;
    int missed = 0;
    int false_positive = 0;
    bool injective = true;
    IntMatrix mapped_graph;  // (states + actions) x states
    std::vector<EnvTargets> targets;
    [[nodiscard]] int total_learned_targets() const;
    [[nodiscard]] int total_target_false_positives() const;
    [[nodiscard]] bool all_targets_recovered() const;
};

/// learned_graph: (d + A) x d; learned_targets: K+1 x d (row 0 ignored);
/// truth: (states + A) x states; truth_targets[k]: ground-truth target states of slot k.
RecoveryReport graph_recovery(const IntMatrix& learned_graph, const IntMatrix& learned_targets,
                              const IntMatrix& truth, const std::vector<std::vector<int>>& truth_targets,
                              const std::vector<int>& assignment, const std::vector<int>& interventions = {});

/// graph_recovery for a causal model's binarised beliefs against the graph of
/// `base` and the catalogue targets of each slot's intervention.
RecoveryReport evaluate_recovery(const WorldModel& model, const sim::EnvParams& base,
                                 const std::vector<int>& assignment);

}  // namespace vcd
