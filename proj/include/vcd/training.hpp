#pragma once

// Sequence ELBO, training objectives and the optimisation loop.
//
// Per trajectory b in environment slot k:
//   ELBO_b = sum_t log p(o_t | z_t) - sum_t KL(q(z_t | o_t) || p_k(z_t | h_t))
// with one reparameterised posterior sample per step, a standard-normal prior
// at t = 0 and zero initial recurrent state. For the causal model the KL at
// t >= 1 is the per-dimension mixture
//   sum_i (1 - R_ki) KL(q_i || p0_i) + R_ki KL(q_i || pk_i).
//
// The minimised loss is
//   -sum_k mean_{b in k} ELBO_b + lambda_G * sum sigmoid(alpha) + lambda_I * sum sigmoid(beta)
// where the penalties apply only to beliefs that are being trained.

#include "vcd/models.hpp"
#include "vcd/optim.hpp"
#include "vcd/sim.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace vcd {

/// Time-major minibatch of trajectories, grouped by environment slot.
struct Batch {
    Index size = 0;
    int horizon = 0;
    Matrix observations;  // (T+1)B x obs_dim
    Matrix actions;       // (T+1)B x action_dim
    std::vector<int> env;        // model slot of each trajectory, non-decreasing
    std::vector<double> weight;  // 1 / (number of batch rows drawn from the same source environment)

    /// Contiguous [start, start + count) row ranges with equal slot.
    struct Group {
        int env = 0;
        Index start = 0;
        Index count = 0;
    };
    [[nodiscard]] std::vector<Group> groups() const;
};

/// Trajectories are reordered stably by slot. All must share one horizon.
/// `sources` tags the dataset environment each trajectory came from and sets
/// the weights; when empty the slot is used as the tag.
Batch make_batch(const std::vector<const sim::Trajectory*>& trajectories, const std::vector<int>& slots,
                 const std::vector<int>& sources = {});

/// Every random input of one ELBO evaluation, drawn outside the graph.
struct ElboNoise {
    Matrix posterior;  // (T+1)B x latent_dim standard normal
    MaskNoise masks;   // one logistic draw per trajectory, shared by all its steps

    static ElboNoise draw(Rng& rng, const Batch& batch, const ModelConfig& cfg);
    /// All-zero noise: posterior means and mask = 1[logit > 0].
    static ElboNoise zeros(const Batch& batch, const ModelConfig& cfg);
};

/// Masks held fixed instead of sampled from the beliefs.
struct FixedMasks {
    Matrix graph;    // parents x latent
    Matrix targets;  // num_envs x latent, row 0 must be zero
};

struct ElboTerms {
    ad::Var reconstruction;  // B x 1
    ad::Var kl;              // B x 1
    ad::Var elbo;            // B x 1
};

ElboTerms elbo_terms(nn::Session& s, const WorldModel& model, const Batch& batch, const ElboNoise& noise,
                     const FixedMasks* fixed = nullptr);

/// Per-dimension KL mixture (1 - R) KL(q || p0) + R KL(q || pk), elementwise.
ad::Var kl_factorised_elementwise(const GaussianVar& q, const GaussianVar& p0, const GaussianVar& pk,
                                  const ad::Var& targets);
/// The same summed to a scalar.
ad::Var kl_factorised(const GaussianVar& q, const GaussianVar& p0, const GaussianVar& pk, const ad::Var& targets);

struct LossBreakdown {
    std::int64_t step = 0;
    // ELBO terms per time step, averaged over trajectories of a source and summed over sources
    double reconstruction = 0.0;
    double kl = 0.0;
    double elbo = 0.0;            // reconstruction - kl
    double graph_sparsity = 0.0;  // expected edge count
    double target_sparsity = 0.0;  // expected target count
    double total = 0.0;           // -elbo + lambda_G * graph_sparsity + lambda_I * target_sparsity
    double grad_norm = 0.0;       // before clipping
};

struct Penalties {
    double lambda_graph = 0.0;
    double lambda_targets = 0.0;
    /// Slots whose target rows are penalised; empty means all.
    std::vector<int> target_slots;
};

struct Loss {
    ad::Var total;
    LossBreakdown breakdown;
};

Loss build_loss(nn::Session& s, const WorldModel& model, const Batch& batch, const ElboNoise& noise,
                const Penalties& penalties, const FixedMasks* fixed = nullptr);

struct ElboValue {
    double elbo = 0.0;
    double reconstruction = 0.0;
    double kl = 0.0;
};

/// ELBO of a single trajectory in slot k. Without `fixed` the masks come from
/// the beliefs under `noise`.
ElboValue elbo_trajectory(const WorldModel& model, const sim::Trajectory& traj, int k, const ElboNoise& noise,
                          const FixedMasks* fixed = nullptr);

struct TrainConfig {
    double lr = 1e-3;
    int batch_per_env = 2;
    double lambda_graph = 0.01;
    double lambda_targets = 0.01;
    std::uint64_t seed = 0;
    std::int64_t steps = 50000;
    double grad_clip = 100.0;

    /// Throws std::invalid_argument on non-positive rates or budgets.
    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Raised when the loss or its gradient stops being finite.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::int64_t step, const std::string& what);
    [[nodiscard]] std::int64_t step() const { return step_; }

private:
    std::int64_t step_;
};

enum class TrainMode {
    Joint,  // every parameter; penalties on all beliefs (vcd)
    Adapt,  // only the mechanisms and target row of one slot; encoder, decoder and graph frozen
};

class Trainer {
public:
    /// Joint mode maps every dataset environment to the model slot of its
    /// intervention id. Adapt mode trains slot `adapt_slot` on the dataset
    /// environments whose id matches that slot.
    Trainer(WorldModel& model, const sim::Dataset& data, TrainConfig cfg, TrainMode mode = TrainMode::Joint,
            int adapt_slot = -1);

    /// One optimisation step. Throws DivergenceError.
    LossBreakdown step();
    /// Steps until cfg.steps have been taken in total.
    void run(const std::function<void(const LossBreakdown&)>& on_step = {});

    [[nodiscard]] std::int64_t steps_done() const { return optimizer_.steps(); }
    [[nodiscard]] const TrainConfig& config() const { return cfg_; }
    [[nodiscard]] TrainMode mode() const { return mode_; }
    [[nodiscard]] int adapt_slot() const { return adapt_slot_; }
    [[nodiscard]] const std::vector<ad::Parameter*>& trainable() const { return trainable_; }
    Adam& optimizer() { return optimizer_; }
    Rng& rng() { return rng_; }
    /// Allows extending a resumed run.
    void set_total_steps(std::int64_t steps) { cfg_.steps = steps; }

private:
    Batch sample_batch();

    WorldModel& model_;
    const sim::Dataset& data_;
    TrainConfig cfg_;
    TrainMode mode_;
    int adapt_slot_;
    std::vector<ad::Parameter*> trainable_;
    Penalties penalties_;
    std::vector<std::pair<const sim::EnvironmentData*, int>> sources_;  // dataset env -> model slot
    Adam optimizer_;
    Rng rng_;
};

/// Adds a slot for `intervention` to a trained model and fits it on the
/// matching environment of `data`, leaving every other parameter untouched
/// (verified bit-for-bit afterwards; a violation throws std::logic_error).
/// Returns the new slot.
int adapt(WorldModel& model, const sim::Dataset& data, int intervention, const TrainConfig& cfg,
          const std::function<void(const LossBreakdown&)>& on_step = {});

/// Parameters trained in the given mode.
std::vector<ad::Parameter*> trainable_parameters(const WorldModel& model, TrainMode mode, int adapt_slot);

}  // namespace vcd
