#pragma once

// Latent state-space world models: a shared Gaussian encoder/decoder pair and
// one of three transition families.
//
//   vcd        per-dimension recurrent mechanisms gated by a learned graph, with
//              per-environment replacement mechanisms switched in by learned targets
//   rssm       one dense recurrent transition shared by all environments
//   multi-rssm one dense recurrent transition per environment
//
// All sequence tensors are laid out time-major: row t * B + b holds
// trajectory b at time t.

#include "vcd/gaussian.hpp"
#include "vcd/nn.hpp"
#include "vcd/structure.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace vcd {

enum class Variant { Vcd, Rssm, MultiRssm };

std::string to_string(Variant v);
/// Accepts "vcd", "rssm", "multi-rssm".
Variant variant_from_string(const std::string& s);

struct ModelConfig {
    int obs_dim = 8;
    int action_dim = 2;
    int latent_dim = 16;
    int mlp_hidden = 64;
    int mlp_layers = 2;
    int rnn_hidden = 64;
    nn::Activation activation = nn::Activation::Relu;
    double logvar_floor = kLogVarFloor;
    double graph_logit_init = kGraphLogitInit;
    double target_logit_init = kTargetLogitInit;
    /// Intervention id of each model environment slot; slot 0 is observational.
    std::vector<int> env_interventions{0, 1, 5, 11, 14, 17};

    [[nodiscard]] int num_envs() const { return static_cast<int>(env_interventions.size()); }
    [[nodiscard]] int parents() const { return latent_dim + action_dim; }
    /// Throws std::invalid_argument on non-positive sizes or an empty environment list.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct TransitionOutput {
    ad::Var hidden;
    GaussianVar prior;
};

/// Recurrent transition over the full [z, a] input with a Gaussian head.
struct DenseTransition {
    nn::GroupedGru gru;
    nn::GroupedMlp head;
    Index latent = 0;
    double logvar_floor = kLogVarFloor;

    static DenseTransition create(nn::ParameterStore& store, const std::string& name, const ModelConfig& cfg,
                                  Rng& rng);
    /// h' = GRU(h, [z, a]); prior over z' from the head on h'.
    TransitionOutput step(nn::Session& s, const ad::Var& h, const ad::Var& z, const ad::Var& a) const;
    [[nodiscard]] std::vector<ad::Parameter*> parameters() const;
};

struct CausalOutput {
    ad::Var hidden;
    GaussianVar prior;           // per-dimension selection between the two below
    GaussianVar observational;   // shared mechanisms
    GaussianVar interventional;  // environment-k mechanisms; equals observational when k = 0
};

/// d independent mechanisms. Mechanism i owns a recurrent unit with its own
/// hidden block, reads [z, a] gated by column i of the graph mask, and emits a
/// 1-D Gaussian through either the shared head or the head of environment k.
///
/// Hidden state layout: B x (d * H), block i belongs to mechanism i.
/// Flat masks use the child-major layout of flatten_child_major.
struct CausalTransition {
    nn::GroupedGru gru;
    nn::GroupedMlp observational_head;
    std::vector<nn::GroupedMlp> env_heads;  // env_heads[k - 1] serves environment k
    Index latent = 0;
    Index action = 0;
    Index hidden_size = 0;
    double logvar_floor = kLogVarFloor;

    static CausalTransition create(nn::ParameterStore& store, const std::string& name, const ModelConfig& cfg,
                                   Rng& rng);
    /// Appends the head of a new environment, initialised as a copy of the shared head.
    void add_env_head(nn::ParameterStore& store, const std::string& name, const ModelConfig& cfg, Rng& rng);

    /// tile([z, a], d) * flat_mask, B x d(d + A). flat_mask may have 1 or B rows.
    ad::Var masked_inputs(const ad::Var& z, const ad::Var& a, const ad::Var& flat_mask) const;
    ad::Var advance(nn::Session& s, const ad::Var& h, const ad::Var& masked) const;
    /// k = 0 selects the shared head.
    GaussianVar head(nn::Session& s, const ad::Var& h, int k) const;

    /// One transition of every row in environment k. `targets` is the binary
    /// target row (1 x d or B x d). Throws std::invalid_argument when k = 0 and
    /// any target is set, or k is out of range.
    CausalOutput step(nn::Session& s, const ad::Var& h, const ad::Var& z, const ad::Var& a, const ad::Var& flat_mask,
                      const ad::Var& targets, int k) const;

    [[nodiscard]] std::vector<ad::Parameter*> shared_parameters() const;
    [[nodiscard]] std::vector<ad::Parameter*> env_parameters(int k) const;
};

class WorldModel {
public:
    WorldModel(Variant variant, ModelConfig cfg, std::uint64_t seed);

    WorldModel(const WorldModel&) = delete;
    WorldModel& operator=(const WorldModel&) = delete;

    [[nodiscard]] Variant variant() const { return variant_; }
    [[nodiscard]] const ModelConfig& config() const { return cfg_; }
    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] int num_envs() const { return cfg_.num_envs(); }
    [[nodiscard]] bool has_beliefs() const { return variant_ == Variant::Vcd; }
    nn::ParameterStore& params() { return store_; }
    [[nodiscard]] const nn::ParameterStore& params() const { return store_; }

    /// q(z | o) for every row of obs.
    GaussianVar encode(nn::Session& s, const ad::Var& obs) const;
    /// p(o | z) for every row of z.
    GaussianVar decode(nn::Session& s, const ad::Var& z) const;

    /// Dense transition serving environment k (rssm ignores k).
    [[nodiscard]] const DenseTransition& dense(int k) const;
    [[nodiscard]] const CausalTransition& causal() const;
    [[nodiscard]] GraphBelief graph() const;
    [[nodiscard]] InterventionBelief targets() const;
    /// Width of the recurrent state of one trajectory.
    [[nodiscard]] Index hidden_width() const;

    /// Model slot of a dataset intervention id, or -1. For rssm every id maps to 0.
    [[nodiscard]] int env_slot(int intervention) const;

    /// Appends an environment slot for `intervention` and returns its index.
    /// vcd: mechanism heads copied from the shared ones plus a target row;
    /// multi-rssm: a freshly initialised transition; rssm: bookkeeping only.
    int add_environment(int intervention);

    [[nodiscard]] std::vector<ad::Parameter*> encoder_decoder_parameters() const;
    /// Everything that defines the transition used in slot k, belief rows included.
    [[nodiscard]] std::vector<ad::Parameter*> environment_parameters(int k) const;

private:
    void build_env_slot(int k);

    Variant variant_;
    ModelConfig cfg_;
    std::uint64_t seed_;
    nn::ParameterStore store_;
    nn::GroupedMlp encoder_;
    nn::GroupedMlp decoder_;
    std::vector<DenseTransition> dense_;
    std::optional<CausalTransition> causal_;
    ad::Parameter* alpha_ = nullptr;
    std::vector<ad::Parameter*> beta_;
};

/// Splits a B x 2n head output into mean (first n) and clipped logvar.
GaussianVar split_gaussian(const ad::Var& out, Index n, double floor);

}  // namespace vcd
