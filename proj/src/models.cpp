#include "vcd/models.hpp"

#include <stdexcept>

namespace vcd {

using ad::Var;

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Vcd: return "vcd";
        case Variant::Rssm: return "rssm";
        case Variant::MultiRssm: return "multi-rssm";
    }
    return "vcd";
}

Variant variant_from_string(const std::string& s) {
    if (s == "vcd") return Variant::Vcd;
    if (s == "rssm") return Variant::Rssm;
    if (s == "multi-rssm") return Variant::MultiRssm;
    throw std::invalid_argument("unknown model variant '" + s + "' (expected vcd, rssm or multi-rssm)");
}

void ModelConfig::validate() const {
    if (obs_dim <= 0 || action_dim < 0 || latent_dim <= 0 || mlp_hidden <= 0 || mlp_layers < 0 || rnn_hidden <= 0) {
        throw std::invalid_argument("model sizes must be positive");
    }
    if (env_interventions.empty()) throw std::invalid_argument("model needs at least one environment");
    if (env_interventions.front() != 0) throw std::invalid_argument("environment slot 0 must be observational (id 0)");
}

GaussianVar split_gaussian(const Var& out, Index n, double floor) {
    return {ad::slice_cols(out, 0, n), clip_logvar(ad::slice_cols(out, n, n), floor)};
}

// Dense transition

DenseTransition DenseTransition::create(nn::ParameterStore& store, const std::string& name, const ModelConfig& cfg,
                                        Rng& rng) {
    DenseTransition t;
    t.latent = cfg.latent_dim;
    t.logvar_floor = cfg.logvar_floor;
    t.gru = nn::GroupedGru::create(store, name + "/gru", 1, cfg.parents(), cfg.rnn_hidden, rng);
    t.head = nn::GroupedMlp::create(store, name + "/head", 1, cfg.rnn_hidden, cfg.mlp_hidden, cfg.mlp_layers,
                                    2 * cfg.latent_dim, cfg.activation, rng);
    return t;
}

TransitionOutput DenseTransition::step(nn::Session& s, const Var& h, const Var& z, const Var& a) const {
    const Var next = gru.step(s, h, ad::concat_cols({z, a}));
    return {next, split_gaussian(head(s, next), latent, logvar_floor)};
}

std::vector<ad::Parameter*> DenseTransition::parameters() const {
    auto out = gru.parameters();
    for (auto* p : head.parameters()) out.push_back(p);
    return out;
}

// Causal transition

CausalTransition CausalTransition::create(nn::ParameterStore& store, const std::string& name,
                                          const ModelConfig& cfg, Rng& rng) {
    CausalTransition t;
    t.latent = cfg.latent_dim;
    t.action = cfg.action_dim;
    t.hidden_size = cfg.rnn_hidden;
    t.logvar_floor = cfg.logvar_floor;
    t.gru = nn::GroupedGru::create(store, name + "/gru", cfg.latent_dim, cfg.parents(), cfg.rnn_hidden, rng);
    t.observational_head = nn::GroupedMlp::create(store, name + "/head0", cfg.latent_dim, cfg.rnn_hidden,
                                                  cfg.mlp_hidden, cfg.mlp_layers, 2, cfg.activation, rng);
    return t;
}

void CausalTransition::add_env_head(nn::ParameterStore& store, const std::string& name, const ModelConfig& cfg,
                                    Rng& rng) {
    const std::string head_name = name + "/head" + std::to_string(env_heads.size() + 1);
    auto head = nn::GroupedMlp::create(store, head_name, cfg.latent_dim, cfg.rnn_hidden, cfg.mlp_hidden,
                                       cfg.mlp_layers, 2, cfg.activation, rng);
    // Starting from the shared mechanism, an unused target leaves predictions unchanged.
    head.copy_from(observational_head);
    env_heads.push_back(std::move(head));
}

Var CausalTransition::masked_inputs(const Var& z, const Var& a, const Var& flat_mask) const {
    const Var za = action > 0 ? ad::concat_cols({z, a}) : z;
    return ad::tile_cols(za, latent) * flat_mask;
}

Var CausalTransition::advance(nn::Session& s, const Var& h, const Var& masked) const { return gru.step(s, h, masked); }

GaussianVar CausalTransition::head(nn::Session& s, const Var& h, int k) const {
    if (k < 0 || k > static_cast<int>(env_heads.size())) {
        throw std::out_of_range("no mechanism head for environment " + std::to_string(k));
    }
    const nn::GroupedMlp& net = k == 0 ? observational_head : env_heads[static_cast<std::size_t>(k - 1)];
    const Var out = net(s, h);  // B x 2d, [mean_i, logvar_i] per dimension
    return {ad::grouped_slice(out, latent, 2, 0, 1),
            clip_logvar(ad::grouped_slice(out, latent, 2, 1, 1), logvar_floor)};
}

CausalOutput CausalTransition::step(nn::Session& s, const Var& h, const Var& z, const Var& a, const Var& flat_mask,
                                    const Var& targets, int k) const {
    if (k == 0 && (targets.value().array() != 0.0).any()) {
        throw std::invalid_argument("the observational environment cannot have intervention targets");
    }
    const Var next = advance(s, h, masked_inputs(z, a, flat_mask));
    CausalOutput out;
    out.hidden = next;
    out.observational = head(s, next, 0);
    if (k == 0) {
        out.interventional = out.observational;
        out.prior = out.observational;
        return out;
    }
    out.interventional = head(s, next, k);
    const GaussianVar& p0 = out.observational;
    const GaussianVar& pk = out.interventional;
    out.prior = {p0.mean + targets * (pk.mean - p0.mean), p0.logvar + targets * (pk.logvar - p0.logvar)};
    return out;
}

std::vector<ad::Parameter*> CausalTransition::shared_parameters() const {
    auto out = gru.parameters();
    for (auto* p : observational_head.parameters()) out.push_back(p);
    return out;
}

std::vector<ad::Parameter*> CausalTransition::env_parameters(int k) const {
    if (k == 0) return shared_parameters();
    if (k < 0 || k > static_cast<int>(env_heads.size())) {
        throw std::out_of_range("no mechanism head for environment " + std::to_string(k));
    }
    return env_heads[static_cast<std::size_t>(k - 1)].parameters();
}

// World model

WorldModel::WorldModel(Variant variant, ModelConfig cfg, std::uint64_t seed)
    : variant_(variant), cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();
    Rng rng(derive_seed(seed_, 0x454E43));
    const Index d = cfg_.latent_dim;
    encoder_ = nn::GroupedMlp::create(store_, "encoder", 1, cfg_.obs_dim, cfg_.mlp_hidden, cfg_.mlp_layers, 2 * d,
                                      cfg_.activation, rng);
    decoder_ = nn::GroupedMlp::create(store_, "decoder", 1, d, cfg_.mlp_hidden, cfg_.mlp_layers, 2 * cfg_.obs_dim,
                                      cfg_.activation, rng);
    switch (variant_) {
        case Variant::Rssm: dense_.push_back(DenseTransition::create(store_, "transition", cfg_, rng)); break;
        case Variant::MultiRssm:
            dense_.push_back(DenseTransition::create(store_, "transition/env0", cfg_, rng));
            for (int k = 1; k < num_envs(); ++k) build_env_slot(k);
            break;
        case Variant::Vcd:
            causal_ = CausalTransition::create(store_, "causal", cfg_, rng);
            alpha_ = &store_.add("alpha", Matrix::Constant(cfg_.parents(), d, cfg_.graph_logit_init));
            for (int k = 1; k < num_envs(); ++k) build_env_slot(k);
            break;
    }
}

void WorldModel::build_env_slot(int k) {
    Rng rng(derive_seed(seed_, 0x534C4F54, static_cast<std::uint64_t>(k)));
    if (variant_ == Variant::MultiRssm) {
        dense_.push_back(DenseTransition::create(store_, "transition/env" + std::to_string(k), cfg_, rng));
    } else if (variant_ == Variant::Vcd) {
        causal_->add_env_head(store_, "causal", cfg_, rng);
        beta_.push_back(&store_.add("beta/env" + std::to_string(k),
                                    Matrix::Constant(1, cfg_.latent_dim, cfg_.target_logit_init)));
    }
}

int WorldModel::add_environment(int intervention) {
    cfg_.env_interventions.push_back(intervention);
    const int k = num_envs() - 1;
    build_env_slot(k);
    return k;
}

GaussianVar WorldModel::encode(nn::Session& s, const Var& obs) const {
    return split_gaussian(encoder_(s, obs), cfg_.latent_dim, cfg_.logvar_floor);
}

GaussianVar WorldModel::decode(nn::Session& s, const Var& z) const {
    return split_gaussian(decoder_(s, z), cfg_.obs_dim, cfg_.logvar_floor);
}

const DenseTransition& WorldModel::dense(int k) const {
    if (variant_ == Variant::Vcd) throw std::logic_error("vcd model has no dense transition");
    if (variant_ == Variant::Rssm) return dense_.front();
    if (k < 0 || k >= static_cast<int>(dense_.size())) {
        throw std::out_of_range("no transition for environment " + std::to_string(k));
    }
    return dense_[static_cast<std::size_t>(k)];
}

const CausalTransition& WorldModel::causal() const {
    if (!causal_) throw std::logic_error(to_string(variant_) + " model has no causal transition");
    return *causal_;
}

GraphBelief WorldModel::graph() const {
    if (!alpha_) throw std::logic_error(to_string(variant_) + " model has no graph belief");
    return {alpha_};
}

InterventionBelief WorldModel::targets() const {
    if (!alpha_) throw std::logic_error(to_string(variant_) + " model has no target belief");
    return {beta_};
}

Index WorldModel::hidden_width() const {
    return variant_ == Variant::Vcd ? Index{cfg_.latent_dim} * cfg_.rnn_hidden : Index{cfg_.rnn_hidden};
}

int WorldModel::env_slot(int intervention) const {
    if (variant_ == Variant::Rssm) return 0;
    for (int k = 0; k < num_envs(); ++k) {
        if (cfg_.env_interventions[static_cast<std::size_t>(k)] == intervention) return k;
    }
    return -1;
}

std::vector<ad::Parameter*> WorldModel::encoder_decoder_parameters() const {
    auto out = encoder_.parameters();
    for (auto* p : decoder_.parameters()) out.push_back(p);
    return out;
}

std::vector<ad::Parameter*> WorldModel::environment_parameters(int k) const {
    if (k < 0 || k >= num_envs()) throw std::out_of_range("no environment slot " + std::to_string(k));
    switch (variant_) {
        case Variant::Rssm: return dense_.front().parameters();
        case Variant::MultiRssm: return dense_[static_cast<std::size_t>(k)].parameters();
        case Variant::Vcd: {
            auto out = causal_->env_parameters(k);
            if (k == 0) {
                out.push_back(alpha_);
            } else {
                out.push_back(beta_[static_cast<std::size_t>(k - 1)]);
            }
            return out;
        }
    }
    return {};
}

}  // namespace vcd
