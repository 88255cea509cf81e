#include "vcd/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>

namespace vcd {

using ad::Var;

std::vector<Batch::Group> Batch::groups() const {
    std::vector<Group> out;
    for (Index b = 0; b < size; ++b) {
        const int k = env[static_cast<std::size_t>(b)];
        if (out.empty() || out.back().env != k) {
            out.push_back({k, b, 1});
        } else {
            ++out.back().count;
        }
    }
    return out;
}

Batch make_batch(const std::vector<const sim::Trajectory*>& trajectories, const std::vector<int>& slots,
                 const std::vector<int>& sources) {
    if (trajectories.empty()) throw std::invalid_argument("make_batch: no trajectories");
    if (trajectories.size() != slots.size()) throw std::invalid_argument("make_batch: one slot per trajectory");
    if (!sources.empty() && sources.size() != slots.size()) {
        throw std::invalid_argument("make_batch: one source per trajectory");
    }
    std::vector<std::size_t> order(trajectories.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return slots[a] < slots[b]; });

    Batch batch;
    batch.size = static_cast<Index>(trajectories.size());
    const Index steps = trajectories.front()->observations.rows();
    batch.horizon = static_cast<int>(steps) - 1;
    const Index o = trajectories.front()->observations.cols();
    const Index a = trajectories.front()->actions.cols();
    batch.observations.resize(steps * batch.size, o);
    batch.actions.resize(steps * batch.size, a);
    for (Index b = 0; b < batch.size; ++b) {
        const sim::Trajectory& tr = *trajectories[order[static_cast<std::size_t>(b)]];
        if (tr.observations.rows() != steps || tr.actions.rows() != steps || tr.observations.cols() != o ||
            tr.actions.cols() != a) {
            throw std::invalid_argument("make_batch: trajectories differ in shape");
        }
        for (Index t = 0; t < steps; ++t) {
            batch.observations.row(t * batch.size + b) = tr.observations.row(t);
            batch.actions.row(t * batch.size + b) = tr.actions.row(t);
        }
        batch.env.push_back(slots[order[static_cast<std::size_t>(b)]]);
    }
    const std::vector<int>& tags = sources.empty() ? slots : sources;
    std::map<int, int> counts;
    for (int tag : tags) ++counts[tag];
    for (Index b = 0; b < batch.size; ++b) {
        batch.weight.push_back(1.0 / counts[tags[order[static_cast<std::size_t>(b)]]]);
    }
    return batch;
}

ElboNoise ElboNoise::draw(Rng& rng, const Batch& batch, const ModelConfig& cfg) {
    ElboNoise n;
    n.posterior = rng.normal_matrix((batch.horizon + 1) * batch.size, cfg.latent_dim);
    n.masks = MaskNoise::draw(rng, batch.size, cfg.parents(), cfg.latent_dim);
    return n;
}

ElboNoise ElboNoise::zeros(const Batch& batch, const ModelConfig& cfg) {
    ElboNoise n;
    n.posterior = Matrix::Zero((batch.horizon + 1) * batch.size, cfg.latent_dim);
    n.masks.graph = Matrix::Zero(batch.size, Index{cfg.parents()} * cfg.latent_dim);
    n.masks.targets = Matrix::Zero(batch.size, cfg.latent_dim);
    return n;
}

Var kl_factorised_elementwise(const GaussianVar& q, const GaussianVar& p0, const GaussianVar& pk,
                              const Var& targets) {
    const Var kl0 = gaussian_kl_elementwise(q, p0);
    const Var klk = gaussian_kl_elementwise(q, pk);
    return kl0 + targets * (klk - kl0);
}

Var kl_factorised(const GaussianVar& q, const GaussianVar& p0, const GaussianVar& pk, const Var& targets) {
    return ad::sum(kl_factorised_elementwise(q, p0, pk, targets));
}

namespace {

GaussianVar rows_of(const GaussianVar& g, Index start, Index count) {
    return {ad::slice_rows(g.mean, start, count), ad::slice_rows(g.logvar, start, count)};
}

std::vector<Index> index_range(Index start, Index count) {
    std::vector<Index> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), start);
    return idx;
}

void check_batch(const WorldModel& model, const Batch& batch, const ElboNoise& noise) {
    const ModelConfig& cfg = model.config();
    const Index rows = (batch.horizon + 1) * batch.size;
    if (batch.horizon < 0 || batch.observations.rows() != rows || batch.actions.rows() != rows) {
        throw ad::ShapeError("batch layout does not match its size and horizon");
    }
    if (batch.observations.cols() != cfg.obs_dim || batch.actions.cols() != cfg.action_dim) {
        throw ad::ShapeError("batch widths do not match the model");
    }
    for (int k : batch.env) {
        if (k < 0 || k >= model.num_envs()) throw std::out_of_range("environment slot " + std::to_string(k));
    }
    if (noise.posterior.rows() != rows || noise.posterior.cols() != cfg.latent_dim) {
        throw ad::ShapeError("posterior noise shape does not match the batch");
    }
}

// Sum over t >= 1 of the per-dimension KL, B x latent, for dense transitions.
Var dense_transition_kl(nn::Session& s, const WorldModel& model, const Batch& batch, const GaussianVar& post,
                        const Var& z, const Var& act) {
    const Index B = batch.size;
    const Index d = model.config().latent_dim;
    std::vector<Var> per_group;
    const auto groups = model.variant() == Variant::Rssm
                            ? std::vector<Batch::Group>{{0, 0, B}}
                            : batch.groups();
    for (const auto& g : groups) {
        const DenseTransition& tr = model.dense(g.env);
        Var h = s.constant(Matrix::Zero(g.count, model.hidden_width()));
        Var acc = s.constant(Matrix::Zero(g.count, d));
        for (int t = 1; t <= batch.horizon; ++t) {
            const Index prev = (t - 1) * B + g.start;
            const Index cur = t * B + g.start;
            auto out = tr.step(s, h, ad::slice_rows(z, prev, g.count), ad::slice_rows(act, prev, g.count));
            h = out.hidden;
            acc = acc + gaussian_kl_elementwise(rows_of(post, cur, g.count), out.prior);
        }
        per_group.push_back(groups.size() == 1 ? acc : ad::scatter_rows(acc, index_range(g.start, g.count), B));
    }
    Var total = per_group.front();
    for (std::size_t i = 1; i < per_group.size(); ++i) total = total + per_group[i];
    return total;
}

Var causal_transition_kl(nn::Session& s, const WorldModel& model, const Batch& batch, const GaussianVar& post,
                         const Var& z, const Var& act, const ElboNoise& noise, const FixedMasks* fixed) {
    const ModelConfig& cfg = model.config();
    const CausalTransition& tr = model.causal();
    const Index B = batch.size;
    const Index d = cfg.latent_dim;
    const Index P = cfg.parents();
    const auto groups = batch.groups();

    // One graph sample and one target sample per trajectory, reused at every step.
    Var graph_mask;
    std::vector<Var> target_masks(groups.size());
    if (fixed) {
        if (fixed->graph.rows() != P || fixed->graph.cols() != d) throw ad::ShapeError("fixed graph mask shape");
        if (fixed->targets.rows() != model.num_envs() || fixed->targets.cols() != d) {
            throw ad::ShapeError("fixed target mask shape");
        }
        graph_mask = s.constant(flatten_child_major(fixed->graph));
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            if (groups[gi].env == 0) {
                if ((fixed->targets.row(0).array() != 0.0).any()) {
                    throw std::invalid_argument("the observational environment cannot have intervention targets");
                }
                continue;
            }
            target_masks[gi] = s.constant(fixed->targets.row(groups[gi].env));
        }
    } else {
        if (noise.masks.graph.rows() != B || noise.masks.graph.cols() != P * d ||
            noise.masks.targets.rows() != B || noise.masks.targets.cols() != d) {
            throw ad::ShapeError("mask noise shape does not match the batch");
        }
        const Var alpha = s.bind(*model.graph().alpha);
        graph_mask = ad::sample_mask_st(ad::broadcast_rows(flatten_child_major(alpha), B),
                                        s.constant(noise.masks.graph));
        const InterventionBelief beliefs = model.targets();
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            const auto& g = groups[gi];
            if (g.env == 0) continue;
            const Var beta = s.bind(*beliefs.rows[static_cast<std::size_t>(g.env - 1)]);
            target_masks[gi] = ad::sample_mask_st(ad::broadcast_rows(beta, g.count),
                                                  s.constant(noise.masks.targets.middleRows(g.start, g.count)));
        }
    }

    Var h = s.constant(Matrix::Zero(B, model.hidden_width()));
    Var acc0 = s.constant(Matrix::Zero(B, d));
    std::vector<Var> acc_k(groups.size());
    for (int t = 1; t <= batch.horizon; ++t) {
        const Index prev = (t - 1) * B;
        const Index cur = t * B;
        h = tr.advance(s, h, tr.masked_inputs(ad::slice_rows(z, prev, B), ad::slice_rows(act, prev, B), graph_mask));
        const GaussianVar q = rows_of(post, cur, B);
        const GaussianVar p0 = tr.head(s, h, 0);
        const Var kl0 = gaussian_kl_elementwise(q, p0);
        acc0 = acc0 + kl0;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
            const auto& g = groups[gi];
            if (g.env == 0) continue;
            const Var hk = ad::slice_rows(h, g.start, g.count);
            const GaussianVar pk = tr.head(s, hk, g.env);
            const Var klk = gaussian_kl_elementwise(rows_of(q, g.start, g.count), pk);
            const Var delta = target_masks[gi] * (klk - ad::slice_rows(kl0, g.start, g.count));
            acc_k[gi] = acc_k[gi].valid() ? acc_k[gi] + delta : delta;
        }
    }
    Var total = acc0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        if (!acc_k[gi].valid()) continue;
        const auto& g = groups[gi];
        total = total + ad::scatter_rows(acc_k[gi], index_range(g.start, g.count), B);
    }
    return total;
}

}  // namespace

ElboTerms elbo_terms(nn::Session& s, const WorldModel& model, const Batch& batch, const ElboNoise& noise,
                     const FixedMasks* fixed) {
    check_batch(model, batch, noise);
    const ModelConfig& cfg = model.config();
    const Index B = batch.size;
    const Index d = cfg.latent_dim;

    const Var obs = s.constant(batch.observations);
    const Var act = s.constant(batch.actions);
    const GaussianVar post = model.encode(s, obs);
    const Var z = gaussian_reparam_sample(post, s.constant(noise.posterior));
    const GaussianVar lik = model.decode(s, z);
    const Var reconstruction = ad::fold_rows(ad::sum_cols(gaussian_log_prob(obs, lik)), B);

    const GaussianVar standard{s.constant(Matrix::Zero(B, d)), s.constant(Matrix::Zero(B, d))};
    Var kl_elem = gaussian_kl_elementwise(rows_of(post, 0, B), standard);
    if (batch.horizon > 0) {
        kl_elem = kl_elem + (model.variant() == Variant::Vcd
                                 ? causal_transition_kl(s, model, batch, post, z, act, noise, fixed)
                                 : dense_transition_kl(s, model, batch, post, z, act));
    }
    const Var kl = ad::sum_cols(kl_elem);
    return {reconstruction, kl, reconstruction - kl};
}

Loss build_loss(nn::Session& s, const WorldModel& model, const Batch& batch, const ElboNoise& noise,
                const Penalties& penalties, const FixedMasks* fixed) {
    const ElboTerms terms = elbo_terms(s, model, batch, noise, fixed);
    Matrix w(batch.size, 1);
    for (Index b = 0; b < batch.size; ++b) w(b, 0) = batch.weight[static_cast<std::size_t>(b)];
    // Per time step, summed over source environments (the weights of one source sum to 1).
    w /= static_cast<double>(batch.horizon + 1);
    const Var weights = s.constant(w);

    Loss loss;
    LossBreakdown& br = loss.breakdown;
    const Var elbo = ad::sum(terms.elbo * weights);
    br.reconstruction = (terms.reconstruction.value().array() * w.array()).sum();
    br.kl = (terms.kl.value().array() * w.array()).sum();
    br.elbo = elbo.item();
    loss.total = -elbo;

    if (model.has_beliefs()) {
        const GraphBelief graph = model.graph();
        br.graph_sparsity = expected_sparsity(graph.alpha->value);
        if (penalties.lambda_graph != 0.0) {
            loss.total = loss.total + ad::scale(expected_sparsity(s.bind(*graph.alpha)), penalties.lambda_graph);
        }
        const InterventionBelief targets = model.targets();
        for (int k = 1; k < targets.num_envs(); ++k) {
            const bool penalised = penalties.target_slots.empty() ||
                                   std::find(penalties.target_slots.begin(), penalties.target_slots.end(), k) !=
                                       penalties.target_slots.end();
            if (!penalised) continue;
            ad::Parameter& row = *targets.rows[static_cast<std::size_t>(k - 1)];
            br.target_sparsity += expected_sparsity(row.value);
            if (penalties.lambda_targets != 0.0) {
                loss.total = loss.total + ad::scale(expected_sparsity(s.bind(row)), penalties.lambda_targets);
            }
        }
    }
    br.total = loss.total.item();
    return loss;
}

ElboValue elbo_trajectory(const WorldModel& model, const sim::Trajectory& traj, int k, const ElboNoise& noise,
                          const FixedMasks* fixed) {
    if (k < 0 || k >= model.num_envs()) throw std::out_of_range("environment slot " + std::to_string(k));
    const Batch batch = make_batch({&traj}, {k});
    nn::Session s = nn::Session::inference();
    const ElboTerms terms = elbo_terms(s, model, batch, noise, fixed);
    return {terms.elbo.item(), terms.reconstruction.item(), terms.kl.item()};
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (batch_per_env <= 0) throw std::invalid_argument("batch_per_env must be positive");
    if (lambda_graph < 0.0 || lambda_targets < 0.0) throw std::invalid_argument("sparsity weights must be >= 0");
    if (steps < 0) throw std::invalid_argument("step budget must be >= 0");
    if (!(grad_clip > 0.0)) throw std::invalid_argument("gradient clip must be positive");
}

DivergenceError::DivergenceError(std::int64_t step, const std::string& what)
    : std::runtime_error("numeric divergence at step " + std::to_string(step) + ": " + what), step_(step) {}

std::vector<ad::Parameter*> trainable_parameters(const WorldModel& model, TrainMode mode, int adapt_slot) {
    if (mode == TrainMode::Joint) return model.params().all();
    if (adapt_slot <= 0 || adapt_slot >= model.num_envs()) {
        throw std::out_of_range("adaptation slot " + std::to_string(adapt_slot));
    }
    return model.environment_parameters(adapt_slot);
}

Trainer::Trainer(WorldModel& model, const sim::Dataset& data, TrainConfig cfg, TrainMode mode, int adapt_slot)
    : model_(model),
      data_(data),
      cfg_(cfg),
      mode_(mode),
      adapt_slot_(adapt_slot),
      trainable_(trainable_parameters(model, mode, adapt_slot)),
      optimizer_(trainable_, AdamConfig{cfg.lr}),
      rng_(derive_seed(cfg.seed, 0x545241494E, mode == TrainMode::Joint ? 0 : 1)) {
    cfg_.validate();
    if (mode_ == TrainMode::Joint) {
        penalties_ = {cfg_.lambda_graph, cfg_.lambda_targets, {}};
        for (const auto& env : data_.envs) {
            const int slot = model_.env_slot(env.spec.id);
            if (slot < 0) {
                throw std::invalid_argument("model has no slot for intervention " + std::to_string(env.spec.id));
            }
            sources_.emplace_back(&env, slot);
        }
    } else {
        penalties_ = {0.0, cfg_.lambda_targets, {adapt_slot_}};
        const int id = model_.config().env_interventions[static_cast<std::size_t>(adapt_slot_)];
        for (const auto& env : data_.envs) {
            if (env.spec.id == id) sources_.emplace_back(&env, adapt_slot_);
        }
        if (sources_.empty()) {
            throw std::invalid_argument("dataset has no environment with intervention " + std::to_string(id));
        }
    }
    for (const auto& [env, slot] : sources_) {
        if (env->trajectories.empty()) {
            throw std::invalid_argument("environment " + std::to_string(env->index) + " has no trajectories");
        }
    }
}

Batch Trainer::sample_batch() {
    std::vector<const sim::Trajectory*> trajs;
    std::vector<int> slots;
    std::vector<int> tags;
    for (std::size_t src = 0; src < sources_.size(); ++src) {
        const auto& [env, slot] = sources_[src];
        for (int i = 0; i < cfg_.batch_per_env; ++i) {
            trajs.push_back(&env->trajectories[rng_.below(env->trajectories.size())]);
            slots.push_back(slot);
            tags.push_back(static_cast<int>(src));
        }
    }
    return make_batch(trajs, slots, tags);
}

LossBreakdown Trainer::step() {
    const std::int64_t index = optimizer_.steps() + 1;
    const Batch batch = sample_batch();
    const ElboNoise noise = ElboNoise::draw(rng_, batch, model_.config());
    LossBreakdown br;
    try {
        nn::Session s(trainable_);
        optimizer_.zero_grad();
        Loss loss = build_loss(s, model_, batch, noise, penalties_);
        br = loss.breakdown;
        if (!std::isfinite(br.total)) throw DivergenceError(index, "loss is not finite");
        s.backward(loss.total);
    } catch (const std::domain_error& e) {
        throw DivergenceError(index, e.what());
    }
    br.grad_norm = clip_grad_norm(trainable_, cfg_.grad_clip);
    if (!std::isfinite(br.grad_norm)) throw DivergenceError(index, "gradient is not finite");
    optimizer_.step();
    br.step = optimizer_.steps();
    return br;
}

void Trainer::run(const std::function<void(const LossBreakdown&)>& on_step) {
    while (optimizer_.steps() < cfg_.steps) {
        const LossBreakdown br = step();
        if (on_step) on_step(br);
    }
}

int adapt(WorldModel& model, const sim::Dataset& data, int intervention, const TrainConfig& cfg,
          const std::function<void(const LossBreakdown&)>& on_step) {
    const int slot = model.add_environment(intervention);
    const auto trainable = trainable_parameters(model, TrainMode::Adapt, slot);
    std::vector<std::pair<const ad::Parameter*, Matrix>> frozen;
    for (const ad::Parameter* p : model.params().all()) {
        if (std::find(trainable.begin(), trainable.end(), p) == trainable.end()) frozen.emplace_back(p, p->value);
    }
    Trainer trainer(model, data, cfg, TrainMode::Adapt, slot);
    trainer.run(on_step);
    for (const auto& [p, before] : frozen) {
        if (p->value.size() != before.size() ||
            std::memcmp(p->value.data(), before.data(), sizeof(double) * static_cast<std::size_t>(before.size())) != 0) {
            throw std::logic_error("adaptation modified frozen parameter '" + p->name + "'");
        }
    }
    return slot;
}

}  // namespace vcd
