#include "vcd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace vcd {

using ad::Var;

std::optional<FixedMasks> binarized_masks(const WorldModel& model) {
    if (!model.has_beliefs()) return std::nullopt;
    FixedMasks m;
    m.graph = binarize(model.graph().alpha->value).cast<double>();
    m.targets = binarize(model.targets().logits()).cast<double>();
    return m;
}

namespace {

// Prior over the next latent for rows of one slot.
struct Stepper {
    const WorldModel& model;
    int k;
    std::optional<FixedMasks> masks;

    TransitionOutput step(nn::Session& s, const Var& h, const Var& z, const Var& a) const {
        if (!model.has_beliefs()) return model.dense(k).step(s, h, z, a);
        const Var graph = s.constant(flatten_child_major(masks->graph));
        const Var targets = s.constant(masks->targets.row(k));
        CausalOutput out = model.causal().step(s, h, z, a, graph, targets, k);
        return {out.hidden, out.prior};
    }
};

}  // namespace

std::vector<Matrix> rollout(const WorldModel& model, const std::vector<const sim::Trajectory*>& trajectories, int k,
                            const RolloutOptions& options) {
    if (trajectories.empty()) return {};
    if (k < 0 || k >= model.num_envs()) throw std::out_of_range("environment slot " + std::to_string(k));
    const Batch batch = make_batch(trajectories, std::vector<int>(trajectories.size(), k));
    const Index B = batch.size;
    const int T = batch.horizon;
    const int split = options.observe_until < 0 ? T / 2 : options.observe_until;
    const Index d = model.config().latent_dim;

    nn::Session s = nn::Session::inference();
    const Stepper stepper{model, k, binarized_masks(model)};
    const Var obs = s.constant(batch.observations);
    const GaussianVar post = model.encode(s, obs);
    Rng rng(derive_seed(options.seed, 0x524F4C4C));

    std::vector<Matrix> preds(static_cast<std::size_t>(B), Matrix(T + 1, model.config().obs_dim));
    Var h = s.constant(Matrix::Zero(B, model.hidden_width()));
    Var z;
    for (int t = 0; t <= T; ++t) {
        if (t > 0) {
            const Var a = s.constant(batch.actions.middleRows((t - 1) * B, B));
            const TransitionOutput out = stepper.step(s, h, z, a);
            h = out.hidden;
            if (t > split) {
                z = options.sample ? gaussian_reparam_sample(out.prior, s.constant(rng.normal_matrix(B, d)))
                                   : out.prior.mean;
            }
        }
        if (t <= split) z = ad::slice_rows(post.mean, t * B, B);
        const Matrix mean = model.decode(s, z).mean.value();
        for (Index b = 0; b < B; ++b) preds[static_cast<std::size_t>(b)].row(t) = mean.row(b);
    }
    return preds;
}

Eigen::VectorXd rollout_error(const Matrix& pred, const Matrix& truth, const sim::MixingMatrix& mixing) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
        throw ad::ShapeError("rollout_error: prediction and truth differ in shape");
    }
    const Matrix diff = sim::unmix(pred, mixing) - sim::unmix(truth, mixing);
    return diff.rowwise().squaredNorm();
}

RolloutReport evaluate_rollouts(const WorldModel& model, const sim::Dataset& data, const RolloutOptions& options,
                                int slot_override) {
    RolloutReport report;
    report.model = to_string(model.variant());
    report.horizon = data.horizon;
    report.split = options.observe_until < 0 ? data.horizon / 2 : options.observe_until;
    double sum = 0.0;
    for (const auto& env : data.envs) {
        const int slot = slot_override >= 0 ? slot_override : model.env_slot(env.spec.id);
        if (slot < 0 || env.trajectories.empty()) continue;
        std::vector<const sim::Trajectory*> trajs;
        for (const auto& tr : env.trajectories) trajs.push_back(&tr);
        const auto preds = rollout(model, trajs, slot, options);
        EnvRollout er;
        er.env = env.index;
        er.intervention = env.spec.id;
        er.slot = slot;
        er.trajectories = static_cast<int>(trajs.size());
        er.mean_error = Eigen::VectorXd::Zero(data.horizon + 1);
        for (std::size_t i = 0; i < trajs.size(); ++i) {
            er.mean_error += rollout_error(preds[i], trajs[i]->observations, data.mixing);
        }
        er.mean_error /= static_cast<double>(trajs.size());
        const Index n_pred = data.horizon - report.split;
        er.predicted_mean = n_pred > 0 ? er.mean_error.tail(n_pred).mean() : 0.0;
        sum += er.predicted_mean;
        report.envs.push_back(std::move(er));
    }
    if (!report.envs.empty()) report.predicted_mean = sum / static_cast<double>(report.envs.size());
    return report;
}

std::vector<int> assign_latents(const Matrix& jacobian) {
    std::vector<int> out;
    for (Index i = 0; i < jacobian.rows(); ++i) {
        Index best = 0;
        for (Index j = 1; j < jacobian.cols(); ++j) {
            if (jacobian(i, j) > jacobian(i, best)) best = j;
        }
        out.push_back(static_cast<int>(best));
    }
    return out;
}

DisentanglementMatrix disentanglement_jacobian(const WorldModel& model, const sim::MixingMatrix& mixing,
                                               const Matrix& probes) {
    const Index d = model.config().latent_dim;
    if (probes.cols() != d || probes.rows() == 0) throw ad::ShapeError("probe set must be N x latent_dim");
    const Index n_states = mixing.a.rows();
    const Matrix unmix_t = mixing.inverse.transpose();
    DisentanglementMatrix out;
    out.jacobian = Matrix::Zero(n_states, d);
    for (Index i = 0; i < n_states; ++i) {
        nn::Session s = nn::Session::inference();
        const Var z = s.tape().variable(probes);
        const Var states = ad::matmul(model.decode(s, z).mean, s.constant(unmix_t));
        s.backward(ad::sum(ad::slice_cols(states, i, 1)));
        out.jacobian.row(i) = z.grad().cwiseAbs().colwise().mean();
    }
    out.assignment = assign_latents(out.jacobian);
    std::set<int> seen(out.assignment.begin(), out.assignment.end());
    out.injective = seen.size() == out.assignment.size();
    return out;
}

Matrix probe_latents(const WorldModel& model, const sim::Dataset& data, int count, std::uint64_t seed) {
    std::vector<const sim::Trajectory*> all;
    for (const auto& env : data.envs) {
        for (const auto& tr : env.trajectories) all.push_back(&tr);
    }
    if (all.empty() || count <= 0) throw std::invalid_argument("probe_latents: nothing to sample");
    Rng rng(derive_seed(seed, 0x50524F4245));
    Matrix obs(count, model.config().obs_dim);
    for (int n = 0; n < count; ++n) {
        const sim::Trajectory& tr = *all[rng.below(all.size())];
        obs.row(n) = tr.observations.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(tr.observations.rows()))));
    }
    nn::Session s = nn::Session::inference();
    return model.encode(s, s.constant(obs)).mean.value();
}

int RecoveryReport::total_learned_targets() const {
    int n = 0;
    for (const auto& t : targets) n += static_cast<int>(t.learned.size());
    return n;
}

int RecoveryReport::total_target_false_positives() const {
    int n = 0;
    for (const auto& t : targets) n += t.false_positive;
    return n;
}

bool RecoveryReport::all_targets_recovered() const {
    return std::all_of(targets.begin(), targets.end(), [](const EnvTargets& t) { return t.missed == 0; });
}

RecoveryReport graph_recovery(const IntMatrix& learned_graph, const IntMatrix& learned_targets,
                              const IntMatrix& truth, const std::vector<std::vector<int>>& truth_targets,
                              const std::vector<int>& assignment, const std::vector<int>& interventions) {
    const Index d = learned_graph.cols();
    const Index n_actions = learned_graph.rows() - d;
    const Index n_states = truth.cols();
    if (n_actions < 0 || truth.rows() != n_states + n_actions) {
        throw ad::ShapeError("graph_recovery: learned graph and truth disagree on the action count");
    }
    if (static_cast<Index>(assignment.size()) != n_states) {
        throw std::invalid_argument("graph_recovery: one assigned latent per ground-truth state");
    }
    for (int a : assignment) {
        if (a < 0 || a >= d) throw std::out_of_range("graph_recovery: assignment outside the latent range");
    }

    RecoveryReport r;
    r.possible_edges = static_cast<int>(learned_graph.size());
    r.learned_edges = learned_graph.sum();
    r.truth_edges = truth.sum();
    r.injective = std::set<int>(assignment.begin(), assignment.end()).size() == assignment.size();

    // States represented by each latent.
    std::vector<std::vector<int>> states_of(static_cast<std::size_t>(d));
    for (Index s = 0; s < n_states; ++s) states_of[static_cast<std::size_t>(assignment[static_cast<std::size_t>(s)])].push_back(static_cast<int>(s));

    r.mapped_graph = IntMatrix::Zero(n_states + n_actions, n_states);
    for (Index j = 0; j < learned_graph.rows(); ++j) {
        for (Index i = 0; i < d; ++i) {
            if (learned_graph(j, i) == 0) continue;
            std::vector<int> parents;
            if (j < d) {
                parents = states_of[static_cast<std::size_t>(j)];
            } else {
                parents.push_back(static_cast<int>(n_states + (j - d)));
            }
            for (int p : parents) {
                for (int c : states_of[static_cast<std::size_t>(i)]) r.mapped_graph(p, c) = 1;
            }
        }
    }
    r.mapped_edges = r.mapped_graph.sum();
    r.correct = (r.mapped_graph.array() * truth.array()).sum();
    r.missed = r.truth_edges - r.correct;
    r.false_positive = r.mapped_edges - r.correct;

    for (Index k = 1; k < learned_targets.rows(); ++k) {
        EnvTargets et;
        et.slot = static_cast<int>(k);
        et.intervention = k < static_cast<Index>(interventions.size()) ? interventions[static_cast<std::size_t>(k)]
                                                                       : static_cast<int>(k);
        if (k < static_cast<Index>(truth_targets.size())) et.truth = truth_targets[static_cast<std::size_t>(k)];
        std::set<int> mapped;
        for (Index i = 0; i < d; ++i) {
            if (learned_targets(k, i) == 0) continue;
            et.learned.push_back(static_cast<int>(i));
            bool hits_truth = false;
            for (int s : states_of[static_cast<std::size_t>(i)]) {
                mapped.insert(s);
                hits_truth = hits_truth || std::find(et.truth.begin(), et.truth.end(), s) != et.truth.end();
            }
            if (!hits_truth) ++et.false_positive;
        }
        et.mapped.assign(mapped.begin(), mapped.end());
        for (int s : et.truth) {
            if (mapped.contains(s)) {
                ++et.recovered;
            } else {
                ++et.missed;
            }
        }
        r.targets.push_back(std::move(et));
    }
    return r;
}

RecoveryReport evaluate_recovery(const WorldModel& model, const sim::EnvParams& base,
                                 const std::vector<int>& assignment) {
    const auto masks = binarized_masks(model);
    if (!masks) throw std::logic_error(to_string(model.variant()) + " model has no learned graph");
    std::vector<std::vector<int>> truth_targets;
    for (int id : model.config().env_interventions) truth_targets.push_back(sim::InterventionSpec(id).targets());
    return graph_recovery(masks->graph.cast<int>(), masks->targets.cast<int>(), sim::ground_truth_graph(base),
                          truth_targets, assignment, model.config().env_interventions);
}

}  // namespace vcd
