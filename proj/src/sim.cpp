#include "vcd/sim.hpp"

#include "vcd/rng.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>

namespace vcd::sim {

namespace {

constexpr double kMinSeparation = 1e-6;

struct InterventionRow {
    const char* description;
    std::vector<int> targets;
};

const std::array<InterventionRow, kNumInterventions + 1>& catalogue() {
    static const std::array<InterventionRow, kNumInterventions + 1> rows{{
        {"No intervention", {}},
        {"Remove spring between 1 and 2", {0, 1, 2, 3}},
        {"Remove spring between 2 and 3", {2, 3, 4, 5}},
        {"Increase mass 1", {0, 1, 6, 7}},
        {"Increase mass 2", {2, 3}},
        {"Increase mass 3", {4, 5, 6, 7}},
        {"Decrease mass 1", {0, 1, 6, 7}},
        {"Decrease mass 2", {2, 3}},
        {"Decrease mass 3", {4, 5, 6, 7}},
        {"Increase spring constant between 1 and 2", {0, 1, 2, 3}},
        {"Increase spring constant between 2 and 3", {2, 3, 4, 5}},
        {"Constrain movement of 1 to vertical only", {0}},
        {"Constrain movement of 1 to horizontal only", {1}},
        {"Constrain movement of 2 to vertical only", {2}},
        {"Constrain movement of 2 to horizontal only", {3}},
        {"Constrain movement of 3 to vertical only", {4}},
        {"Constrain movement of 3 to horizontal only", {5}},
        {"Constrain movement of 4 to vertical only", {6}},
        {"Constrain movement of 4 to horizontal only", {7}},
    }};
    return rows;
}

constexpr double kInterventionScale = 3.0;

Spring* find_spring(EnvParams& p, int a, int b) {
    for (Spring& s : p.springs) {
        if ((s.a == a && s.b == b) || (s.a == b && s.b == a)) return &s;
    }
    return nullptr;
}

void remove_spring(EnvParams& p, int a, int b) {
    std::erase_if(p.springs, [&](const Spring& s) { return (s.a == a && s.b == b) || (s.a == b && s.b == a); });
}

}  // namespace

EnvParams EnvParams::defaults() {
    EnvParams p;
    constexpr double k = 2.0;
    constexpr double rest = 0.4;
    constexpr double c = 0.2;
    p.springs = {{0, 1, k, rest}, {1, 2, k, rest}};
    p.pair_forces = {{0, 2, -c}, {0, 3, -c}, {2, 3, c}};
    return p;
}

void EnvParams::validate() const {
    for (double m : masses) {
        if (!(m > 0.0)) throw std::invalid_argument("EnvParams: masses must be positive");
    }
    if (!(dt > 0.0)) throw std::invalid_argument("EnvParams: dt must be positive");
    if (!(box > 0.0)) throw std::invalid_argument("EnvParams: box must be positive");
    if (!(softening >= 0.0)) throw std::invalid_argument("EnvParams: softening must be non-negative");
    auto check = [](int a, int b) {
        if (a < 0 || a >= kParticles || b < 0 || b >= kParticles || a == b) {
            throw std::invalid_argument("EnvParams: bad particle pair");
        }
    };
    for (const Spring& s : springs) check(s.a, s.b);
    for (const PairForce& f : pair_forces) check(f.a, f.b);
}

InterventionSpec::InterventionSpec(int id_) : id(id_) {
    if (id < 0 || id > kNumInterventions) {
        throw std::out_of_range("unknown intervention id " + std::to_string(id));
    }
}

std::string InterventionSpec::description() const { return catalogue()[static_cast<std::size_t>(id)].description; }

std::vector<int> InterventionSpec::targets() const { return catalogue()[static_cast<std::size_t>(id)].targets; }

std::string state_name(int index) {
    static const std::array<const char*, kStateDim + kActionDim> names{"x1", "y1", "x2", "y2", "x3",
                                                                       "y3", "x4", "y4", "ax", "ay"};
    if (index < 0 || index >= kStateDim + kActionDim) throw std::out_of_range("state index");
    return names[static_cast<std::size_t>(index)];
}

EnvParams apply_intervention(const EnvParams& base, const InterventionSpec& spec) {
    EnvParams p = base;
    const int id = spec.id;
    if (id == 0) return p;
    if (id == 1) {
        remove_spring(p, 0, 1);
    } else if (id == 2) {
        remove_spring(p, 1, 2);
    } else if (id >= 3 && id <= 5) {
        p.masses[static_cast<std::size_t>(id - 3)] *= kInterventionScale;
    } else if (id >= 6 && id <= 8) {
        p.masses[static_cast<std::size_t>(id - 6)] /= kInterventionScale;
    } else if (id == 9 || id == 10) {
        Spring* s = id == 9 ? find_spring(p, 0, 1) : find_spring(p, 1, 2);
        if (s == nullptr) throw std::invalid_argument("intervention on a spring that does not exist");
        s->stiffness *= kInterventionScale;
    } else {
        // 11..18: odd ids freeze x ("vertical only"), even ids freeze y.
        const int particle = (id - 11) / 2;
        p.constraints[static_cast<std::size_t>(particle)] = (id % 2 == 1) ? Constraint::XFrozen : Constraint::YFrozen;
    }
    return p;
}

StateVector net_forces(const SimState& s, const ActionVector& action, const EnvParams& p) {
    StateVector f{};
    auto delta = [&](int a, int b) {
        const double dx = s.pos[static_cast<std::size_t>(2 * a)] - s.pos[static_cast<std::size_t>(2 * b)];
        const double dy = s.pos[static_cast<std::size_t>(2 * a + 1)] - s.pos[static_cast<std::size_t>(2 * b + 1)];
        return std::array<double, 2>{dx, dy};
    };
    auto apply = [&](int a, int b, double fx, double fy) {
        f[static_cast<std::size_t>(2 * a)] += fx;
        f[static_cast<std::size_t>(2 * a + 1)] += fy;
        f[static_cast<std::size_t>(2 * b)] -= fx;
        f[static_cast<std::size_t>(2 * b + 1)] -= fy;
    };
    for (const Spring& sp : p.springs) {
        const auto [dx, dy] = delta(sp.a, sp.b);
        const double dist = std::hypot(dx, dy);
        if (dist < kMinSeparation) continue;  // direction undefined
        const double mag = -sp.stiffness * (dist - sp.rest_length) / dist;
        apply(sp.a, sp.b, mag * dx, mag * dy);
    }
    for (const PairForce& pf : p.pair_forces) {
        const auto [dx, dy] = delta(pf.a, pf.b);
        const double dist = std::hypot(dx, dy);
        if (dist == 0.0) continue;
        const double eff = std::max(dist, kMinSeparation);
        const double soft2 = eff * eff + p.softening * p.softening;
        const double mag = pf.strength * p.masses[static_cast<std::size_t>(pf.a)] *
                           p.masses[static_cast<std::size_t>(pf.b)] * (eff / dist) / (soft2 * std::sqrt(soft2));
        apply(pf.a, pf.b, mag * dx, mag * dy);
    }
    f[6] += p.action_gain * action[0];
    f[7] += p.action_gain * action[1];
    return f;
}

double reflect(double x, double box) {
    if (x >= -box && x <= box) return x;
    const double period = 4.0 * box;
    double y = std::fmod(x + box, period);
    if (y < 0.0) y += period;
    if (y > 2.0 * box) y = period - y;
    return y - box;
}

SimState step(const SimState& s, const ActionVector& action, const EnvParams& p) {
    const StateVector f = net_forces(s, action, p);
    SimState next = s;
    for (int i = 0; i < kParticles; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const double inv_m = 1.0 / p.masses[ui];
        if (p.constraints[ui] != Constraint::XFrozen) {
            next.pos[2 * ui] = reflect(s.pos[2 * ui] + p.dt * f[2 * ui] * inv_m, p.box);
        }
        if (p.constraints[ui] != Constraint::YFrozen) {
            next.pos[2 * ui + 1] = reflect(s.pos[2 * ui + 1] + p.dt * f[2 * ui + 1] * inv_m, p.box);
        }
    }
    return next;
}

IntMatrix ground_truth_graph(const EnvParams& p) {
    IntMatrix g = IntMatrix::Zero(kStateDim + kActionDim, kStateDim);
    std::array<std::vector<int>, kParticles> partners;
    for (const Spring& s : p.springs) {
        if (s.stiffness == 0.0) continue;
        partners[static_cast<std::size_t>(s.a)].push_back(s.b);
        partners[static_cast<std::size_t>(s.b)].push_back(s.a);
    }
    for (const PairForce& f : p.pair_forces) {
        if (f.strength == 0.0) continue;
        partners[static_cast<std::size_t>(f.a)].push_back(f.b);
        partners[static_cast<std::size_t>(f.b)].push_back(f.a);
    }
    for (int i = 0; i < kParticles; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const bool forced = !partners[ui].empty();
        const bool actuated = i == kParticles - 1 && p.action_gain != 0.0;
        for (int axis = 0; axis < 2; ++axis) {
            const int child = 2 * i + axis;
            g(child, child) = 1;
            const bool frozen = (axis == 0 && p.constraints[ui] == Constraint::XFrozen) ||
                                (axis == 1 && p.constraints[ui] == Constraint::YFrozen);
            if (frozen) continue;
            if (forced) {
                g(2 * i, child) = 1;
                g(2 * i + 1, child) = 1;
                for (int j : partners[ui]) {
                    g(2 * j, child) = 1;
                    g(2 * j + 1, child) = 1;
                }
            }
            if (actuated) {
                g(kStateDim, child) = 1;
                g(kStateDim + 1, child) = 1;
            }
        }
    }
    return g;
}

MixingMatrix MixingMatrix::draw(std::uint64_t seed, double max_condition) {
    Rng rng(derive_seed(seed, 0x4D4958));
    for (;;) {
        MixingMatrix m = from_matrix(rng.normal_matrix(kStateDim, kStateDim), seed);
        if (m.condition_number() < max_condition) return m;
    }
}

MixingMatrix MixingMatrix::from_matrix(Matrix a, std::uint64_t seed) {
    MixingMatrix m;
    m.a = std::move(a);
    m.seed = seed;
    m.inverse = m.a.fullPivLu().inverse();
    return m;
}

double MixingMatrix::condition_number() const {
    const Eigen::MatrixXd dense = a;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(dense);
    const auto& sv = svd.singularValues();
    if (sv(sv.size() - 1) == 0.0) return std::numeric_limits<double>::infinity();
    return sv(0) / sv(sv.size() - 1);
}

Eigen::VectorXd mix_observation(const SimState& s, const MixingMatrix& m) {
    const Eigen::Map<const Eigen::VectorXd> state(s.pos.data(), kStateDim);
    return m.a * state;
}

Matrix unmix(const Matrix& observations, const MixingMatrix& m) { return observations * m.inverse.transpose(); }

std::size_t Dataset::total_trajectories() const {
    std::size_t n = 0;
    for (const auto& e : envs) n += e.trajectories.size();
    return n;
}

const EnvironmentData* Dataset::find(int intervention) const {
    for (const auto& e : envs) {
        if (e.spec.id == intervention) return &e;
    }
    return nullptr;
}

Matrix simulate(const SimState& initial, const Matrix& actions, const EnvParams& p) {
    Matrix states(actions.rows(), kStateDim);
    SimState s = initial;
    for (Index t = 0; t < actions.rows(); ++t) {
        for (int c = 0; c < kStateDim; ++c) states(t, c) = s.pos[static_cast<std::size_t>(c)];
        if (t + 1 < actions.rows()) s = step(s, {actions(t, 0), actions(t, 1)}, p);
    }
    return states;
}

Trajectory generate_trajectory(const EnvParams& p, const MixingMatrix& mixing, int horizon, int action_hold,
                               std::uint64_t seed, int env_index, Matrix* states_out) {
    Rng rng(seed);
    SimState init;
    for (double& x : init.pos) x = rng.uniform(-0.5 * p.box, 0.5 * p.box);
    Matrix actions(horizon + 1, kActionDim);
    for (int t = 0; t <= horizon; ++t) {
        if (t % action_hold == 0) {
            actions(t, 0) = rng.normal();
            actions(t, 1) = rng.normal();
        } else {
            actions.row(t) = actions.row(t - 1);
        }
    }
    // Stored data is float32, so the simulator is driven by the rounded actions.
    actions = actions.cast<float>().cast<double>();
    Matrix states = simulate(init, actions, p);
    Trajectory traj;
    traj.observations = (states * mixing.a.transpose()).cast<float>().cast<double>();
    traj.actions = actions;
    traj.env = env_index;
    if (states_out != nullptr) *states_out = std::move(states);
    return traj;
}

Dataset generate_dataset(const GenerateOptions& options) {
    if (options.n_traj < 1) throw std::invalid_argument("generate_dataset: n_traj must be at least 1");
    if (options.horizon < 1) throw std::invalid_argument("generate_dataset: horizon must be at least 1");
    if (options.action_hold < 1) throw std::invalid_argument("generate_dataset: action_hold must be at least 1");
    options.base.validate();
    Dataset ds;
    ds.mixing = MixingMatrix::draw(options.mixing_seed);
    ds.horizon = options.horizon;
    ds.seed = options.seed;
    ds.action_hold = options.action_hold;
    ds.base = options.base;
    for (std::size_t k = 0; k < options.interventions.size(); ++k) {
        EnvironmentData env;
        env.index = static_cast<int>(k);
        env.spec = InterventionSpec(options.interventions[k]);
        const EnvParams params = apply_intervention(options.base, env.spec);
        env.trajectories.reserve(static_cast<std::size_t>(options.n_traj));
        for (int n = 0; n < options.n_traj; ++n) {
            const std::uint64_t sub = derive_seed(options.seed, static_cast<std::uint64_t>(env.spec.id),
                                                  static_cast<std::uint64_t>(n));
            env.trajectories.push_back(generate_trajectory(params, ds.mixing, options.horizon, options.action_hold,
                                                           sub, env.index));
        }
        ds.envs.push_back(std::move(env));
    }
    return ds;
}

}  // namespace vcd::sim
