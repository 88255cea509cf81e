#pragma once

// Plain-Eigen re-implementation of the per-dimension world model, evaluated
// one trajectory and one mechanism at a time without the tape. Parameters are
// copied out of a WorldModel, so the two must agree to rounding.

#include "vcd/models.hpp"
#include "vcd/sim.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace vcd::testing {

struct RefLinear {
    Eigen::MatrixXd w;  // in x out
    Eigen::VectorXd b;

    [[nodiscard]] Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return w.transpose() * x + b; }
};

// Group g of a grouped layer stored as (G*in) x out weights and 1 x (G*out) bias.
inline RefLinear extract_group(const nn::ParameterStore& store, const std::string& name, Index g, Index in, Index out) {
    RefLinear l;
    l.w = store.get(name + "/w").value.block(g * in, 0, in, out);
    l.b = store.get(name + "/b").value.block(0, g * out, 1, out).transpose();
    return l;
}

struct RefMlp {
    std::vector<RefLinear> layers;
    nn::Activation act = nn::Activation::Relu;

    [[nodiscard]] Eigen::VectorXd apply(Eigen::VectorXd x) const {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            x = layers[l].apply(x);
            if (l + 1 == layers.size()) break;
            for (Index i = 0; i < x.size(); ++i) {
                if (act == nn::Activation::Relu) x(i) = std::max(0.0, x(i));
                if (act == nn::Activation::Tanh) x(i) = std::tanh(x(i));
            }
        }
        return x;
    }
};

inline RefMlp extract_mlp(const nn::ParameterStore& store, const std::string& name, Index g, Index in, Index hidden,
                          int hidden_layers, Index out, nn::Activation act) {
    RefMlp m;
    m.act = act;
    Index width = in;
    for (int l = 0; l <= hidden_layers; ++l) {
        const Index next = l == hidden_layers ? out : hidden;
        m.layers.push_back(extract_group(store, name + "/l" + std::to_string(l), g, width, next));
        width = next;
    }
    return m;
}

struct RefGru {
    RefLinear input, hidden;
    Index H = 0;

    [[nodiscard]] Eigen::VectorXd step(const Eigen::VectorXd& h, const Eigen::VectorXd& x) const {
        const Eigen::VectorXd gx = input.apply(x);
        const Eigen::VectorXd gh = hidden.apply(h);
        Eigen::VectorXd out(H);
        for (Index j = 0; j < H; ++j) {
            const double r = 1.0 / (1.0 + std::exp(-(gx(j) + gh(j))));
            const double u = 1.0 / (1.0 + std::exp(-(gx(H + j) + gh(H + j))));
            const double n = std::tanh(gx(2 * H + j) + r * gh(2 * H + j));
            out(j) = (1.0 - u) * n + u * h(j);
        }
        return out;
    }
};

inline double ref_log_normal(double x, double mean, double logvar) {
    return -0.5 * (std::log(2.0 * std::numbers::pi) + logvar + (x - mean) * (x - mean) / std::exp(logvar));
}

inline double ref_kl(double mq, double lq, double mp, double lp) {
    return 0.5 * (lp - lq + (std::exp(lq) + (mq - mp) * (mq - mp)) / std::exp(lp) - 1.0);
}

/// d mechanisms, each with its own GRU and its own heads per environment.
struct ReferenceModel {
    ModelConfig cfg;
    RefMlp encoder, decoder;
    std::vector<RefGru> grus;                   // one per latent dimension
    std::vector<std::vector<RefMlp>> heads;     // heads[k][i]

    explicit ReferenceModel(const WorldModel& m) : cfg(m.config()) {
        const nn::ParameterStore& s = m.params();
        const Index d = cfg.latent_dim, P = cfg.parents(), H = cfg.rnn_hidden;
        encoder = extract_mlp(s, "encoder", 0, cfg.obs_dim, cfg.mlp_hidden, cfg.mlp_layers, 2 * d, cfg.activation);
        decoder = extract_mlp(s, "decoder", 0, d, cfg.mlp_hidden, cfg.mlp_layers, 2 * cfg.obs_dim, cfg.activation);
        for (Index i = 0; i < d; ++i) {
            RefGru g;
            g.H = H;
            g.input = extract_group(s, "causal/gru/input", i, P, 3 * H);
            g.hidden = extract_group(s, "causal/gru/hidden", i, H, 3 * H);
            grus.push_back(g);
        }
        heads.resize(static_cast<std::size_t>(m.num_envs()));
        for (int k = 0; k < m.num_envs(); ++k) {
            for (Index i = 0; i < d; ++i) {
                heads[static_cast<std::size_t>(k)].push_back(extract_mlp(
                    s, "causal/head" + std::to_string(k), i, H, cfg.mlp_hidden, cfg.mlp_layers, 2, cfg.activation));
            }
        }
    }

    [[nodiscard]] double clip(double lv) const { return std::max(lv, cfg.logvar_floor); }

    /// ELBO of one trajectory in environment k with posterior noise eps
    /// ((T+1) x d), graph mask (parents x d) and target row (d).
    [[nodiscard]] double elbo(const sim::Trajectory& tr, const Matrix& eps, const Matrix& graph,
                              const Eigen::VectorXd& targets, int k) const {
        const Index d = cfg.latent_dim, T = tr.observations.rows() - 1, A = cfg.action_dim;
        std::vector<Eigen::VectorXd> h(static_cast<std::size_t>(d), Eigen::VectorXd::Zero(cfg.rnn_hidden));
        Eigen::VectorXd z_prev;
        double total = 0.0;
        for (Index t = 0; t <= T; ++t) {
            const Eigen::VectorXd enc = encoder.apply(tr.observations.row(t).transpose());
            Eigen::VectorXd z(d);
            for (Index i = 0; i < d; ++i) z(i) = enc(i) + std::exp(0.5 * clip(enc(d + i))) * eps(t, i);
            const Eigen::VectorXd dec = decoder.apply(z);
            for (Index j = 0; j < cfg.obs_dim; ++j) {
                total += ref_log_normal(tr.observations(t, j), dec(j), clip(dec(cfg.obs_dim + j)));
            }
            for (Index i = 0; i < d; ++i) {
                const double mq = enc(i), lq = clip(enc(d + i));
                if (t == 0) {
                    total -= ref_kl(mq, lq, 0.0, 0.0);
                    continue;
                }
                Eigen::VectorXd input(d + A);
                for (Index j = 0; j < d; ++j) input(j) = z_prev(j) * graph(j, i);
                for (Index j = 0; j < A; ++j) input(d + j) = tr.actions(t - 1, j) * graph(d + j, i);
                auto& hi = h[static_cast<std::size_t>(i)];
                hi = grus[static_cast<std::size_t>(i)].step(hi, input);
                const Eigen::VectorXd p0 = heads[0][static_cast<std::size_t>(i)].apply(hi);
                const double kl0 = ref_kl(mq, lq, p0(0), clip(p0(1)));
                double kl = kl0;
                if (k > 0 && targets(i) != 0.0) {
                    const Eigen::VectorXd pk = heads[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)].apply(hi);
                    kl = ref_kl(mq, lq, pk(0), clip(pk(1)));
                }
                total -= kl;
            }
            z_prev = z;
        }
        return total;
    }
};

}  // namespace vcd::testing
