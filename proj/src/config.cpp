#include "vcd/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>

namespace vcd {

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& item : j.items()) {
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](const char* k) { return item.key() == k; });
        if (!known) throw ConfigError("unknown key '" + item.key() + "' in " + where);
    }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("bad value for '" + std::string(key) + "' in " + where + ": " + j.at(key).dump());
    }
}

}  // namespace

json to_json(const ModelConfig& c) {
    return {{"obs_dim", c.obs_dim},
            {"action_dim", c.action_dim},
            {"latent_dim", c.latent_dim},
            {"mlp_hidden", c.mlp_hidden},
            {"mlp_layers", c.mlp_layers},
            {"rnn_hidden", c.rnn_hidden},
            {"activation", nn::to_string(c.activation)},
            {"logvar_floor", c.logvar_floor},
            {"graph_logit_init", c.graph_logit_init},
            {"target_logit_init", c.target_logit_init},
            {"env_interventions", c.env_interventions}};
}

ModelConfig model_config_from_json(const json& j) {
    const std::string where = "model config";
    check_keys(j,
               {"obs_dim", "action_dim", "latent_dim", "mlp_hidden", "mlp_layers", "rnn_hidden", "activation",
                "logvar_floor", "graph_logit_init", "target_logit_init", "env_interventions"},
               where);
    ModelConfig c;
    read(j, "obs_dim", c.obs_dim, where);
    read(j, "action_dim", c.action_dim, where);
    read(j, "latent_dim", c.latent_dim, where);
    read(j, "mlp_hidden", c.mlp_hidden, where);
    read(j, "mlp_layers", c.mlp_layers, where);
    read(j, "rnn_hidden", c.rnn_hidden, where);
    std::string act = nn::to_string(c.activation);
    read(j, "activation", act, where);
    try {
        c.activation = nn::activation_from_string(act);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    read(j, "logvar_floor", c.logvar_floor, where);
    read(j, "graph_logit_init", c.graph_logit_init, where);
    read(j, "target_logit_init", c.target_logit_init, where);
    read(j, "env_interventions", c.env_interventions, where);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"batch_per_env", c.batch_per_env},
            {"lambda_graph", c.lambda_graph},
            {"lambda_targets", c.lambda_targets},
            {"seed", c.seed},
            {"steps", c.steps},
            {"grad_clip", c.grad_clip}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    const std::string where = "optimisation config";
    check_keys(j, {"lr", "batch_per_env", "lambda_graph", "lambda_targets", "seed", "steps", "grad_clip"}, where);
    read(j, "lr", c.lr, where);
    read(j, "batch_per_env", c.batch_per_env, where);
    read(j, "lambda_graph", c.lambda_graph, where);
    read(j, "lambda_targets", c.lambda_targets, where);
    read(j, "seed", c.seed, where);
    read(j, "steps", c.steps, where);
    read(j, "grad_clip", c.grad_clip, where);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

sim::GenerateOptions GenerateSettings::options() const {
    sim::GenerateOptions o;
    o.interventions = interventions;
    o.n_traj = n_traj;
    o.horizon = horizon;
    o.seed = seed;
    o.mixing_seed = mixing_seed;
    o.action_hold = action_hold;
    return o;
}

TrainConfig AdaptSettings::default_train() {
    TrainConfig c;
    c.steps = 2000;
    return c;
}

json to_json(const GenerateSettings& s) {
    return {{"out", s.out},           {"interventions", s.interventions}, {"n_traj", s.n_traj},
            {"horizon", s.horizon},   {"seed", s.seed},                   {"mixing_seed", s.mixing_seed},
            {"action_hold", s.action_hold}, {"force", s.force}};
}

json to_json(const TrainSettings& s) {
    return {{"data", s.data},
            {"out", s.out},
            {"variant", s.variant},
            {"model_seed", s.model_seed},
            {"model", to_json(s.model)},
            {"optim", to_json(s.train)},
            {"log_every", s.log_every},
            {"checkpoint_every", s.checkpoint_every},
            {"resume", s.resume},
            {"force", s.force}};
}

json to_json(const AdaptSettings& s) {
    return {{"checkpoint", s.checkpoint}, {"data", s.data},         {"out", s.out},
            {"intervention", s.intervention}, {"n_traj", s.n_traj}, {"optim", to_json(s.train)},
            {"log_every", s.log_every},   {"force", s.force}};
}

json to_json(const EvalSettings& s) {
    return {{"checkpoints", s.checkpoints}, {"data", s.data},   {"out", s.out},     {"reports", s.reports},
            {"probes", s.probes},           {"sample", s.sample}, {"seed", s.seed}, {"plots", s.plots},
            {"tag", s.tag}};
}

json to_json(const RunConfig& c) {
    return {{"generate", to_json(c.generate)},
            {"train", to_json(c.train)},
            {"adapt", to_json(c.adapt)},
            {"eval", to_json(c.eval)}};
}

void apply_json(RunConfig& c, const json& j) {
    check_keys(j, {"generate", "train", "adapt", "eval"}, "config");
    if (j.contains("generate")) {
        const json& g = j.at("generate");
        const std::string w = "generate";
        check_keys(g, {"out", "interventions", "n_traj", "horizon", "seed", "mixing_seed", "action_hold", "force"}, w);
        read(g, "out", c.generate.out, w);
        read(g, "interventions", c.generate.interventions, w);
        read(g, "n_traj", c.generate.n_traj, w);
        read(g, "horizon", c.generate.horizon, w);
        read(g, "seed", c.generate.seed, w);
        read(g, "mixing_seed", c.generate.mixing_seed, w);
        read(g, "action_hold", c.generate.action_hold, w);
        read(g, "force", c.generate.force, w);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        const std::string w = "train";
        check_keys(t,
                   {"data", "out", "variant", "model_seed", "model", "optim", "log_every", "checkpoint_every",
                    "resume", "force"},
                   w);
        read(t, "data", c.train.data, w);
        read(t, "out", c.train.out, w);
        read(t, "variant", c.train.variant, w);
        read(t, "model_seed", c.train.model_seed, w);
        if (t.contains("model")) c.train.model = model_config_from_json(t.at("model"));
        if (t.contains("optim")) c.train.train = train_config_from_json(t.at("optim"), c.train.train);
        read(t, "log_every", c.train.log_every, w);
        read(t, "checkpoint_every", c.train.checkpoint_every, w);
        read(t, "resume", c.train.resume, w);
        read(t, "force", c.train.force, w);
    }
    if (j.contains("adapt")) {
        const json& a = j.at("adapt");
        const std::string w = "adapt";
        check_keys(a, {"checkpoint", "data", "out", "intervention", "n_traj", "optim", "log_every", "force"}, w);
        read(a, "checkpoint", c.adapt.checkpoint, w);
        read(a, "data", c.adapt.data, w);
        read(a, "out", c.adapt.out, w);
        read(a, "intervention", c.adapt.intervention, w);
        read(a, "n_traj", c.adapt.n_traj, w);
        if (a.contains("optim")) c.adapt.train = train_config_from_json(a.at("optim"), c.adapt.train);
        read(a, "log_every", c.adapt.log_every, w);
        read(a, "force", c.adapt.force, w);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        const std::string w = "eval";
        check_keys(e, {"checkpoints", "data", "out", "reports", "probes", "sample", "seed", "plots", "tag"}, w);
        read(e, "checkpoints", c.eval.checkpoints, w);
        read(e, "data", c.eval.data, w);
        read(e, "out", c.eval.out, w);
        read(e, "reports", c.eval.reports, w);
        read(e, "probes", c.eval.probes, w);
        read(e, "sample", c.eval.sample, w);
        read(e, "seed", c.eval.seed, w);
        read(e, "plots", c.eval.plots, w);
        read(e, "tag", c.eval.tag, w);
    }
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    RunConfig c;
    apply_json(c, j);
    return c;
}

}  // namespace vcd
