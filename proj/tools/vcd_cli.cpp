// vcd: generate datasets, train and adapt world models, evaluate checkpoints.
//
// Exit codes: 0 success, 1 runtime failure (missing files, I/O),
// 2 configuration error, 3 numeric divergence during optimisation.

#include "vcd/checkpoint.hpp"
#include "vcd/config.hpp"
#include "vcd/dataset_io.hpp"
#include "vcd/evaluation.hpp"
#include "vcd/reports.hpp"
#include "vcd/training.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

namespace fs = std::filesystem;
using namespace vcd;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

// Relative output paths are placed under $VCD_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p) {
    const fs::path path(p);
    const char* root = std::getenv("VCD_OUTPUT_ROOT");
    if (root == nullptr || *root == '\0' || path.is_absolute()) return path;
    return fs::path(root) / path;
}

template <class T>
void override_with(T& target, const std::optional<T>& flag) {
    if (flag) target = *flag;
}

json metrics_line(const LossBreakdown& br, const WorldModel& model) {
    json j = {{"step", br.step},
              {"total", br.total},
              {"elbo", br.elbo},
              {"reconstruction", br.reconstruction},
              {"kl", br.kl},
              {"expected_edges", br.graph_sparsity},
              {"expected_targets", br.target_sparsity},
              {"grad_norm", br.grad_norm}};
    if (model.has_beliefs()) {
        j["edges"] = binarize(model.graph().alpha->value).sum();
        j["targets"] = binarize(model.targets().logits()).sum();
    }
    return j;
}

// Keeps lines whose step is at most `last_step`, so a resumed run continues the log contiguously.
void truncate_metrics(const fs::path& file, std::int64_t last_step) {
    if (!fs::exists(file)) return;
    std::ifstream in(file);
    std::string kept;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("step") || j.at("step").get<std::int64_t>() > last_step) continue;
        kept += line + "\n";
    }
    in.close();
    write_text(file, kept);
}

sim::Dataset load_dataset(const std::string& dir) {
    if (dir.empty()) throw ConfigError("no dataset directory given");
    return sim::read_dataset(dir);
}

// Model slot order: observational environment first, then dataset order.
std::vector<int> dataset_interventions(const sim::Dataset& ds) {
    std::vector<int> ids{0};
    bool has_observational = false;
    for (const auto& e : ds.envs) {
        if (e.spec.id == 0) {
            has_observational = true;
        } else if (std::find(ids.begin(), ids.end(), e.spec.id) == ids.end()) {
            ids.push_back(e.spec.id);
        }
    }
    if (!has_observational) throw ConfigError("training data must contain the observational environment (id 0)");
    return ids;
}

int cmd_generate(const GenerateSettings& s) {
    const sim::Dataset ds = sim::generate_dataset(s.options());
    const fs::path out = output_path(s.out);
    sim::write_dataset(out, ds, s.force);
    std::cout << "wrote " << out.string() << "\n";
    for (const auto& e : ds.envs) {
        std::cout << "  env " << e.index << "  intervention " << e.spec.id << "  " << e.trajectories.size()
                  << " trajectories  (" << e.spec.description() << ")\n";
    }
    return 0;
}

int cmd_train(const TrainSettings& s) {
    const Variant variant = variant_from_string(s.variant);
    const sim::Dataset ds = load_dataset(s.data);
    const fs::path out = output_path(s.out);
    const fs::path ckpt_file = out / "checkpoint.bin";
    const fs::path metrics_file = out / "metrics.ndjson";
    const json echo = {{"command", "train"}, {"settings", to_json(s)}};

    std::unique_ptr<WorldModel> model;
    std::optional<TrainingState> resume_state;
    if (!s.resume.empty()) {
        Checkpoint ck = load_checkpoint(s.resume);
        if (ck.model->variant() != variant) {
            throw ConfigError("checkpoint holds a " + to_string(ck.model->variant()) + " model, --variant is " +
                              s.variant);
        }
        if (!ck.training || ck.training->mode != "joint") throw ConfigError("checkpoint has no joint training state");
        model = std::move(ck.model);
        resume_state = std::move(ck.training);
    } else {
        if (fs::exists(ckpt_file) && !s.force) {
            throw std::runtime_error(ckpt_file.string() + " already exists (use --force or --resume)");
        }
        ModelConfig cfg = s.model;
        cfg.env_interventions = dataset_interventions(ds);
        model = std::make_unique<WorldModel>(variant, cfg, s.model_seed);
    }
    fs::create_directories(out);
    write_text(out / "config.json", echo.dump(2) + "\n");

    Trainer trainer(*model, ds, s.train);
    if (resume_state) {
        restore_training_state(trainer, *resume_state);
        trainer.set_total_steps(s.train.steps);
        truncate_metrics(metrics_file, resume_state->steps);
    } else {
        write_text(metrics_file, "");
    }
    std::ofstream metrics(metrics_file, std::ios::app);

    std::cout << "training " << s.variant << " (" << model->params().scalar_count() << " parameters) on "
              << ds.total_trajectories() << " trajectories, steps " << trainer.steps_done() << " -> " << s.train.steps
              << "\n";
    const auto start = std::chrono::steady_clock::now();
    auto save = [&] {
        const TrainingState st = capture_training_state(trainer);
        save_checkpoint(ckpt_file, *model, echo, &st);
    };
    try {
        trainer.run([&](const LossBreakdown& br) {
            const bool last = br.step == s.train.steps;
            if (br.step % s.log_every == 0 || last) {
                metrics << metrics_line(br, *model).dump() << "\n";
                metrics.flush();
            }
            if (br.step % (s.log_every * 10) == 0 || last) {
                const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                std::cout << "step " << br.step << "  loss " << br.total << "  elbo " << br.elbo << "  E|G| "
                          << br.graph_sparsity << "  (" << secs << " s)" << std::endl;
            }
            if (s.checkpoint_every > 0 && br.step % s.checkpoint_every == 0) save();
        });
    } catch (const DivergenceError&) {
        metrics.flush();
        throw;
    }
    save();
    std::cout << "wrote " << ckpt_file.string() << "\n";
    return 0;
}

int cmd_adapt(const AdaptSettings& s, const std::optional<std::string>& expected_variant) {
    if (s.checkpoint.empty()) throw ConfigError("no checkpoint given");
    Checkpoint ck = load_checkpoint(s.checkpoint);
    WorldModel& model = *ck.model;
    if (expected_variant && variant_from_string(*expected_variant) != model.variant()) {
        throw ConfigError("checkpoint holds a " + to_string(model.variant()) + " model, expected " + *expected_variant);
    }
    const sim::Dataset ds = load_dataset(s.data);
    const sim::EnvironmentData* env = ds.find(s.intervention);
    if (!env) throw ConfigError("dataset has no environment with intervention " + std::to_string(s.intervention));
    if (s.n_traj < 0 || s.n_traj > static_cast<int>(env->trajectories.size())) {
        throw ConfigError("n_traj must be between 0 and " + std::to_string(env->trajectories.size()));
    }

    sim::Dataset subset;
    subset.mixing = ds.mixing;
    subset.horizon = ds.horizon;
    subset.seed = ds.seed;
    subset.action_hold = ds.action_hold;
    subset.base = ds.base;
    sim::EnvironmentData e = *env;
    if (s.n_traj > 0) e.trajectories.resize(static_cast<std::size_t>(s.n_traj));
    subset.envs.push_back(std::move(e));

    const fs::path out = output_path(s.out);
    const fs::path ckpt_file = out / "checkpoint.bin";
    if (fs::exists(ckpt_file) && !s.force) throw std::runtime_error(ckpt_file.string() + " already exists (use --force)");
    fs::create_directories(out);
    const json echo = {{"command", "adapt"}, {"settings", to_json(s)}, {"source", ck.config}};
    write_text(out / "config.json", echo.dump(2) + "\n");
    std::ofstream metrics(out / "metrics.ndjson", std::ios::trunc);

    std::cout << "adapting " << to_string(model.variant()) << " to intervention " << s.intervention << " with "
              << subset.envs.front().trajectories.size() << " trajectories, " << s.train.steps << " steps\n";
    const int slot = adapt(model, subset, s.intervention, s.train, [&](const LossBreakdown& br) {
        if (br.step % s.log_every == 0 || br.step == s.train.steps) metrics << metrics_line(br, model).dump() << "\n";
    });
    save_checkpoint(ckpt_file, model, echo);

    json targets = {{"variant", to_string(model.variant())},
                    {"intervention", s.intervention},
                    {"slot", slot},
                    {"n_traj", subset.envs.front().trajectories.size()}};
    if (model.has_beliefs()) {
        const Matrix logits = model.targets().logits().row(slot);
        const IntMatrix bin = binarize(logits);
        std::vector<int> dims;
        for (Index i = 0; i < bin.cols(); ++i) {
            if (bin(0, i)) dims.push_back(static_cast<int>(i));
        }
        targets["target_probabilities"] = matrix_to_json(Matrix(sigmoid(logits)));
        targets["targets"] = dims;
        std::cout << "learned targets:";
        for (int d : dims) std::cout << " z" << d;
        std::cout << (dims.empty() ? " none\n" : "\n");
    }
    write_text(out / "targets.json", targets.dump(2) + "\n");
    std::cout << "wrote " << ckpt_file.string() << "\n";
    return 0;
}

int cmd_eval(const EvalSettings& s) {
    if (s.checkpoints.empty()) throw ConfigError("no checkpoints given");
    const std::set<std::string> known{"rollout", "disentanglement", "recovery"};
    for (const auto& r : s.reports) {
        if (!known.contains(r)) throw ConfigError("unknown report '" + r + "'");
    }
    auto wants = [&](const char* r) { return std::find(s.reports.begin(), s.reports.end(), r) != s.reports.end(); };
    const sim::Dataset ds = load_dataset(s.data);
    const fs::path out = output_path(s.out);
    fs::create_directories(out);

    std::vector<RolloutReport> rollouts;
    std::set<std::string> used_names;
    for (const auto& path : s.checkpoints) {
        const Checkpoint ck = load_checkpoint(path);
        const WorldModel& model = *ck.model;
        std::string name = to_string(model.variant());
        for (int n = 2; used_names.contains(name); ++n) name = to_string(model.variant()) + "_" + std::to_string(n);
        used_names.insert(name);
        std::cout << name << " (" << path << ")\n";

        if (wants("rollout")) {
            RolloutOptions opts;
            opts.sample = s.sample;
            opts.seed = s.seed;
            RolloutReport r = evaluate_rollouts(model, ds, opts);
            r.dataset_tag = s.tag;
            r.model = name;
            write_text(out / (name + "_rollout.json"), to_json(r).dump(2) + "\n");
            for (const auto& e : r.envs) {
                std::cout << "  rollout env " << e.env << " (intervention " << e.intervention << "): second-half error "
                          << e.predicted_mean << "\n";
            }
            std::cout << "  rollout mean second-half error " << r.predicted_mean << "\n";
            rollouts.push_back(std::move(r));
        }
        std::optional<DisentanglementMatrix> dis;
        if (wants("disentanglement") || (wants("recovery") && model.has_beliefs())) {
            const Matrix probes = probe_latents(model, ds, s.probes, s.seed);
            dis = disentanglement_jacobian(model, ds.mixing, probes);
        }
        if (wants("disentanglement")) {
            write_text(out / (name + "_disentanglement.json"), to_json(*dis).dump(2) + "\n");
            write_text(out / (name + "_disentanglement.csv"), matrix_csv(dis->jacobian, "x", "z"));
            if (s.plots) write_text(out / (name + "_disentanglement.svg"), heatmap_svg(dis->jacobian, name + " |d state / d z|"));
            std::cout << "  assignment:";
            for (std::size_t i = 0; i < dis->assignment.size(); ++i) {
                std::cout << " " << sim::state_name(static_cast<int>(i)) << "->z" << dis->assignment[i];
            }
            std::cout << (dis->injective ? "\n" : "  (not injective)\n");
        }
        if (wants("recovery") && model.has_beliefs()) {
            const RecoveryReport rec = evaluate_recovery(model, ds.base, dis->assignment);
            json doc = to_json(rec);
            doc["beliefs"] = beliefs_to_json(model);
            write_text(out / (name + "_recovery.json"), doc.dump(2) + "\n");
            std::cout << "  recovery: " << recovery_summary(rec) << "\n";
        }
    }
    if (!rollouts.empty()) {
        write_text(out / "rollout.csv", rollout_csv(rollouts));
        if (s.plots) write_text(out / "rollout_errors.svg", error_curves_svg(rollouts));
    }
    std::cout << "wrote reports to " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Causal latent world models on a simulated multi-body system"};
    app.require_subcommand(1);
    std::string config_file;
    app.add_option("--config", config_file, "JSON run configuration; flags override its values");

    // generate
    auto* gen = app.add_subcommand("generate", "Simulate a multi-environment dataset");
    std::optional<std::string> g_out;
    std::optional<std::vector<int>> g_interventions;
    std::optional<int> g_n, g_T, g_hold;
    std::optional<std::uint64_t> g_seed, g_mix;
    bool g_force = false;
    gen->add_option("--out", g_out, "Output directory");
    gen->add_option("--interventions", g_interventions, "Intervention ids, one environment each")->delimiter(',');
    gen->add_option("--n-traj", g_n, "Trajectories per environment");
    gen->add_option("--T", g_T, "Trajectory horizon");
    gen->add_option("--seed", g_seed, "Simulation seed");
    gen->add_option("--mixing-seed", g_mix, "Seed of the observation mixing matrix");
    gen->add_option("--action-hold", g_hold, "Steps each random action is held");
    gen->add_flag("--force", g_force, "Overwrite an existing dataset");

    // train
    auto* train = app.add_subcommand("train", "Train a world model");
    std::optional<std::string> t_data, t_out, t_variant, t_resume;
    std::optional<double> t_lr, t_lg, t_li;
    std::optional<int> t_batch, t_latent;
    std::optional<std::int64_t> t_steps, t_log, t_ckpt;
    std::optional<std::uint64_t> t_seed, t_model_seed;
    bool t_force = false;
    train->add_option("--data", t_data, "Dataset directory");
    train->add_option("--out", t_out, "Run directory");
    train->add_option("--variant", t_variant, "vcd, rssm or multi-rssm")
        ->check(CLI::IsMember({"vcd", "rssm", "multi-rssm"}));
    train->add_option("--steps", t_steps, "Total optimisation steps");
    train->add_option("--lr", t_lr, "Learning rate");
    train->add_option("--lambda-g", t_lg, "Graph sparsity weight");
    train->add_option("--lambda-i", t_li, "Target sparsity weight");
    train->add_option("--batch-per-env", t_batch, "Trajectories per environment per step");
    train->add_option("--latent-dim", t_latent, "Latent dimensionality");
    train->add_option("--seed", t_seed, "Sampling seed");
    train->add_option("--model-seed", t_model_seed, "Initialisation seed");
    train->add_option("--log-every", t_log, "Metrics interval in steps");
    train->add_option("--checkpoint-every", t_ckpt, "Checkpoint interval in steps (0 = end only)");
    train->add_option("--resume", t_resume, "Continue from this checkpoint");
    train->add_flag("--force", t_force, "Overwrite an existing run");

    // adapt
    auto* adapt_cmd = app.add_subcommand("adapt", "Fit a trained model to a new intervention");
    std::optional<std::string> a_ckpt, a_data, a_out, a_variant;
    std::optional<int> a_int, a_n, a_batch;
    std::optional<std::int64_t> a_steps;
    std::optional<double> a_lr, a_li;
    std::optional<std::uint64_t> a_seed;
    bool a_force = false;
    adapt_cmd->add_option("--checkpoint", a_ckpt, "Trained checkpoint");
    adapt_cmd->add_option("--data", a_data, "Dataset containing the new environment");
    adapt_cmd->add_option("--out", a_out, "Output directory");
    adapt_cmd->add_option("--variant", a_variant, "Expected model variant")
        ->check(CLI::IsMember({"vcd", "rssm", "multi-rssm"}));
    adapt_cmd->add_option("--intervention", a_int, "Intervention id of the new environment");
    adapt_cmd->add_option("--n-traj", a_n, "Use the first n trajectories (0 = all)");
    adapt_cmd->add_option("--steps", a_steps, "Optimisation steps");
    adapt_cmd->add_option("--lr", a_lr, "Learning rate");
    adapt_cmd->add_option("--lambda-i", a_li, "Target sparsity weight");
    adapt_cmd->add_option("--batch-per-env", a_batch, "Trajectories per step");
    adapt_cmd->add_option("--seed", a_seed, "Sampling seed");
    adapt_cmd->add_flag("--force", a_force, "Overwrite existing output");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on a dataset");
    std::optional<std::vector<std::string>> e_ckpts, e_reports;
    std::optional<std::string> e_data, e_out, e_tag;
    std::optional<int> e_probes;
    std::optional<std::uint64_t> e_seed;
    bool e_sample = false;
    bool e_no_plots = false;
    eval->add_option("--checkpoint", e_ckpts, "Checkpoint(s) to evaluate");
    eval->add_option("--data", e_data, "Validation dataset directory");
    eval->add_option("--out", e_out, "Report directory");
    eval->add_option("--report", e_reports, "rollout, disentanglement, recovery")->delimiter(',');
    eval->add_option("--probes", e_probes, "Latent probe count for the Jacobian");
    eval->add_option("--seed", e_seed, "Probe / sampling seed");
    eval->add_option("--tag", e_tag, "Dataset tag recorded in reports");
    eval->add_flag("--sample", e_sample, "Sample the prior during rollouts");
    eval->add_flag("--no-plots", e_no_plots, "Skip SVG plots");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        RunConfig cfg = config_file.empty() ? RunConfig{} : load_run_config(config_file);
        if (*gen) {
            auto& s = cfg.generate;
            override_with(s.out, g_out);
            override_with(s.interventions, g_interventions);
            override_with(s.n_traj, g_n);
            override_with(s.horizon, g_T);
            override_with(s.seed, g_seed);
            override_with(s.mixing_seed, g_mix);
            override_with(s.action_hold, g_hold);
            s.force = s.force || g_force;
            return cmd_generate(s);
        }
        if (*train) {
            auto& s = cfg.train;
            override_with(s.data, t_data);
            override_with(s.out, t_out);
            override_with(s.variant, t_variant);
            override_with(s.resume, t_resume);
            override_with(s.train.steps, t_steps);
            override_with(s.train.lr, t_lr);
            override_with(s.train.lambda_graph, t_lg);
            override_with(s.train.lambda_targets, t_li);
            override_with(s.train.batch_per_env, t_batch);
            override_with(s.train.seed, t_seed);
            override_with(s.model.latent_dim, t_latent);
            override_with(s.model_seed, t_model_seed);
            override_with(s.log_every, t_log);
            override_with(s.checkpoint_every, t_ckpt);
            s.force = s.force || t_force;
            try {
                s.train.validate();
                s.model.validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            if (s.log_every <= 0) throw ConfigError("log_every must be positive");
            return cmd_train(s);
        }
        if (*adapt_cmd) {
            auto& s = cfg.adapt;
            override_with(s.checkpoint, a_ckpt);
            override_with(s.data, a_data);
            override_with(s.out, a_out);
            override_with(s.intervention, a_int);
            override_with(s.n_traj, a_n);
            override_with(s.train.steps, a_steps);
            override_with(s.train.lr, a_lr);
            override_with(s.train.lambda_targets, a_li);
            override_with(s.train.batch_per_env, a_batch);
            override_with(s.train.seed, a_seed);
            s.force = s.force || a_force;
            try {
                s.train.validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            if (s.log_every <= 0) throw ConfigError("log_every must be positive");
            return cmd_adapt(s, a_variant);
        }
        if (*eval) {
            auto& s = cfg.eval;
            override_with(s.checkpoints, e_ckpts);
            override_with(s.data, e_data);
            override_with(s.out, e_out);
            override_with(s.reports, e_reports);
            override_with(s.probes, e_probes);
            override_with(s.seed, e_seed);
            override_with(s.tag, e_tag);
            s.sample = s.sample || e_sample;
            if (e_no_plots) s.plots = false;
            if (s.probes <= 0) throw ConfigError("probes must be positive");
            return cmd_eval(s);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
