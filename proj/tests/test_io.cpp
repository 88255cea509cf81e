#include "support.hpp"
#include "vcd/checkpoint.hpp"
#include "vcd/config.hpp"

#include "doctest.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

using namespace vcd;
using namespace vcd::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("vcd_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

sim::Dataset tiny_dataset(std::uint64_t seed) {
    sim::GenerateOptions o;
    o.interventions = {0, 1, 5};
    o.n_traj = 3;
    o.horizon = 4;
    o.seed = seed;
    return sim::generate_dataset(o);
}

ModelConfig io_config() {
    ModelConfig c = tiny_config(3, 4);
    c.env_interventions = {0, 1, 5};
    return c;
}

void check_same_params(const WorldModel& a, const WorldModel& b) {
    const auto pa = a.params().all(), pb = b.params().all();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        INFO(pa[i]->name);
        CHECK(pa[i]->name == pb[i]->name);
        REQUIRE(pa[i]->value.size() == pb[i]->value.size());
        CHECK(std::memcmp(pa[i]->value.data(), pb[i]->value.data(), sizeof(double) * pa[i]->value.size()) == 0);
    }
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(VCD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("checkpoints round-trip bit-exactly") {
    TempDir dir("ckpt");
    const sim::Dataset ds = tiny_dataset(1);
    for (Variant v : {Variant::Vcd, Variant::Rssm, Variant::MultiRssm}) {
        WorldModel m(v, io_config(), 3);
        TrainConfig tc;
        tc.steps = 4;
        Trainer tr(m, ds, tc);
        tr.run();
        m.add_environment(12);
        const TrainingState st = capture_training_state(tr);
        const fs::path file = dir.path / (to_string(v) + ".bin");
        save_checkpoint(file, m, json{{"note", "x"}}, &st);
        const Checkpoint c = load_checkpoint(file);
        CHECK(c.model->variant() == v);
        CHECK(c.model->num_envs() == 4);
        CHECK(c.model->config().env_interventions == std::vector<int>{0, 1, 5, 12});
        CHECK(c.config == json{{"note", "x"}});
        check_same_params(m, *c.model);
        REQUIRE(c.training.has_value());
        CHECK(c.training->steps == 4);
        CHECK(c.training->rng_state == st.rng_state);
        CHECK(c.training->train == tc);
        REQUIRE(c.training->moments.size() == st.moments.size());
        for (const auto& [name, mom] : st.moments) {
            const AdamMoments& other = c.training->moments.at(name);
            CHECK(std::memcmp(mom.m.data(), other.m.data(), sizeof(double) * mom.m.size()) == 0);
            CHECK(std::memcmp(mom.v.data(), other.v.data(), sizeof(double) * mom.v.size()) == 0);
        }
        // Saving the loaded model reproduces the file.
        save_checkpoint(dir.path / "again.bin", *c.model, c.config, &*c.training);
        CHECK(slurp(file) == slurp(dir.path / "again.bin"));
    }
}

TEST_CASE("resuming from a checkpoint continues the same trajectory") {
    TempDir dir("resume");
    const sim::Dataset ds = tiny_dataset(2);
    TrainConfig tc;
    tc.steps = 6;

    WorldModel straight(Variant::Vcd, io_config(), 4);
    std::vector<double> losses;
    Trainer(straight, ds, tc).run([&](const LossBreakdown& b) { losses.push_back(b.total); });

    WorldModel first(Variant::Vcd, io_config(), 4);
    TrainConfig half = tc;
    half.steps = 3;
    Trainer t1(first, ds, half);
    t1.run();
    const TrainingState st = capture_training_state(t1);
    save_checkpoint(dir.path / "c.bin", first, json::object(), &st);

    Checkpoint c = load_checkpoint(dir.path / "c.bin");
    Trainer t2(*c.model, ds, c.training->train);
    restore_training_state(t2, *c.training);
    t2.set_total_steps(6);
    std::vector<double> tail;
    t2.run([&](const LossBreakdown& b) { tail.push_back(b.total); });
    CHECK(tail == std::vector<double>(losses.begin() + 3, losses.end()));
    check_same_params(straight, *c.model);

    Trainer adapt_mode(*c.model, ds, tc, TrainMode::Adapt, 1);
    CHECK_THROWS_AS(restore_training_state(adapt_mode, *c.training), std::runtime_error);
}

TEST_CASE("malformed checkpoints are rejected") {
    TempDir dir("bad");
    WorldModel m(Variant::Rssm, io_config(), 5);
    save_checkpoint(dir.path / "ok.bin", m, json::object());
    const std::string bytes = slurp(dir.path / "ok.bin");

    auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream(dir.path / name, std::ios::binary) << content;
        return dir.path / name;
    };
    CHECK_THROWS_AS((void)load_checkpoint(write("short.bin", bytes.substr(0, bytes.size() - 9))), std::runtime_error);
    std::string magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS((void)load_checkpoint(write("magic.bin", magic)), std::runtime_error);
    CHECK_THROWS_AS((void)load_checkpoint(write("empty.bin", "")), std::runtime_error);
    CHECK_THROWS_AS((void)load_checkpoint(dir.path / "missing.bin"), std::runtime_error);
    CHECK_FALSE(load_checkpoint(dir.path / "ok.bin").training.has_value());
}

TEST_CASE("run configuration parsing") {
    RunConfig c;
    apply_json(c, json::parse(R"({"train": {"variant": "rssm", "optim": {"lr": 0.002}}, "generate": {"n_traj": 7}})"));
    CHECK(c.train.variant == "rssm");
    CHECK(c.train.train.lr == 0.002);
    CHECK(c.train.train.lambda_graph == 0.01);
    CHECK(c.train.train.batch_per_env == 2);
    CHECK(c.generate.n_traj == 7);
    CHECK(c.generate.horizon == 50);
    CHECK(c.adapt.train.steps == AdaptSettings::default_train().steps);

    RunConfig bad;
    CHECK_THROWS_AS(apply_json(bad, json::parse(R"({"trian": {}})")), ConfigError);
    CHECK_THROWS_AS(apply_json(bad, json::parse(R"({"train": {"steps_total": 3}})")), ConfigError);
    CHECK_THROWS_AS(apply_json(bad, json::parse(R"({"train": {"optim": {"lr": "fast"}}})")), ConfigError);

    // Echo and re-read gives the same settings.
    RunConfig back;
    apply_json(back, to_json(c));
    CHECK(to_json(back) == to_json(c));

    const ModelConfig m = model_config_from_json(to_json(io_config()));
    CHECK(m == io_config());
    CHECK_THROWS_AS((void)model_config_from_json(json::parse(R"({"latent": 3})")), ConfigError);
}

TEST_CASE("command line workflow is deterministic") {
    TempDir dir("cli");
    const std::string d = dir.path.string();
    {
        std::ofstream cfg(dir.path / "small.json");
        cfg << R"({"train": {"model": {"mlp_hidden": 8, "rnn_hidden": 4, "latent_dim": 4}}})";
    }
    REQUIRE(run_cli("generate --out " + d + "/data --interventions 0 12 --n-traj 3 --T 6 --seed 3") == 0);
    CHECK(run_cli("generate --out " + d + "/data --interventions 0 --n-traj 3 --T 6") == 1);

    const std::string train = "--config " + d + "/small.json train --data " + d + "/data --steps 4 --log-every 1";
    REQUIRE(run_cli(train + " --out " + d + "/a") == 0);
    REQUIRE(run_cli(train + " --out " + d + "/b") == 0);
    CHECK(slurp(dir.path / "a/metrics.ndjson") == slurp(dir.path / "b/metrics.ndjson"));
    CHECK_FALSE(slurp(dir.path / "a/metrics.ndjson").empty());
    CHECK(run_cli(train + " --out " + d + "/a") == 1);  // refuses to overwrite

    for (const char* name : {"a", "b"}) {
        REQUIRE(run_cli("eval --checkpoint " + d + "/" + name + "/checkpoint.bin --data " + d + "/data --out " + d +
                        "/r" + name + " --probes 16") == 0);
    }
    for (const char* f : {"vcd_rollout.json", "vcd_disentanglement.json", "vcd_recovery.json",
                          "rollout.csv"}) {
        INFO(f);
        CHECK(slurp(dir.path / "ra" / f) == slurp(dir.path / "rb" / f));
        CHECK_FALSE(slurp(dir.path / "ra" / f).empty());
    }

    REQUIRE(run_cli("adapt --checkpoint " + d + "/a/checkpoint.bin --data " + d +
                    "/data --intervention 12 --steps 3 --out " + d + "/ad") == 0);
    CHECK(json::parse(slurp(dir.path / "ad/targets.json")).contains("targets"));

    CHECK(run_cli("train --bogus") == 2);
    CHECK(run_cli("--config " + d + "/missing.json train") == 2);
    {
        std::ofstream(dir.path / "typo.json") << R"({"train": {"stpes": 3}})";
    }
    CHECK(run_cli("--config " + d + "/typo.json train --data " + d + "/data --out " + d + "/c") == 2);
    CHECK(run_cli("train --data " + d + "/nowhere --out " + d + "/c") == 1);
}
