#pragma once

// Run configuration for the command-line workbench. Every section parses
// strictly: unknown keys are rejected and missing keys keep their defaults.

#include "vcd/models.hpp"
#include "vcd/sim.hpp"
#include "vcd/training.hpp"

#include "json.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vcd {

using json = nlohmann::json;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const json& j);
json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const json& j, TrainConfig defaults = {});

struct GenerateSettings {
    std::string out = "data";
    std::vector<int> interventions{0, 1, 5, 11, 14, 17};
    int n_traj = 2000;
    int horizon = 50;
    std::uint64_t seed = 0;
    std::uint64_t mixing_seed = 7;
    int action_hold = 5;
    bool force = false;

    [[nodiscard]] sim::GenerateOptions options() const;
};

struct TrainSettings {
    std::string data = "data";
    std::string out = "runs/vcd";
    std::string variant = "vcd";
    std::uint64_t model_seed = 0;
    ModelConfig model;
    TrainConfig train;
    std::int64_t log_every = 10;
    std::int64_t checkpoint_every = 1000;
    std::string resume;  // checkpoint path, empty for a fresh run
    bool force = false;
};

struct AdaptSettings {
    std::string checkpoint;
    std::string data;
    std::string out = "runs/adapt";
    int intervention = 12;
    int n_traj = 0;  // first n trajectories of the environment, 0 for all
    TrainConfig train = default_train();
    std::int64_t log_every = 10;
    bool force = false;

    static TrainConfig default_train();
};

struct EvalSettings {
    std::vector<std::string> checkpoints;
    std::string data;
    std::string out = "reports";
    std::vector<std::string> reports{"rollout", "disentanglement", "recovery"};
    int probes = 512;
    bool sample = false;
    std::uint64_t seed = 0;
    bool plots = true;
    std::string tag;
};

struct RunConfig {
    GenerateSettings generate;
    TrainSettings train;
    AdaptSettings adapt;
    EvalSettings eval;
};

json to_json(const GenerateSettings& s);
json to_json(const TrainSettings& s);
json to_json(const AdaptSettings& s);
json to_json(const EvalSettings& s);
json to_json(const RunConfig& c);

/// Fills `c` from an object with optional "generate", "train", "adapt", "eval" sections.
void apply_json(RunConfig& c, const json& j);
RunConfig load_run_config(const std::string& path);

}  // namespace vcd
