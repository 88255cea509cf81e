#pragma once

// Checkpoint container:
//   8 bytes   magic "VCDCKPT\0"
//   u32 LE    format version
//   u64 LE    header length in bytes
//   header    UTF-8 JSON: variant, model config, model seed, config echo,
//             training state, and a directory of tensors (name, shape, offset)
//   payload   float64 little-endian tensor data, row-major
//
// Parameters (including the beliefs alpha and beta) and optimiser moments are
// stored bit-exactly.

#include "vcd/config.hpp"
#include "vcd/models.hpp"
#include "vcd/training.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <string>

namespace vcd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingState {
    std::string mode = "joint";  // "joint" or "adapt"
    int adapt_slot = -1;
    std::int64_t steps = 0;
    std::string rng_state;
    TrainConfig train;
    std::map<std::string, AdamMoments> moments;  // by parameter name
};

struct Checkpoint {
    std::unique_ptr<WorldModel> model;
    json config;  // echo of the settings that produced it
    std::optional<TrainingState> training;
};

TrainingState capture_training_state(Trainer& trainer);
/// Restores optimiser moments, step count and sampler state. Throws
/// std::runtime_error if the trainer's mode or parameter set does not match.
void restore_training_state(Trainer& trainer, const TrainingState& state);

void save_checkpoint(const std::filesystem::path& file, const WorldModel& model, const json& config,
                     const TrainingState* training = nullptr);
/// Throws std::runtime_error on malformed or truncated files.
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace vcd
