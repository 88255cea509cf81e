#pragma once

// On-disk dataset layout:
//   manifest.json                 environments, seeds, shapes, mixing matrix
//   env<k>_observations.f32       little-endian float32, [trajectory][time][channel]
//   env<k>_actions.f32            same layout, 2 channels

#include "vcd/sim.hpp"

#include "json.hpp"

#include <filesystem>

namespace vcd::sim {

inline constexpr int kDatasetFormatVersion = 1;

nlohmann::json env_params_to_json(const EnvParams& p);
EnvParams env_params_from_json(const nlohmann::json& j);

nlohmann::json dataset_manifest(const Dataset& ds);

/// Writes the dataset; refuses to overwrite an existing manifest unless force is set.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds, bool force = false);

/// Throws std::runtime_error on missing or inconsistent files and when the
/// stored mixing matrix has condition number >= 1e3.
Dataset read_dataset(const std::filesystem::path& dir);

void write_f32(const std::filesystem::path& file, std::span<const double> values);
std::vector<double> read_f32(const std::filesystem::path& file, std::size_t expected_count);

}  // namespace vcd::sim
