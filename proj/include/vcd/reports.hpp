#pragma once

// Serialisation of evaluation results: JSON documents, CSV tables and
// standalone SVG plots.

#include "vcd/config.hpp"
#include "vcd/evaluation.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace vcd {

json to_json(const RolloutReport& r);
json to_json(const DisentanglementMatrix& m);
json to_json(const RecoveryReport& r);
json matrix_to_json(const Matrix& m);
json matrix_to_json(const IntMatrix& m);

/// Beliefs of a causal model: probabilities and binarised masks.
json beliefs_to_json(const WorldModel& model);

/// One row per (model, environment, step): model,env,intervention,slot,step,error
std::string rollout_csv(const std::vector<RolloutReport>& reports);
std::string matrix_csv(const Matrix& m, const std::string& row_prefix, const std::string& col_prefix);
/// "learned/possible, correct, missed, false positives" in one line.
std::string recovery_summary(const RecoveryReport& r);

/// Mean error per step of every model, averaged over environments, with the split marked.
std::string error_curves_svg(const std::vector<RolloutReport>& reports);
/// Grey-scale heat map of the absolute values of m.
std::string heatmap_svg(const Matrix& m, const std::string& title);

void write_text(const std::filesystem::path& file, const std::string& text);

}  // namespace vcd
