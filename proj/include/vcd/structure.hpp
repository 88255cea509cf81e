#pragma once

// Bernoulli beliefs over the causal graph and the intervention targets.
//
// Graph logits alpha are (d + action_dim) x d: row j is a parent (previous
// latent dims first, then action dims), column i a child. Target logits beta
// hold one 1 x d row per intervened environment k = 1..K; the observational
// environment k = 0 has no row and is never intervened.

#include "vcd/autodiff.hpp"
#include "vcd/rng.hpp"

#include <limits>
#include <vector>

namespace vcd {

using IntMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kGraphLogitInit = 0.0;
inline constexpr double kTargetLogitInit = -2.0;

struct GraphBelief {
    ad::Parameter* alpha = nullptr;

    [[nodiscard]] Index parents() const { return alpha->value.rows(); }
    [[nodiscard]] Index children() const { return alpha->value.cols(); }
    [[nodiscard]] Matrix probabilities() const;
};

struct InterventionBelief {
    std::vector<ad::Parameter*> rows;  // rows[k - 1] belongs to environment k

    [[nodiscard]] int num_envs() const { return static_cast<int>(rows.size()) + 1; }
    /// (K+1) x d, row 0 = -infinity.
    [[nodiscard]] Matrix logits() const;
    [[nodiscard]] Matrix probabilities() const;
};

double sigmoid(double x);
Matrix sigmoid(const Matrix& x);

/// Sum of sigmoid(logits) on the tape; -inf entries contribute exactly 0.
ad::Var expected_sparsity(const ad::Var& logits);
double expected_sparsity(const Matrix& logits);

/// 1 where sigmoid(logit) > threshold, strictly.
IntMatrix binarize(const Matrix& logits, double threshold = 0.5);

/// Column i of a (parents x children) mask flattened child-major into one row:
/// out(0, i * parents + j) = mask(j, i). This is the layout the per-dimension
/// transition consumes after tiling [z, a] once per child.
Matrix flatten_child_major(const Matrix& mask);
/// The same layout on the tape.
ad::Var flatten_child_major(const ad::Var& mask);

/// Logistic noise for one mask draw per trajectory: `graph` is batch x (d_par*d)
/// in child-major layout, `targets` is batch x d.
struct MaskNoise {
    Matrix graph;
    Matrix targets;

    static MaskNoise draw(Rng& rng, Index batch, Index parents, Index children);
};

/// Hard Bernoulli draws without a tape, for inspecting belief frequencies.
Matrix sample_masks(const Matrix& logits, Rng& rng);

}  // namespace vcd
