#include "vcd/structure.hpp"

#include <cmath>

namespace vcd {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& x) { return x.unaryExpr([](double v) { return sigmoid(v); }); }

Matrix GraphBelief::probabilities() const { return sigmoid(alpha->value); }

Matrix InterventionBelief::logits() const {
    const Index d = rows.empty() ? 0 : rows.front()->value.cols();
    Matrix out(num_envs(), d);
    out.row(0).setConstant(-std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k) + 1) = rows[k]->value;
    return out;
}

Matrix InterventionBelief::probabilities() const { return sigmoid(logits()); }

ad::Var expected_sparsity(const ad::Var& logits) { return ad::sum(ad::sigmoid(logits)); }

double expected_sparsity(const Matrix& logits) { return sigmoid(logits).sum(); }

IntMatrix binarize(const Matrix& logits, double threshold) {
    IntMatrix out(logits.rows(), logits.cols());
    for (Index r = 0; r < logits.rows(); ++r) {
        for (Index c = 0; c < logits.cols(); ++c) out(r, c) = sigmoid(logits(r, c)) > threshold ? 1 : 0;
    }
    return out;
}

Matrix flatten_child_major(const Matrix& mask) {
    const Matrix t = mask.transpose();
    return Eigen::Map<const Matrix>(t.data(), 1, t.size());
}

ad::Var flatten_child_major(const ad::Var& mask) {
    return ad::reshape(ad::transpose(mask), 1, mask.rows() * mask.cols());
}

MaskNoise MaskNoise::draw(Rng& rng, Index batch, Index parents, Index children) {
    MaskNoise n;
    n.graph = rng.logistic_matrix(batch, parents * children);
    n.targets = rng.logistic_matrix(batch, children);
    return n;
}

Matrix sample_masks(const Matrix& logits, Rng& rng) {
    Matrix out(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.size(); ++i) out.data()[i] = logits.data()[i] + rng.logistic() > 0.0 ? 1.0 : 0.0;
    return out;
}

}  // namespace vcd
