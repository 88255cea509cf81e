#include "support.hpp"
#include "vcd/structure.hpp"

#include "doctest.h"

#include <limits>

using namespace vcd;
using namespace vcd::testing;
using ad::Tape;
using ad::Var;

TEST_CASE("straight-through mask examples") {
    Tape t;
    CHECK(ad::sample_mask_st(t.constant(Matrix::Constant(1, 1, 10.0)), t.constant(Matrix::Zero(1, 1))).item() == 1.0);
    for (double l : {-2.0, -1e-9, 1e-9, 0.7}) {
        const double m = ad::sample_mask_st(t.constant(Matrix::Zero(1, 1)), t.constant(Matrix::Constant(1, 1, l))).item();
        CHECK(m == (l > 0 ? 1.0 : 0.0));
    }
}

TEST_CASE("straight-through gradient equals the relaxed surrogate's derivative") {
    Rng rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        Matrix alpha = trial == 0 ? Matrix::Zero(1, 1) : rng.normal_matrix(1, 1);
        const Matrix noise = trial == 0 ? Matrix::Zero(1, 1) : rng.logistic_matrix(1, 1);
        Tape t;
        const Var a = t.variable(alpha);
        t.backward(ad::sample_mask_st(a, t.constant(noise)));
        auto relaxed = [&] { return sigmoid(alpha(0, 0) + noise(0, 0)); };
        const double numeric = numeric_gradient(relaxed, alpha)(0, 0);
        CHECK(a.grad()(0, 0) == doctest::Approx(numeric).epsilon(1e-6));
        if (trial == 0) CHECK(a.grad()(0, 0) == 0.25);
    }
}

TEST_CASE("empirical mask frequency matches the belief") {
    const int n = 100000;
    Rng rng(2);
    Matrix alpha(1, 5);
    alpha << -3.0, -0.5, 0.0, 1.0, 2.5;
    Matrix logits(n, 5);
    logits.rowwise() = alpha.row(0);
    Tape t;
    const Matrix masks = ad::sample_mask_st(t.constant(logits), t.constant(rng.logistic_matrix(n, 5))).value();
    for (Index i = 0; i < 5; ++i) {
        const double p = sigmoid(alpha(0, i));
        const double freq = masks.col(i).mean();
        CHECK(std::abs(freq - p) < 3.0 * std::sqrt(p * (1 - p) / n));
    }
    CHECK(((masks.array() == 0.0) || (masks.array() == 1.0)).all());
}

TEST_CASE("expected sparsity") {
    CHECK(expected_sparsity(Matrix::Zero(18, 16)) == 144.0);
    CHECK(expected_sparsity(Matrix::Constant(3, 3, -std::numeric_limits<double>::infinity())) == 0.0);
    CHECK(expected_sparsity(Matrix::Constant(3, 3, -800.0)) == 0.0);

    Rng rng(3);
    Matrix alpha = rng.normal_matrix(4, 3);
    Tape t;
    const Var a = t.variable(alpha);
    const Var e = expected_sparsity(a);
    CHECK(e.item() == doctest::Approx(expected_sparsity(alpha)).epsilon(1e-14));
    t.backward(e);
    const Matrix numeric = numeric_gradient([&] { return expected_sparsity(alpha); }, alpha);
    CHECK(relative_error(a.grad(), numeric) < 1e-6);
    for (Index i = 0; i < alpha.size(); ++i) {
        const double s = sigmoid(alpha.data()[i]);
        CHECK(a.grad().data()[i] == doctest::Approx(s * (1 - s)).epsilon(1e-12));
    }

    // Monotone in every entry.
    for (Index i = 0; i < alpha.size(); ++i) {
        Matrix up = alpha;
        up.data()[i] += 0.1;
        CHECK(expected_sparsity(up) > expected_sparsity(alpha));
    }
}

TEST_CASE("frozen rows contribute nothing on the tape") {
    Matrix logits(2, 3);
    logits.row(0).setConstant(-std::numeric_limits<double>::infinity());
    logits.row(1) << 0.0, 1.0, -1.0;
    Tape t;
    const Var e = expected_sparsity(t.constant(logits));
    CHECK(e.item() == doctest::Approx(1.5));
}

TEST_CASE("binarisation is strict at one half") {
    CHECK(binarize(Matrix::Zero(18, 16)).sum() == 0);
    CHECK(binarize(Matrix::Constant(1, 1, 2.0))(0, 0) == 1);
    CHECK(binarize(Matrix::Constant(1, 1, -1e-12))(0, 0) == 0);
    CHECK(binarize(Matrix::Constant(1, 1, 1e-12))(0, 0) == 1);
    CHECK(binarize(Matrix::Constant(1, 1, 0.5), 0.7)(0, 0) == 0);
    CHECK(binarize(Matrix::Constant(1, 1, -std::numeric_limits<double>::infinity()))(0, 0) == 0);
}

TEST_CASE("child-major flattening") {
    Matrix m(3, 2);
    m << 1, 2, 3, 4, 5, 6;  // parents x children
    const Matrix flat = flatten_child_major(m);
    REQUIRE(flat.rows() == 1);
    REQUIRE(flat.cols() == 6);
    for (Index i = 0; i < 2; ++i) {
        for (Index j = 0; j < 3; ++j) CHECK(flat(0, i * 3 + j) == m(j, i));
    }
    Tape t;
    CHECK(flatten_child_major(t.constant(m)).value() == flat);
}

TEST_CASE("intervention beliefs keep the observational row closed") {
    ad::Parameter b1("b1", Matrix::Constant(1, 4, -2.0));
    ad::Parameter b2("b2", Matrix::Constant(1, 4, 1.0));
    const InterventionBelief belief{{&b1, &b2}};
    CHECK(belief.num_envs() == 3);
    const Matrix logits = belief.logits();
    REQUIRE(logits.rows() == 3);
    CHECK(logits.row(0).array().isInf().all());
    CHECK(logits.row(2) == b2.value);
    const Matrix p = belief.probabilities();
    CHECK(p.row(0).isZero());
    CHECK(p(1, 0) == doctest::Approx(sigmoid(-2.0)));
    CHECK(binarize(logits).row(0).sum() == 0);
}

TEST_CASE("mask noise is drawn once per trajectory") {
    Rng rng(4);
    const MaskNoise n = MaskNoise::draw(rng, 5, 18, 16);
    CHECK(n.graph.rows() == 5);
    CHECK(n.graph.cols() == 18 * 16);
    CHECK(n.targets.rows() == 5);
    CHECK(n.targets.cols() == 16);
    // Two trajectories of the batch see different draws.
    CHECK(n.graph.row(0) != n.graph.row(1));

    // With saturated beliefs every trajectory sees the same mask.
    Matrix logits(5, 18 * 16);
    logits.setConstant(50.0);
    Tape t;
    const Matrix masks = ad::sample_mask_st(t.constant(logits), t.constant(n.graph)).value();
    CHECK(masks.isOnes());
}

TEST_CASE("hard mask sampling frequency") {
    Rng rng(5);
    Matrix alpha(1, 2);
    alpha << -1.0, 1.5;
    const int n = 100000;
    Eigen::RowVectorXd count = Eigen::RowVectorXd::Zero(2);
    for (int i = 0; i < n; ++i) count += sample_masks(alpha, rng).row(0);
    for (Index i = 0; i < 2; ++i) {
        const double p = sigmoid(alpha(0, i));
        CHECK(std::abs(count(i) / n - p) < 3.0 * std::sqrt(p * (1 - p) / n));
    }
}
