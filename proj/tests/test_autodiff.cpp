#include "oracles.hpp"
#include "vcd/autodiff.hpp"

#include "doctest.h"

#include <array>
#include <cstring>

using namespace vcd;
using namespace vcd::testing;
using ad::Tape;
using ad::Var;

TEST_CASE("forward values of elementary ops") {
    Tape t;
    Matrix a(2, 3);
    a << 1, 2, 3, 4, 5, 6;
    Matrix b(3, 1);
    b << 1, 0, -1;
    const Matrix prod = ad::matmul(t.constant(a), t.constant(b)).value();
    REQUIRE(prod.rows() == 2);
    REQUIRE(prod.cols() == 1);
    CHECK(prod(0, 0) == doctest::Approx(-2.0));
    CHECK(prod(1, 0) == doctest::Approx(-2.0));
    CHECK(ad::sigmoid(t.scalar(0.0)).item() == 0.5);
    CHECK(ad::sum(t.constant(Matrix::Ones(1, 16))).item() == 16.0);
    CHECK(ad::mean(t.constant(a)).item() == doctest::Approx(3.5));
}

TEST_CASE("backward of trivial roots") {
    Tape t;
    const Var x = t.variable(Matrix::Constant(1, 1, 3.0));
    t.backward(ad::mul(x, x));
    CHECK(x.grad()(0, 0) == doctest::Approx(6.0));

    Tape t2;
    const Var w = t2.variable(Matrix::Zero(1, 1));
    t2.backward(ad::sigmoid(w));
    CHECK(w.grad()(0, 0) == doctest::Approx(0.25));
}

TEST_CASE("shape errors name the shapes") {
    Tape t;
    const Var a = t.constant(Matrix::Zero(2, 3));
    const Var b = t.constant(Matrix::Zero(2, 2));
    CHECK_THROWS_AS(ad::add(a, b), ad::ShapeError);
    CHECK_THROWS_AS(ad::matmul(a, b), ad::ShapeError);
    try {
        ad::matmul(a, b);
    } catch (const ad::ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("2x2") != std::string::npos);
    }
    CHECK_THROWS_AS(t.backward(a), ad::ShapeError);
}

TEST_CASE("non-finite results are rejected") {
    Tape t;
    CHECK_THROWS_AS(ad::log(t.constant(Matrix::Constant(1, 1, -1.0))), std::domain_error);
    CHECK_THROWS_AS(ad::exp(t.constant(Matrix::Constant(1, 1, 1e4))), std::domain_error);
}

TEST_CASE("every differentiable op matches finite differences") {
    for (const OpCase& op : differentiable_ops()) {
        INFO(op.name);
        CHECK(op_case_error(op) < 1e-4);
    }
}

TEST_CASE("grouped_linear equals a block-diagonal matmul") {
    Rng rng(3);
    const Index G = 3, in = 2, out = 4, B = 5;
    const Matrix x = rng.normal_matrix(B, G * in);
    const Matrix w = rng.normal_matrix(G * in, out);
    const Matrix b = rng.normal_matrix(1, G * out);
    Matrix dense = Matrix::Zero(G * in, G * out);
    for (Index g = 0; g < G; ++g) dense.block(g * in, g * out, in, out) = w.middleRows(g * in, in);
    const Matrix expected = (x * dense).rowwise() + b.row(0);
    Tape t;
    const Matrix got = ad::grouped_linear(t.constant(x), t.constant(w), t.constant(b), G).value();
    CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("scatter_rows inverts gather_rows") {
    Rng rng(4);
    const Matrix a = rng.normal_matrix(5, 3);
    const std::array<Index, 3> rows{4, 0, 2};
    Tape t;
    const Var g = ad::gather_rows(t.constant(a), rows);
    const Matrix back = ad::scatter_rows(g, rows, 5).value();
    for (Index r : rows) CHECK(back.row(r) == a.row(r));
    CHECK(back.row(1).isZero());
    CHECK(back.row(3).isZero());
}

TEST_CASE("stop_gradient blocks the backward pass") {
    Tape t;
    const Var x = t.variable(Matrix::Constant(1, 1, 2.0));
    t.backward(ad::add(ad::mul(x, x), ad::stop_gradient(ad::mul(x, x))));
    CHECK(x.grad()(0, 0) == doctest::Approx(4.0));
}

TEST_CASE("sample_mask_st forward is the hard threshold, backward the sigmoid slope") {
    Rng rng(5);
    const Matrix logits = rng.normal_matrix(4, 5);
    const Matrix noise = rng.logistic_matrix(4, 5);
    Tape t;
    const Var a = t.variable(logits);
    const Var m = ad::sample_mask_st(a, t.constant(noise));
    const Matrix w = rng.normal_matrix(4, 5);
    t.backward(ad::sum(ad::mul(m, t.constant(w))));
    for (Index i = 0; i < logits.size(); ++i) {
        const double x = logits.data()[i] + noise.data()[i];
        CHECK(m.value().data()[i] == (x > 0 ? 1.0 : 0.0));
        const double s = 1.0 / (1.0 + std::exp(-x));
        CHECK(a.grad().data()[i] == doctest::Approx(w.data()[i] * s * (1 - s)).epsilon(1e-12));
    }
}

TEST_CASE("random two-layer network gradient matches finite differences") {
    Rng rng(11);
    Matrix x = rng.normal_matrix(6, 5);
    Matrix w1 = rng.normal_matrix(5, 8) * 0.5;
    Matrix b1 = rng.normal_matrix(1, 8) * 0.1;
    Matrix w2 = rng.normal_matrix(8, 3) * 0.5;
    const Matrix target = rng.normal_matrix(6, 3);
    auto loss = [&](Tape& t, const Var& vx, const Var& vw1, const Var& vb1, const Var& vw2) {
        const Var h = ad::tanh(ad::add(ad::matmul(vx, vw1), ad::broadcast_rows(vb1, 6)));
        return ad::mean(ad::square(ad::sub(ad::matmul(h, vw2), t.constant(target))));
    };
    auto value = [&] {
        Tape t;
        return loss(t, t.constant(x), t.constant(w1), t.constant(b1), t.constant(w2)).item();
    };
    Tape t;
    const Var vw1 = t.variable(w1), vb1 = t.variable(b1), vw2 = t.variable(w2);
    t.backward(loss(t, t.constant(x), vw1, vb1, vw2));
    CHECK(relative_error(vw1.grad(), numeric_gradient(value, w1, 1e-4)) < 1e-4);
    CHECK(relative_error(vb1.grad(), numeric_gradient(value, b1, 1e-4)) < 1e-4);
    CHECK(relative_error(vw2.grad(), numeric_gradient(value, w2, 1e-4)) < 1e-4);
}

TEST_CASE("identical tapes give bit-identical gradients") {
    auto run = [] {
        Rng rng(21);
        ad::Parameter p("w", rng.normal_matrix(7, 7));
        Tape t;
        const Var w = t.leaf(p);
        const Var x = t.constant(rng.normal_matrix(9, 7));
        t.backward(ad::sum(ad::tanh(ad::matmul(ad::matmul(x, w), w))));
        return p.grad;
    };
    const Matrix a = run();
    const Matrix b = run();
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
}

TEST_CASE("parameter gradients accumulate until zeroed") {
    ad::Parameter p("w", Matrix::Constant(1, 1, 2.0));
    for (int i = 0; i < 2; ++i) {
        Tape t;
        t.backward(ad::square(t.leaf(p)));
    }
    CHECK(p.grad(0, 0) == doctest::Approx(8.0));
    p.zero_grad();
    CHECK(p.grad(0, 0) == 0.0);
}
