#include "support.hpp"
#include "vcd/gaussian.hpp"
#include "vcd/optim.hpp"
#include "vcd/rng.hpp"

#include "doctest.h"

#include <numbers>

using namespace vcd;
using namespace vcd::testing;
using ad::Tape;
using ad::Var;

namespace {

// Monte-Carlo KL[q || p] from samples of q, written directly from the densities.
double monte_carlo_kl(const GaussianParams& q, const GaussianParams& p, int samples, std::uint64_t seed) {
    std::mt19937_64 engine(seed);
    std::normal_distribution<double> normal;
    double total = 0.0;
    for (int s = 0; s < samples; ++s) {
        double log_ratio = 0.0;
        for (Index i = 0; i < q.mean.size(); ++i) {
            const double sq = std::exp(0.5 * q.logvar.data()[i]);
            const double sp = std::exp(0.5 * p.logvar.data()[i]);
            const double x = q.mean.data()[i] + sq * normal(engine);
            const double zq = (x - q.mean.data()[i]) / sq;
            const double zp = (x - p.mean.data()[i]) / sp;
            log_ratio += -std::log(sq) - 0.5 * zq * zq + std::log(sp) + 0.5 * zp * zp;
        }
        total += log_ratio;
    }
    return total / samples;
}

GaussianParams random_gaussian(Rng& rng, Index n) {
    GaussianParams g;
    g.mean = rng.normal_matrix(1, n);
    g.logvar = Matrix(1, n);
    for (Index i = 0; i < n; ++i) g.logvar(0, i) = rng.uniform(-1.0, 1.0);
    return g;
}

}  // namespace

TEST_CASE("reparameterised sample values") {
    Tape t;
    const GaussianVar unit{t.constant(Matrix::Zero(1, 1)), t.constant(Matrix::Zero(1, 1))};
    CHECK(gaussian_reparam_sample(unit, t.constant(Matrix::Constant(1, 1, 1.3))).item() == doctest::Approx(1.3));
    const GaussianVar shifted{t.constant(Matrix::Constant(1, 1, 2.0)), t.constant(Matrix::Zero(1, 1))};
    CHECK(gaussian_reparam_sample(shifted, t.constant(Matrix::Zero(1, 1))).item() == 2.0);
    const GaussianVar bad{t.constant(Matrix::Constant(1, 1, std::nan(""))), t.constant(Matrix::Zero(1, 1))};
    CHECK_THROWS(gaussian_reparam_sample(bad, t.constant(Matrix::Zero(1, 1))));
}

TEST_CASE("sample derivative with respect to logvar is half the noise at logvar 0") {
    for (double n : {-1.4, 0.3, 2.2}) {
        Matrix logvar = Matrix::Zero(1, 1);
        auto value = [&] {
            Tape t;
            return gaussian_reparam_sample({t.constant(Matrix::Zero(1, 1)), t.constant(logvar)},
                                           t.constant(Matrix::Constant(1, 1, n)))
                .item();
        };
        const double numeric = numeric_gradient(value, logvar)(0, 0);
        Tape t;
        const Var lv = t.variable(logvar);
        t.backward(gaussian_reparam_sample({t.constant(Matrix::Zero(1, 1)), lv}, t.constant(Matrix::Constant(1, 1, n))));
        CHECK(lv.grad()(0, 0) == doctest::Approx(0.5 * n).epsilon(1e-12));
        CHECK(numeric == doctest::Approx(0.5 * n).epsilon(1e-6));
    }
}

TEST_CASE("reparameterised samples have the requested mean and variance") {
    const int n = 100000;
    Rng rng(8);
    for (auto [mu, logvar] : {std::pair{0.7, -0.5}, std::pair{-2.0, 1.2}}) {
        Tape t;
        const GaussianVar g{t.constant(Matrix::Constant(n, 1, mu)), t.constant(Matrix::Constant(n, 1, logvar))};
        const Matrix x = gaussian_reparam_sample(g, t.constant(rng.normal_matrix(n, 1))).value();
        const double var = std::exp(logvar);
        const double mean = x.mean();
        const double sample_var = (x.array() - mean).square().sum() / (n - 1);
        CHECK(std::abs(mean - mu) < 3.0 * std::sqrt(var / n));
        CHECK(std::abs(sample_var - var) < 3.0 * var * std::sqrt(2.0 / (n - 1)));
    }
}

TEST_CASE("closed-form KL examples") {
    Tape t;
    Rng rng(1);
    const Matrix m = rng.normal_matrix(2, 3), lv = rng.normal_matrix(2, 3);
    const GaussianVar q{t.constant(m), t.constant(lv)};
    CHECK(gaussian_kl(q, q).item() == 0.0);
    const GaussianVar a{t.constant(Matrix::Zero(1, 1)), t.constant(Matrix::Zero(1, 1))};
    const GaussianVar b{t.constant(Matrix::Ones(1, 1)), t.constant(Matrix::Zero(1, 1))};
    CHECK(gaussian_kl(a, b).item() == doctest::Approx(0.5));
}

TEST_CASE("KL is non-negative and vanishes only at equality") {
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const GaussianParams q = random_gaussian(rng, 4);
        GaussianParams p = random_gaussian(rng, 4);
        CHECK(gaussian_kl_value(q, p) > 0.0);
        CHECK(std::abs(gaussian_kl_value(q, q)) <= 1e-12);
        p = q;
        p.mean(0, 2) += 1e-3;
        CHECK(gaussian_kl_value(q, p) > 0.0);
    }
}

TEST_CASE("KL agrees with a Monte-Carlo estimate") {
    Rng rng(3);
    for (int draw = 0; draw < 3; ++draw) {
        const GaussianParams q = random_gaussian(rng, 4);
        const GaussianParams p = random_gaussian(rng, 4);
        const double exact = gaussian_kl_value(q, p);
        const double mc = monte_carlo_kl(q, p, 1000000, 100 + static_cast<std::uint64_t>(draw));
        CHECK(std::abs(mc - exact) / exact < 0.01);
    }
}

TEST_CASE("KL and log-density gradients match finite differences") {
    Rng rng(4);
    std::vector<Matrix> in{rng.normal_matrix(3, 2), rng.normal_matrix(3, 2), rng.normal_matrix(3, 2),
                           rng.normal_matrix(3, 2)};
    auto kl = [&] {
        Tape t;
        return gaussian_kl({t.constant(in[0]), t.constant(in[1])}, {t.constant(in[2]), t.constant(in[3])}).item();
    };
    Tape t;
    std::vector<Var> v;
    for (auto& m : in) v.push_back(t.variable(m));
    t.backward(gaussian_kl({v[0], v[1]}, {v[2], v[3]}));
    for (std::size_t i = 0; i < 4; ++i) CHECK(relative_error(v[i].grad(), numeric_gradient(kl, in[i])) < 1e-4);

    Matrix x = rng.normal_matrix(3, 2);
    auto lp = [&] {
        Tape t2;
        return ad::sum(gaussian_log_prob(t2.constant(x), {t2.constant(in[0]), t2.constant(in[1])})).item();
    };
    Tape t2;
    const Var vx = t2.variable(x), vm = t2.variable(in[0]), vl = t2.variable(in[1]);
    const Var logp = gaussian_log_prob(vx, {vm, vl});
    t2.backward(ad::sum(logp));
    CHECK(relative_error(vx.grad(), numeric_gradient(lp, x)) < 1e-4);
    CHECK(relative_error(vm.grad(), numeric_gradient(lp, in[0])) < 1e-4);
    CHECK(relative_error(vl.grad(), numeric_gradient(lp, in[1])) < 1e-4);
    const double expected = -0.5 * (std::log(2 * std::numbers::pi) + in[1](0, 0) +
                                    std::pow(x(0, 0) - in[0](0, 0), 2) / std::exp(in[1](0, 0)));
    CHECK(logp.value()(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("logvar clip floors at -3 with zero gradient below") {
    Tape t;
    Matrix lv(1, 3);
    lv << -5.0, -3.0 + 1e-3, 1.0;
    const Var v = t.variable(lv);
    const Var c = clip_logvar(v);
    CHECK(c.value()(0, 0) == -3.0);
    CHECK(c.value()(0, 2) == 1.0);
    t.backward(ad::sum(c));
    CHECK(v.grad()(0, 0) == 0.0);
    CHECK(v.grad()(0, 1) == 1.0);
}

TEST_CASE("first Adam step is -lr * g / (|g| + eps)") {
    AdamConfig cfg;
    cfg.lr = 0.05;
    Matrix p(1, 3);
    p << 1.0, -2.0, 0.5;
    Matrix g(1, 3);
    g << 0.3, -4.0, 1e-3;
    AdamMoments st{Matrix::Zero(1, 3), Matrix::Zero(1, 3)};
    const Matrix before = p;
    adam_update(p, g, st, 1, cfg);
    for (Index i = 0; i < 3; ++i) {
        const double expected = before(0, i) - cfg.lr * g(0, i) / (std::abs(g(0, i)) + cfg.eps);
        CHECK(p(0, i) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("zero gradient leaves parameters unchanged and decays moments") {
    AdamConfig cfg;
    Matrix p = Matrix::Constant(1, 2, 1.5);
    AdamMoments st{Matrix::Zero(1, 2), Matrix::Zero(1, 2)};
    adam_update(p, Matrix::Zero(1, 2), st, 1, cfg);
    CHECK(p(0, 0) == 1.5);
    st.m.setConstant(0.2);
    st.v.setConstant(0.4);
    const Matrix p_before = p;
    adam_update(p, Matrix::Zero(1, 2), st, 2, cfg);
    CHECK(st.m(0, 0) == doctest::Approx(0.2 * cfg.beta1));
    CHECK(st.v(0, 0) == doctest::Approx(0.4 * cfg.beta2));
    // A non-zero first moment still moves the parameter; only fresh zero moments leave it.
    CHECK(p(0, 0) != p_before(0, 0));
}

TEST_CASE("Adam on a quadratic follows the scalar recurrence") {
    ad::Parameter x("x", Matrix::Zero(1, 1));
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt({&x}, cfg);
    double xr = 0.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 100; ++t) {
        opt.zero_grad();
        Tape tape;
        tape.backward(ad::square(ad::add_scalar(tape.leaf(x), -3.0)));
        opt.step();
        const double g = 2.0 * (xr - 3.0);
        m = cfg.beta1 * m + (1 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
        const double mh = m / (1 - std::pow(cfg.beta1, t));
        const double vh = v / (1 - std::pow(cfg.beta2, t));
        xr -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
    CHECK(x.value(0, 0) == doctest::Approx(xr).epsilon(1e-10));
    CHECK(std::abs(x.value(0, 0) - 3.0) < 0.05);
}

TEST_CASE("Adam touches only its own parameters") {
    ad::Parameter a("a", Matrix::Ones(2, 2)), b("b", Matrix::Ones(2, 2));
    a.grad.setConstant(1.0);
    b.grad.setConstant(1.0);
    Adam opt({&a}, {});
    opt.step();
    CHECK(b.value == Matrix::Ones(2, 2));
    CHECK(a.value(0, 0) < 1.0);
}

TEST_CASE("global gradient clipping") {
    ad::Parameter a("a", Matrix::Zero(1, 2)), b("b", Matrix::Zero(1, 1));
    a.grad << 3.0, 0.0;
    b.grad << 4.0;
    const double norm = clip_grad_norm({&a, &b}, 1.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(a.grad(0, 0) == doctest::Approx(0.6));
    CHECK(b.grad(0, 0) == doctest::Approx(0.8));
    CHECK(clip_grad_norm({&a, &b}, 10.0) == doctest::Approx(1.0));
    CHECK(b.grad(0, 0) == doctest::Approx(0.8));
}

TEST_CASE("rng is deterministic and its state round-trips") {
    Rng a(42), b(42);
    for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
    const std::string st = a.state();
    const double next = a.uniform();
    Rng c(0);
    c.set_state(st);
    CHECK(c.uniform() == next);
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2, 0) == derive_seed(1, 2));
}

TEST_CASE("rng distributions") {
    Rng rng(7);
    const int n = 200000;
    double sum = 0, sq = 0, lsum = 0, lsq = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
        const std::uint64_t k = rng.below(7);
        REQUIRE(k < 7);
        const double z = rng.normal();
        sum += z;
        sq += z * z;
        const double l = rng.logistic();
        lsum += l;
        lsq += l * l;
    }
    CHECK(std::abs(sum / n) < 3.0 / std::sqrt(n));
    CHECK(std::abs(sq / n - 1.0) < 3.0 * std::sqrt(2.0 / n));
    // Standard logistic: mean 0, variance pi^2 / 3.
    CHECK(std::abs(lsum / n) < 3.0 * std::numbers::pi / std::sqrt(3.0 * n));
    CHECK(lsq / n == doctest::Approx(std::numbers::pi * std::numbers::pi / 3.0).epsilon(0.03));
}
