#include "doctest.h"

#include "gdich/evolution.hpp"
#include "gdich/parallel.hpp"

#include <cmath>
#include <algorithm>
#include <array>
#include <random>
#include <thread>

using namespace gdich;

namespace {

CoefficientField example_field() {
    Example22Params p;
    return make_example22(p).field;
}

// classical RK4 with a fixed small step; an oracle independent of odeint
template <class F>
Vec rk4(F f, double t0, double t1, Vec x, int steps) {
    const double h = (t1 - t0) / steps;
    double t = t0;
    for (int i = 0; i < steps; ++i) {
        const Vec k1 = f(t, x);
        const Vec k2 = f(t + h / 2, x + h / 2 * k1);
        const Vec k3 = f(t + h / 2, x + h / 2 * k2);
        const Vec k4 = f(t + h, x + h * k3);
        x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        t += h;
    }
    return x;
}

} // namespace

TEST_CASE("constant diagonal closed form") {
    EvolutionOperator op(const_diag({-1.0, 1.0}));
    const Mat T = op.evolve(2.0, 0.0);
    CHECK(T(0, 0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-9));
    CHECK(T(1, 1) == doctest::Approx(std::exp(2.0)).epsilon(1e-9));
    CHECK(std::abs(T(0, 1)) < 1e-14);
    const Mat B = op.evolve(-2.5, 0.7);
    CHECK(B(0, 0) == doctest::Approx(std::exp(3.2)).epsilon(1e-9));
    CHECK(B(1, 1) == doctest::Approx(std::exp(-3.2)).epsilon(1e-9));
    CHECK((op.evolve(1.3, 1.3) - eye(2)).norm() == 0.0);
}

TEST_CASE("example22 analytic agreement across cells and kinks") {
    const Example22 ex = make_example22(Example22Params{});
    IntegratorConfig cfg;
    cfg.rel_tol = 1e-10;
    cfg.abs_tol = 1e-13;
    EvolutionOperator op(ex.field, cfg);
    for (auto [t, s] : std::vector<std::pair<double, double>>{
             {3.0, 1.0}, {5.5, -4.25}, {-4.25, 5.5}, {0.3, -0.2}, {-3.0, -0.5}, {6.0, 0.0}}) {
        const Mat num = op.evolve(t, s);
        const Mat ref = ex.analytic(t, s);
        INFO("t=" << t << " s=" << s);
        CHECK((num - ref).norm() <= 1e-7 * ref.norm());
    }
    CHECK(op.cached_cells() > 0);
    CHECK(op.max_cached_condition() >= 1.0);
}

TEST_CASE("cocycle and inverse consistency") {
    EvolutionOperator op(example_field());
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int i = 0; i < 40; ++i) {
        std::array<double, 3> v{u(rng), u(rng), u(rng)};
        std::sort(v.begin(), v.end());
        const double s = v[0], r = v[1], t = v[2];
        const Mat lhs = op.evolve(t, s);
        const Mat rhs = op.evolve(t, r) * op.evolve(r, s);
        CHECK((lhs - rhs).norm() <= 1e-7 * std::max(1.0, lhs.norm()));
        const Mat id = op.evolve(t, s) * op.evolve(s, t);
        CHECK((id - eye(2)).norm() <= 1e-7);
    }
}

TEST_CASE("non-normal coefficient: cocycle against direct integration") {
    const CoefficientField w = make_field("rot", 3, [](double t) {
        Mat m(3, 3);
        m << -0.5, 2.0 * std::sin(t), 0.0, -1.0, -0.2, 0.3 * t, 0.1, 0.0, 0.4 * std::cos(2 * t);
        return m;
    });
    EvolutionOperator op(w);
    for (auto [t, s] : std::vector<std::pair<double, double>>{{3.7, -1.2}, {-2.2, 2.9}, {0.5, 0.1}}) {
        const Mat a = op.evolve(t, s);
        const Mat b = op.integrate(s, t, eye(3));
        CHECK((a - b).norm() <= 1e-7 * a.norm());
    }
}

TEST_CASE("unstable inverse") {
    EvolutionOperator op(const_diag({-1.0, 1.0}));
    Mat Q = Mat::Zero(2, 2);
    Q(1, 1) = 1.0;
    const Mat m = op.evolve_inverse_unstable(2.0, 0.0, Q);
    CHECK(m(1, 1) == doctest::Approx(std::exp(-2.0)).epsilon(1e-9));
    CHECK(m(0, 0) == 0.0);
    CHECK(op.evolve_inverse_unstable(2.0, 0.0, Mat::Zero(2, 2)).norm() == 0.0);
    CHECK_THROWS_AS(op.evolve_inverse_unstable(0.0, 2.0, Q), PreconditionError);

    const Example22 ex = make_example22(Example22Params{});
    EvolutionOperator op2(ex.field);
    const Mat e = op2.evolve_inverse_unstable(4.5, 1.5, Q);
    CHECK(e(1, 1) == doctest::Approx(ex.analytic(1.5, 4.5)(1, 1)).epsilon(1e-7));
}

TEST_CASE("projected evolution keeps the stable family") {
    EvolutionOperator op(const_diag({-1.0, 1.0}));
    Mat P = Mat::Zero(2, 2);
    P(0, 0) = 1.0;
    Mat x0(2, 1);
    x0 << 1.0, 1e-9;  // contamination in the unstable direction
    const Mat plain = op.evolve(30.0, 0.0) * x0;
    const Mat proj = op.evolve_projected(30.0, 0.0, P * x0, [&](double) { return P; });
    CHECK(std::abs(plain(1, 0)) > 1.0);
    CHECK(proj(1, 0) == 0.0);
    CHECK(proj(0, 0) == doctest::Approx(std::exp(-30.0)).epsilon(1e-8));
}

TEST_CASE("nonlinear solve") {
    EvolutionOperator op(const_diag({-1.0}));
    NonlinearTerm zero = NonlinearTerm::zero(1);
    const Vec xi = Vec::Constant(1, 2.0);
    CHECK(op.solve_nonlinear(1.5, 0.5, xi, zero, {})(0) == doctest::Approx(2.0 * std::exp(-1.0)).epsilon(1e-9));
    CHECK(op.solve_nonlinear(-1.0, 0.5, xi, zero, {})(0) == doctest::Approx(2.0 * std::exp(1.5)).epsilon(1e-9));

    NonlinearTerm f;
    f.dim = 1;
    f.fn = [](double, const Vec& x, const Param&) { return Vec::Constant(1, 0.1 * std::tanh(x(0))); };
    auto rhs = [](double, const Vec& x) { return Vec::Constant(1, -x(0) + 0.1 * std::tanh(x(0))); };
    const Vec oracle = rk4(rhs, 0.0, 1.0, Vec::Constant(1, 1.0), 100000);
    CHECK(op.solve_nonlinear(1.0, 0.0, Vec::Constant(1, 1.0), f, {})(0) ==
          doctest::Approx(oracle(0)).epsilon(1e-7));
    const Vec back = rk4(rhs, 0.0, -1.0, Vec::Constant(1, 1.0), 100000);
    CHECK(op.solve_nonlinear(-1.0, 0.0, Vec::Constant(1, 1.0), f, {})(0) ==
          doctest::Approx(back(0)).epsilon(1e-7));

    // path: linear part alone agrees with evolve on every requested time
    EvolutionOperator op2(example_field());
    const std::vector<double> ts{2.0, -3.0, 0.0, 1.0, -1.5};
    const Vec x = Vec::Constant(2, 1.0);
    const auto path = op2.nonlinear_path(ts, 0.5, x, NonlinearTerm::zero(2), {});
    for (std::size_t i = 0; i < ts.size(); ++i)
        CHECK((path[i] - op2.evolve(ts[i], 0.5) * x).norm() <= 1e-7 * std::max(1.0, path[i].norm()));
}

TEST_CASE("blowup reported with the time reached") {
    EvolutionOperator op(const_diag({0.0}));
    NonlinearTerm sq;
    sq.dim = 1;
    sq.fn = [](double, const Vec& x, const Param&) { return Vec::Constant(1, x(0) * x(0)); };
    try {
        op.solve_nonlinear(2.0, 0.0, Vec::Constant(1, 1.0), sq, {});
        FAIL("expected blowup");
    } catch (const NumericalError& e) {
        REQUIRE(e.time().has_value());
        CHECK(*e.time() == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("tolerance refinement converges") {
    const Example22 ex = make_example22(Example22Params{});
    const Mat ref = ex.analytic(4.0, -2.0);
    double prev = std::numeric_limits<double>::infinity();
    for (double tol : {1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10}) {
        IntegratorConfig cfg;
        cfg.rel_tol = tol;
        cfg.abs_tol = tol * 1e-3;
        EvolutionOperator op(ex.field, cfg);
        const double err = (op.evolve(4.0, -2.0) - ref).norm() / ref.norm();
        CHECK(err <= 2.0 * prev);
        prev = err;
    }
    CHECK(prev <= 1e-8);
}

TEST_CASE("domain and config errors") {
    EvolutionOperator op(make_field("half", 1, [](double) { return Mat::Constant(1, 1, -1.0); },
                                    Domain::HalfLine));
    CHECK_THROWS_AS(op.evolve(1.0, -1.0), DomainError);
    IntegratorConfig bad;
    bad.rel_tol = 0.0;
    CHECK_THROWS_AS(EvolutionOperator(const_diag({1.0}), bad), PreconditionError);
}

TEST_CASE("concurrent evolution matches sequential") {
    EvolutionOperator shared(example_field());
    EvolutionOperator fresh(example_field());
    std::vector<std::pair<double, double>> pairs;
    for (int i = -6; i <= 6; ++i)
        for (int j = -6; j <= 6; ++j) pairs.emplace_back(0.5 * i + 0.1, 0.5 * j);
    std::vector<Mat> par(pairs.size());
    set_max_threads(8);
    parallel_for(pairs.size(), [&](std::size_t i) { par[i] = shared.evolve(pairs[i].first, pairs[i].second); });
    set_max_threads(0);
    for (std::size_t i = 0; i < pairs.size(); ++i)
        CHECK((par[i] - fresh.evolve(pairs[i].first, pairs[i].second)).norm() == 0.0);
}
