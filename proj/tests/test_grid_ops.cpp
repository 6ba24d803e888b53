#include "doctest.h"

#include "gdich/grid_ops.hpp"

#include <cmath>

using namespace gdich;

namespace {

std::vector<Mat> sample(const GridPropagator& g, std::size_t a, std::size_t b,
                        const std::function<Mat(double)>& f) {
    std::vector<Mat> out;
    for (std::size_t j = a; j <= b; ++j) out.push_back(f(g.time(j)));
    return out;
}

Mat col(double x, double y) {
    Mat m(2, 1);
    m << x, y;
    return m;
}

// closed forms of ∫_0^t e^{∓(t−τ)} cos τ dτ
double conv_minus(double t) { return (std::cos(t) + std::sin(t) - std::exp(-t)) / 2; }
double conv_plus(double t) { return (std::exp(t) - std::cos(t) + std::sin(t)) / 2; }

double fwd_error(double h) {
    EvolutionOperator op(const_diag({-1.0, 1.0}));
    const auto steps = static_cast<std::size_t>(std::lround(2.0 / h));
    GridPropagator grid(op, 0.0, h, steps);
    const auto g = sample(grid, 0, steps, [](double t) { return col(std::cos(t), std::cos(t)); });
    const auto y = forward_accumulate(grid, 0, steps, col(0, 0), g);
    double err = 0;
    for (std::size_t j = 0; j <= steps; ++j) {
        const double t = grid.time(j);
        const Mat ref = col(conv_minus(t), conv_plus(t));
        err = std::max(err, (y[j] - ref).norm() / std::max(1.0, ref.norm()));
    }
    return err;
}

} // namespace

TEST_CASE("local rules integrate low-degree polynomials exactly") {
    EvolutionOperator op(const_diag({0.0}));
    GridPropagator grid(op, -1.0, 0.1, 30);
    auto check = [&](std::size_t a, std::size_t b, int deg) {
        const auto g = sample(grid, a, b, [deg](double t) { return Mat::Constant(1, 1, std::pow(t, deg)); });
        const auto y = forward_accumulate(grid, a, b, Mat::Zero(1, 1), g);
        const auto w = backward_accumulate(grid, a, b, Mat::Zero(1, 1), g);
        const double ta = grid.time(a), tb = grid.time(b);
        for (std::size_t j = a; j <= b; ++j) {
            const double t = grid.time(j);
            const double F = (std::pow(t, deg + 1) - std::pow(ta, deg + 1)) / (deg + 1);
            const double B = (std::pow(tb, deg + 1) - std::pow(t, deg + 1)) / (deg + 1);
            CHECK(y[j - a](0, 0) == doctest::Approx(F).epsilon(1e-12).scale(1.0));
            CHECK(w[j - a](0, 0) == doctest::Approx(B).epsilon(1e-12).scale(1.0));
        }
    };
    check(0, 30, 3);
    check(4, 9, 3);
    check(5, 8, 3);
    check(2, 4, 2);
    check(7, 8, 1);
}

TEST_CASE("rule weights") {
    const LocalRule mid = local_rule(5, 0, 10);
    CHECK(mid.first == -1);
    CHECK(mid.w[1] == doctest::Approx(13.0 / 24));
    double sum = 0;
    for (double w : local_rule(0, 0, 10).w) sum += w;
    CHECK(sum == doctest::Approx(1.0));
    CHECK(local_rule(9, 0, 10).first == -2);
}

TEST_CASE("forward accumulation with a dichotomic propagator") {
    const double err = fwd_error(0.05);
    CHECK(err <= 1e-6);
    // fourth order: halving h cuts the error by about 16
    const double err2 = fwd_error(0.025);
    CHECK(err / err2 > 10.0);
}

TEST_CASE("backward accumulation closed form") {
    EvolutionOperator op(const_diag({-1.0}));
    GridPropagator grid(op, -1.0, 0.05, 60);
    const std::size_t b = 60;
    const auto g = sample(grid, 0, b, [](double t) { return Mat::Constant(1, 1, std::cos(t)); });
    const auto w = backward_accumulate(grid, 0, b, Mat::Constant(1, 1, 1.0), g);
    const double B = grid.time(b);
    auto prim = [](double x) { return std::exp(x) * (std::cos(x) + std::sin(x)) / 2; };
    for (std::size_t j = 0; j <= b; ++j) {
        const double t = grid.time(j);
        const double ref = std::exp(-(t - B)) + std::exp(-t) * (prim(B) - prim(t));
        CHECK(w[j](0, 0) == doctest::Approx(ref).epsilon(1e-6));
    }
}

TEST_CASE("flow, nodes and projections") {
    const Example22 ex = make_example22(Example22Params{});
    EvolutionOperator op(ex.field);
    GridPropagator grid(op, -2.0, 0.25, 16);
    CHECK(grid.size() == 17);
    CHECK(grid.end() == doctest::Approx(2.0));
    CHECK(grid.index_of(0.5) == 10);
    CHECK(grid.is_node(-2.0));
    CHECK_FALSE(grid.is_node(0.1));
    CHECK_THROWS_AS(grid.index_of(2.25), PreconditionError);

    const auto fl = grid.flow(8, eye(2), 0, 16);
    for (std::size_t j = 0; j <= 16; ++j) {
        const Mat ref = ex.analytic(grid.time(j), 0.0);
        CHECK((fl[j] - ref).norm() <= 1e-7 * ref.norm());
    }

    Mat P = Mat::Zero(2, 2);
    P(0, 0) = 1;
    NodeProjections proj(grid.size(), P);
    const auto g = sample(grid, 0, 16, [](double) { return col(1.0, 1.0); });
    const auto y = forward_accumulate(grid, 0, 16, col(1.0, 1.0), g, &proj);
    for (const auto& m : y) CHECK(m(1, 0) == 0.0);
    CHECK_THROWS_AS(forward_accumulate(grid, 3, 3, col(0, 0), {col(0, 0)}), PreconditionError);
    CHECK_THROWS_AS(forward_accumulate(grid, 0, 2, col(0, 0), g), PreconditionError);
    CHECK_THROWS_AS(GridPropagator(op, 0.0, -0.1, 3), PreconditionError);
}
