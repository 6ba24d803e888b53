#include "doctest.h"

#include "gdich/manifold.hpp"

#include <cmath>

using namespace gdich;

namespace {

Mat diag2(double a, double b) {
    Mat m = Mat::Zero(2, 2);
    m(0, 0) = a;
    m(1, 1) = b;
    return m;
}

Vec vec2(double x, double y) {
    Vec v(2);
    v << x, y;
    return v;
}

DichotomySpec saddle(double a, double eps) {
    return {ProjectionFamily::constant(diag2(1.0, 0.0)), RateQuadruple::uniform(builtin("exp")), 1.0, a, 1.0, eps};
}

/// λg‖x‖²(x₂, x₁)
NonlinearTerm swap_cubic(double g) {
    NonlinearTerm f;
    f.dim = 2;
    f.fn = [g](double, const Vec& x, const Param& lam) -> Vec {
        const double l = lam.size() > 0 ? lam(0) : 1.0;
        return l * g * x.squaredNorm() * vec2(x(1), x(0));
    };
    f.q = 2.0;
    f.chat = 2.25 * g;
    f.name = "swap_cubic";
    return f;
}

/// (0, ĉx₁³)
NonlinearTerm forcing_cubic(double c) {
    NonlinearTerm f;
    f.dim = 2;
    f.fn = [c](double, const Vec& x, const Param&) -> Vec { return vec2(0.0, c * x(0) * x(0) * x(0)); };
    f.q = 2.0;
    f.chat = c;
    return f;
}

ManifoldProblem cubic_problem() {
    ParameterSpace Y{Vec::Constant(1, 0.0), Vec::Constant(1, 1.5)};
    return {saddle(-2.0, 0.1), swap_cubic(1e-3), Y, std::nullopt};
}

const EvolutionOperator& saddle_op() {
    static const EvolutionOperator op(const_matrix(diag2(-2.0, 1.0)));
    return op;
}

const ManifoldSolver& cubic_solver() {
    static const ManifoldSolver solver(cubic_problem(), saddle_op());
    return solver;
}

const ManifoldSolution& cubic_solution() {
    static const ManifoldSolution sol = cubic_solver().solve(Vec::Constant(1, 1.0));
    return sol;
}

} // namespace

TEST_CASE("radius function against the closed form") {
    ManifoldProblem pb{saddle(-1.0, 0.1), forcing_cubic(1e-3), {}, std::nullopt};
    const RadiusFunction r = compute_radius(pb, {0.0, 0.5, 1.0, 2.5});
    for (std::size_t i = 0; i < r.s.size(); ++i) {
        const double t = r.s[i];
        // C = e^{−1.9t}/1.9, β = e^{12t}/1.9⁵
        CHECK(r.C[i] == doctest::Approx(std::exp(-1.9 * t) / 1.9).epsilon(1e-8));
        CHECK(r.radius[i] == doctest::Approx(std::sqrt(1.9) * std::exp(-1.2 * t)).epsilon(1e-8));
        CHECK(r.radius_bm[i] == doctest::Approx(r.radius[i] * std::exp(-0.1 * t) / 2.0).epsilon(1e-12));
    }
    pb.spec.eps = 0.0;
    CHECK_THROWS_AS(compute_radius(pb, {0.0}), PreconditionError);
    pb.radius_override = 0.5;
    const RadiusFunction c = compute_radius(pb, {0.0, 3.0});
    CHECK(c.constant);
    CHECK(c.radius[1] == 0.5);
    pb.f.q = 0.0;
    CHECK_THROWS_AS(compute_radius(pb, {0.0}), PreconditionError);
}

TEST_CASE("constants and hypotheses") {
    const ManifoldConstants c = manifold_constants(1.0, 2.25e-3, 2.0);
    CHECK(c.smallness == doctest::Approx(0.486));
    CHECK(c.K1 == doctest::Approx(1.0 / 0.514));
    CHECK(c.lipschitz_J == doctest::Approx(0.486 / 0.514));
    CHECK(c.h_prime == doctest::Approx(0.1215));
    CHECK(c.d_bound == doctest::Approx(3.0 / 0.514));

    // log(h^aβ^ε) = −0.3t for a = −2 and +0.2t for a = −1
    const RadiusFunction r2 = compute_radius(cubic_problem(), linspace(0.0, 5.0, 51));
    const ManifoldHypotheses ok = check_manifold_hypotheses(cubic_problem(), r2, Vec::Constant(1, 1.0));
    CHECK(ok.c3_ok);
    CHECK(ok.c3_worst_increase == doctest::Approx(-0.03).epsilon(1e-6));
    CHECK(ok.c2_ok);
    CHECK(ok.pass);

    ManifoldProblem slow = cubic_problem();
    slow.spec.a = -1.0;
    const RadiusFunction r1 = compute_radius(slow, linspace(0.0, 5.0, 51));
    const ManifoldHypotheses bad = check_manifold_hypotheses(slow, r1);
    CHECK_FALSE(bad.c3_ok);
    CHECK(bad.c3_worst_increase == doctest::Approx(0.02).epsilon(1e-6));
    CHECK_FALSE(bad.pass);

    ManifoldProblem big = cubic_problem();
    big.f.chat = 0.01;
    CHECK_FALSE(check_manifold_hypotheses(big, r2).smallness_ok);
}

TEST_CASE("zero nonlinearity gives the flat graph in one sweep") {
    ManifoldProblem pb = cubic_problem();
    pb.f = NonlinearTerm::zero(2);
    pb.f.q = 2.0;
    ManifoldOptions opts;
    opts.shells = 2;
    opts.s_eval = 1.0;
    opts.kappa_max = 1.0;
    const ManifoldSolver solver(pb, saddle_op(), opts);
    const ManifoldSolution sol = solver.solve({});
    CHECK(sol.sweeps == 1);
    CHECK(graph_norm(sol.graph) == 0.0);
}

TEST_CASE("inner fixed point against a scalar closed form") {
    Mat one = Mat::Identity(1, 1);
    const double c = 0.004;
    NonlinearTerm f;
    f.dim = 1;
    f.fn = [c](double, const Vec& x, const Param&) -> Vec { return c * x.array().cube().matrix(); };
    f.q = 2.0;
    f.chat = c;
    DichotomySpec spec{ProjectionFamily::constant(one), RateQuadruple::uniform(builtin("exp")), 1.0, -1.0, 1.0, 0.1};
    const EvolutionOperator op(const_matrix(-one));
    ManifoldOptions opts;
    opts.s_eval = 1.0;
    opts.kappa_max = 1.0;
    const ManifoldSolver solver({spec, f, {}, std::nullopt}, op, opts);
    const ManifoldGraph phi = solver.zero_graph();

    for (double s : {0.0, 1.0}) {
        const double R = solver.ball_radius(s);
        CHECK(R == doctest::Approx(std::sqrt(1.9) * std::exp(-1.2 * s)).epsilon(1e-8));
        const double xi = R;
        const UPath p = solver.solve_u(phi, {}, s, Vec::Constant(1, xi));
        CHECK(p.bound_ratio <= 1.0);
        CHECK(p.contraction <= solver.constants().smallness + 0.05);
        double err = 0.0;
        for (std::size_t i = 0; i < p.t.size(); ++i) {
            // u' = −u + ĉu³: u^{−2} = ĉ + (ξ^{−2} − ĉ)e^{2(t−s)}
            const double exact = 1.0 / std::sqrt(c + (1.0 / (xi * xi) - c) * std::exp(2.0 * (p.t[i] - s)));
            err = std::max(err, std::abs(p.u[i](0) - exact));
        }
        CHECK(err <= 1e-8);
        CHECK_THROWS_AS(solver.solve_u(phi, {}, s, Vec::Constant(1, 1.01 * R)), PreconditionError);
    }
}

TEST_CASE("graph transform against the closed form") {
    const double c = 1e-3;
    ManifoldProblem pb{saddle(-1.0, 0.1), forcing_cubic(c), {}, std::nullopt};
    const EvolutionOperator op(const_matrix(diag2(-1.0, 1.0)));
    ManifoldOptions opts;
    opts.shells = 3;
    opts.s_eval = 1.0;
    opts.kappa_max = 1.0;
    const ManifoldSolver solver(pb, op, opts);
    const TransformResult tr = solver.graph_transform(solver.zero_graph(), {});
    double err = 0.0;
    for (std::size_t j = 0; j < tr.graph.slices(); ++j) {
        if (tr.graph.s(j) > 2.0 + 1e-9) break;
        for (std::size_t k = 0; k < tr.graph.nodes_per_slice(); ++k) {
            const double x = tr.graph.node_effective(j, k)(0);
            // −∫_s^∞ e^{−(τ−s)}ĉ(ξe^{−(τ−s)})³dτ
            err = std::max(err, (tr.graph.value(j, k) - vec2(0.0, -c * x * x * x / 4.0)).norm());
        }
    }
    CHECK(err <= 1e-9);
    // Φ = 0 never enters u, so one more sweep is a fixed point only up to the change in u
    CHECK(tr.distance > 0.0);
}

TEST_CASE("graph transform is Lipschitz with the predicted constant") {
    const ManifoldSolver& solver = cubic_solver();
    const ManifoldGraph zero = solver.zero_graph();
    ManifoldGraph tilt = zero;
    for (std::size_t j = 0; j < tilt.slices(); ++j)
        for (std::size_t k = 0; k < tilt.nodes_per_slice(); ++k)
            tilt.value(j, k) = vec2(0.0, 0.5 * tilt.node_effective(j, k)(0));
    const Param lam = Vec::Constant(1, 1.5);
    const TransformResult a = solver.graph_transform(zero, lam);
    const TransformResult b = solver.graph_transform(tilt, lam);
    const double ratio = graph_distance(a.graph, b.graph) / graph_distance(zero, tilt);
    CHECK(ratio > 0.0);
    CHECK(ratio <= solver.constants().lipschitz_J);
}

TEST_CASE("stable manifold of the cubic saddle") {
    const ManifoldSolver& solver = cubic_solver();
    const ManifoldSolution& sol = cubic_solution();
    const Param lam = Vec::Constant(1, 1.0);
    CHECK(solver.hypotheses().pass);
    CHECK(solver.window() >= 1.0);
    CHECK(sol.outer_contraction <= solver.constants().outer_theory + 0.05);
    CHECK(sol.inner_contraction <= solver.constants().smallness + 0.05);

    SUBCASE("leading order and scaling") {
        // v(s) ≈ −∫_s^∞ e^{−(τ−s)}gξ³e^{−6(τ−s)}dτ
        for (double s : {0.0, 1.0, 2.0}) {
            const double R = solver.ball_radius(s);
            for (double fr : {0.5, 1.0}) {
                const double x = fr * R * 0.95;
                const Vec v = sol.graph(s, vec2(x, 0.0));
                CHECK(std::abs(v(0)) <= 1e-12);
                CHECK(v(1) == doctest::Approx(-1e-3 * x * x * x / 7.0).epsilon(0.02));
                const Vec half = sol.graph(s, vec2(0.5 * x, 0.0));
                CHECK(half(1) / v(1) == doctest::Approx(0.125).epsilon(0.02));
            }
        }
    }

    SUBCASE("certificate") {
        const auto samples = default_samples(solver, {0.0, 1.0, 2.0});
        const ManifoldCertificate cert = certify_manifold(solver, sol, lam, samples, {0.5, 1.0, 2.0});
        CHECK(cert.outer_ok);
        CHECK(cert.invariance.checked == samples.size() * 3);
        CHECK(cert.invariance.outside == 0);
        CHECK(cert.invariance.max_residual <= 1e-4);
        CHECK(cert.lipschitz.graph_lipschitz <= 1.0);
        CHECK(cert.lipschitz.max_proj_leak <= 1e-9);
        CHECK(cert.lipschitz.d <= cert.lipschitz.d_bound);
        CHECK(cert.pass);

        // an off-graph start separates at the unstable rate
        const InvarianceReport off = invariance_check(solver, sol.graph, lam, samples, {0.5, 1.0, 2.0}, 1e-4, 1e-3);
        CHECK(off.max_residual > 1e-2);
        CHECK_FALSE(off.pass);
    }
}

TEST_CASE("parameter dependence is linear") {
    const ManifoldSolver& solver = cubic_solver();
    const auto samples = default_samples(solver, {0.0, 1.0});
    const ManifoldLambdaSweep sw = manifold_lambda_sweep(solver, {0.0, 0.5, 1.0, 1.5}, samples, {0.5, 1.0, 2.0});
    CHECK(sw.linear_ok);
    CHECK(sw.regression_residual <= 0.1);
    CHECK(sw.slope > 0.0);
    CHECK(sw.d_star <= sw.d_star_bound);
    CHECK(sw.H_ratio <= 1.0);
    CHECK(graph_norm(sw.solutions[0].graph) == 0.0);
    CHECK_THROWS_AS(manifold_lambda_sweep(solver, {0.0, 1.0}, samples, {1.0}), PreconditionError);
}

TEST_CASE("failing hypotheses stop the solve") {
    ManifoldProblem pb = cubic_problem();
    pb.spec.a = -1.0;
    ManifoldOptions opts;
    opts.shells = 2;
    const EvolutionOperator op(const_matrix(diag2(-1.0, 1.0)));
    const ManifoldSolver solver(pb, op, opts);
    CHECK_THROWS_AS(solver.solve(Vec::Constant(1, 1.0)), PreconditionError);
}
