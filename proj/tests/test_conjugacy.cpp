#include "doctest.h"

#include "gdich/conjugacy.hpp"
#include "gdich/quadrature.hpp"

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

DichotomySpec saddle_spec(double eps) {
    return {ProjectionFamily::constant(diag2(1.0, 0.0)), RateQuadruple::uniform(builtin("exp")), 1.0,
            -1.0, 1.0, eps};
}

/// α₀e^{−t²}·x/√(1+‖x‖²): bounded by α₀e^{−t²}, Lipschitz α₀e^{−t²}.
NonlinearTerm smooth_sat(double a0, double eps) {
    NonlinearTerm f;
    f.dim = 2;
    f.fn = [a0](double t, const Vec& x, const Param&) -> Vec {
        return a0 * std::exp(-t * t) * x / std::sqrt(1.0 + x.squaredNorm());
    };
    // sup_t e^{−t²+ε|t|} = e^{ε²/4}
    f.alpha = f.gamma = a0 * std::exp(eps * eps / 4.0);
    f.name = "smooth_sat";
    return f;
}

} // namespace

TEST_CASE("smallness factor and degenerate projections") {
    CHECK(conjugacy_factor(saddle_spec(0.0)) == doctest::Approx(2.0));
    Mat one = Mat::Identity(1, 1);
    DichotomySpec stable{ProjectionFamily::constant(one), RateQuadruple::uniform(builtin("exp")), 1.0, -2.0, 0.0, 0.0};
    CHECK(conjugacy_factor(stable) == doctest::Approx(0.5));
    DichotomySpec flat = saddle_spec(0.0);
    flat.b = 0.0;
    CHECK_THROWS_AS(conjugacy_factor(flat), PreconditionError);
    // weight is e^{−ε|t|} for exponential rates
    CHECK(conjugacy_weight(saddle_spec(0.1), -3.0) == doctest::Approx(std::exp(-0.3)));
}

TEST_CASE("hypothesis sampling") {
    const DichotomySpec spec = saddle_spec(0.1);
    HypothesisProbes probes{linspace(-4.0, 4.0, 33), box_samples(2, -2.0, 2.0, 7)};

    const HypothesisReport z = check_hypotheses(NonlinearTerm::zero(2), spec, probes);
    CHECK(z.pass);
    CHECK(z.margin == 1.0);
    CHECK(z.alpha_observed == 0.0);

    const NonlinearTerm f = smooth_sat(0.1, 0.1);
    const HypothesisReport r = check_hypotheses(f, spec, probes);
    CHECK(r.pass);
    CHECK(r.margin == doctest::Approx(1.0 - 2.0 * f.gamma));
    // the sup of e^{−t²+0.1|t|} sits at |t| = 0.05, between probes
    CHECK(r.alpha_observed <= f.alpha);
    CHECK(r.alpha_observed >= 0.1 * std::sqrt(8.0) / 3.0 * 0.99);

    NonlinearTerm tight = f;
    tight.alpha = 0.05;
    CHECK_FALSE(check_hypotheses(tight, spec, probes).bound_ok);

    NonlinearTerm root;
    root.dim = 2;
    root.fn = [](double, const Vec& x, const Param&) -> Vec { return x.cwiseAbs().cwiseSqrt() * 0.01; };
    root.alpha = 1.0;
    root.gamma = 0.1;
    HypothesisProbes near0{{0.0}, {vec2(0.0, 0.0), vec2(1e-8, 0.0), vec2(1e-4, 0.0), vec2(1.0, 1.0)}};
    const HypothesisReport rr = check_hypotheses(root, spec, near0);
    CHECK_FALSE(rr.lipschitz_ok);
    CHECK_FALSE(rr.pass);
    CHECK(rr.gamma_observed >= 99.0);  // 0.01/√(1e-8)
}

TEST_CASE("zero nonlinearity gives the identity") {
    const DichotomySpec spec = saddle_spec(0.0);
    const EvolutionOperator op(const_matrix(diag2(-1.0, 1.0)));
    ConjugacyConfig cfg;
    cfg.step = 0.05;
    const ConjugacyPair pair = build_pair(spec, op, NonlinearTerm::zero(2), cfg);
    CHECK(pair.bound == 0.0);
    for (const Vec& x : box_samples(2, -1.0, 1.0, 3)) {
        CHECK((pair.H(0.0, x) - x).norm() == 0.0);
        CHECK((pair.L(1.0, x) - x).norm() == 0.0);
        const auto [lh, hl] = roundtrip(pair, 0.0, x);
        CHECK(lh == 0.0);
        CHECK(hl == 0.0);
    }
    CHECK(pair.solver->bounded_l(0.0, vec2(1.0, 1.0)).iterations == 1);
    CHECK(conjugation_residual(pair, op, NonlinearTerm::zero(2), {}, 0.0, vec2(0.5, 0.5), 2.0) <= 1e-9);
}

TEST_CASE("scalar stable case against the closed form") {
    Mat one = Mat::Identity(1, 1);
    const DichotomySpec spec{ProjectionFamily::constant(one), RateQuadruple::uniform(builtin("exp")), 1.0, -1.0, 1.0, 0.0};
    const EvolutionOperator op(const_matrix(-one));
    NonlinearTerm f;
    f.dim = 1;
    f.fn = [](double t, const Vec& x, const Param&) -> Vec { return Vec::Constant(x.size(), 0.1 * std::exp(-std::abs(t))); };
    f.alpha = 0.1;
    f.zero_at_origin = false;
    ConjugacyConfig cfg;
    cfg.t_lo = -2.0;
    cfg.t_hi = 2.0;
    const ConjugacySolver solver(spec, op, f, cfg);
    CHECK(solver.bound() == doctest::Approx(0.1));
    // h(t) = −∫_{−∞}^t e^{−(t−τ)}·0.1e^{−|τ|}dτ
    auto exact = [](double t) { return t >= 0.0 ? -0.1 * std::exp(-t) * (0.5 + t) : -0.05 * std::exp(t); };
    for (double t : {-1.5, -0.25, 0.0, 0.5, 2.0}) {
        const BoundedPath p = solver.bounded_h(t, Vec::Constant(1, 0.3));
        CHECK(std::abs(p.at_center()(0) - exact(t)) <= 1e-8);
        CHECK(p.sup_norm <= 0.1);
    }
}

TEST_CASE("bounded solutions solve their equations") {
    const double eps = 0.1;
    const DichotomySpec spec = saddle_spec(eps);
    const EvolutionOperator op(const_matrix(diag2(-1.0, 1.0)));
    const NonlinearTerm f = smooth_sat(0.1, eps);
    ConjugacyConfig cfg;
    const ConjugacySolver solver(spec, op, f, cfg);
    const Vec xi = vec2(0.5, -0.3);

    SUBCASE("h by variation of constants") {
        const BoundedPath p = solver.bounded_h(0.0, xi, 1.0);
        CHECK(p.sup_norm <= solver.bound());
        QuadConfig q;
        q.rel_tol = 1e-12;
        for (auto [t1, t2] : {std::pair{-1.0, 0.0}, {0.0, 1.0}, {-0.5, 0.75}}) {
            const Vec integral = integrate<Vec>(
                [&](double tau) -> Vec {
                    const Vec X = op.solve_nonlinear(tau, 0.0, xi, f, {});
                    return op.evolve(t2, tau) * f(tau, X, {});
                },
                t1, t2, q);
            const Vec r = p.at(t2) - op.evolve(t2, t1) * p.at(t1) + integral;
            CHECK(r.norm() <= 1e-6);
        }
    }

    SUBCASE("l makes Y + l a nonlinear solution") {
        const BoundedPath p = solver.bounded_l(0.0, xi, 1.0);
        CHECK(p.sup_norm <= solver.bound());
        CHECK(p.contraction <= solver.contraction_theory() + 0.05);
        const double predicted = std::ceil(std::log(cfg.fp_tol / solver.bound()) / std::log(p.contraction));
        CHECK(p.iterations <= predicted + 2);
        for (auto [t1, t2] : {std::pair{-1.0, 0.0}, {0.0, 1.0}, {-0.5, 0.75}}) {
            const Vec y1 = op.evolve(t1, 0.0) * xi + p.at(t1);
            const Vec y2 = op.evolve(t2, 0.0) * xi + p.at(t2);
            CHECK((op.solve_nonlinear(t2, t1, y1, f, {}) - y2).norm() <= 1e-6);
        }
    }

    CHECK_THROWS_AS(solver.bounded_h(0.0, xi, 3.0), PreconditionError);
    CHECK_THROWS_AS(solver.H(0.01, xi), PreconditionError);
    CHECK_THROWS_AS(solver.H(7.0, xi), PreconditionError);
}

TEST_CASE("equivalence on the unit box") {
    const double eps = 0.1;
    const DichotomySpec spec = saddle_spec(eps);
    const EvolutionOperator op(const_matrix(diag2(-1.0, 1.0)));
    const NonlinearTerm f = smooth_sat(0.1, eps);
    const ConjugacyPair pair = build_pair(spec, op, f);
    CHECK(pair.bound == doctest::Approx(2.0 * f.alpha));

    const ConjugacyReport rep = certify(pair, op, f);
    CHECK(rep.samples.size() == 81);
    CHECK(rep.displacement_ok);
    CHECK(rep.max_displacement <= pair.bound);
    CHECK(rep.max_displacement > 1e-3);
    CHECK(rep.max_roundtrip <= 1e-5);
    CHECK(rep.injective);
    CHECK(rep.growth_ok);
    CHECK(rep.max_conjugation <= 1e-5);
    CHECK(rep.max_contraction <= rep.contraction_theory + 0.05);
    CHECK(rep.pass);

    // memoized values are reused verbatim
    const Vec x = vec2(0.25, -0.75);
    CHECK((pair.H(0.0, x) - pair.H(0.0, x)).norm() == 0.0);

    // adding a bounded nonzero function to H breaks property (iv)
    ConjugacyPair shifted = pair;
    shifted.H = [h = pair.H](double t, const Vec& y) -> Vec { return h(t, y) + vec2(0.0, 0.01); };
    CHECK(conjugation_residual(shifted, op, f, {}, 0.0, x, 5.0) >= 1.0);
}

TEST_CASE("smallness and contraction guards") {
    const DichotomySpec spec = saddle_spec(0.0);
    const EvolutionOperator op(const_matrix(diag2(-1.0, 1.0)));
    NonlinearTerm big = smooth_sat(0.6, 0.0);
    CHECK_THROWS_AS(build_pair(spec, op, big), PreconditionError);

    // understated γ: the measured contraction exceeds the claim
    ConjugacyConfig cfg;
    cfg.gamma = 0.02;
    cfg.alpha = 1.0;
    cfg.step = 0.05;
    const ConjugacySolver solver(spec, op, smooth_sat(0.45, 0.0), cfg);
    CHECK_THROWS_AS(solver.bounded_l(0.0, vec2(0.1, 0.1)), NumericalError);
}
