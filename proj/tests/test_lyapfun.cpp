#include "doctest.h"

#include "gdich/dichotomy.hpp"
#include "gdich/lyapfun.hpp"

#include <cmath>

using namespace gdich;

namespace {

Mat diag2(double a, double b) {
    Mat m = Mat::Zero(2, 2);
    m(0, 0) = a;
    m(1, 1) = b;
    return m;
}

DichotomySpec saddle_spec() {
    return {ProjectionFamily::constant(diag2(1.0, 0.0)), RateQuadruple::uniform(builtin("exp")), 1.0, -1.0, 1.0, 0.0};
}

QuadraticLyapunov constant_S(const Mat& s, double lo = -3.0, double hi = 3.0, double step = 0.1) {
    const std::vector<double> t = arange(lo, hi, step);
    return QuadraticLyapunov(t, std::vector<Mat>(t.size(), s));
}

} // namespace

TEST_CASE("construct S on the saddle") {
    EvolutionOperator op(const_diag({-1.0, 1.0}));
    const std::vector<double> grid = arange(-1.0, 1.0, 0.25);
    // ∫₀^∞ e^{−2u}e^{(2−2d̄)u}du = 1/(2d̄) on both sides
    for (double dbar : {0.5, 0.25}) {
        const LyapunovBuild b = construct_S(saddle_spec(), op, dbar, grid);
        REQUIRE(b.lyap);
        const double v = 1.0 / (2.0 * dbar);
        for (const Mat& s : b.lyap->values()) CHECK((s - diag2(v, -v)).cwiseAbs().maxCoeff() <= 1e-6);
        CHECK(b.worst_norm_bound_ratio <= 1.0 + 1e-6);
        CHECK(b.worst_norm_bound_ratio == doctest::Approx(0.5).epsilon(1e-6));
        CHECK(b.lyap->min_abs_eigenvalue() == doctest::Approx(v).epsilon(1e-6));
    }
}

TEST_CASE("construct S on a non-normal system") {
    // e^{Au} = [[e^{−u}, c sinh u], [0, e^u]]; P projects onto e₁ along (c/2, 1).
    // S = (1/2d̄)(r rᵀ − (1 + c²/4) e₂e₂ᵀ) with r = (1, −c/2).
    const double c = 0.8, dbar = 0.4;
    Mat A(2, 2);
    A << -1.0, c, 0.0, 1.0;
    Mat P(2, 2);
    P << 1.0, -c / 2.0, 0.0, 0.0;
    const DichotomySpec spec{ProjectionFamily::constant(P), RateQuadruple::uniform(builtin("exp")),
                             std::sqrt(1.0 + c * c / 4.0), -1.0, 1.0, 0.0};
    EvolutionOperator op(const_matrix(A));
    const std::vector<double> grid = arange(-0.5, 0.5, 0.1);
    const LyapunovBuild b = construct_S(spec, op, dbar, grid);
    Vec r(2);
    r << 1.0, -c / 2.0;
    Mat oracle = r * r.transpose();
    oracle(1, 1) -= 1.0 + c * c / 4.0;
    oracle /= 2.0 * dbar;
    for (const Mat& s : b.lyap->values()) CHECK((s - oracle).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(b.worst_norm_bound_ratio <= 1.0);

    const DerivativeReport nec = derivative_condition(*b.lyap, op.field(), RhsForm::Necessity, &spec);
    CHECK(nec.pass);
}

TEST_CASE("pure contraction gives a positive definite S") {
    EvolutionOperator op(const_diag({-1.0, -2.0}));
    const DichotomySpec spec{ProjectionFamily::constant(eye(2)), RateQuadruple::uniform(builtin("exp")), 1.0, -1.0, 1.0, 0.0};
    const LyapunovBuild b = construct_S(spec, op, 0.5, arange(-1.0, 1.0, 0.5));
    for (const Mat& s : b.lyap->values()) {
        CHECK(min_sym_eig(s) > 0.0);
        // diagonal entries ∫ e^{−2λu}e^{u}du = 1/(2λ − 1)
        CHECK(s(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(s(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    }
}

TEST_CASE("construct preconditions") {
    EvolutionOperator op(const_diag({-1.0, 1.0}));
    const std::vector<double> grid = arange(0.0, 1.0, 0.5);
    CHECK_THROWS_AS(construct_S(saddle_spec(), op, 0.0, grid), PreconditionError);
    CHECK_THROWS_AS(construct_S(saddle_spec(), op, 1.0, grid), PreconditionError);
    DichotomySpec half = saddle_spec();
    half.rates = RateQuadruple::uniform(builtin("poly"));
    CHECK_THROWS_AS(construct_S(half, op, 0.5, grid), DomainError);
    CHECK_THROWS_AS(construct_S(saddle_spec(), op, 0.5, {0.0, 0.5, 0.6}), PreconditionError);
}

TEST_CASE("derivative condition") {
    const CoefficientField A = const_diag({-1.0, 1.0});
    const DichotomySpec spec = saddle_spec();
    const QuadraticLyapunov good = constant_S(diag2(1.0, -1.0));
    const DerivativeReport id = derivative_condition(good, A, RhsForm::Identity);
    CHECK(id.pass);
    CHECK(id.margin == doctest::Approx(1.0).epsilon(1e-12));
    const DerivativeReport nec = derivative_condition(good, A, RhsForm::Necessity, &spec);
    CHECK(nec.pass);
    CHECK(nec.margin == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(derivative_condition(good, A, RhsForm::Necessity), PreconditionError);

    const DerivativeReport bad = derivative_condition(constant_S(eye(2)), A, RhsForm::Identity);
    CHECK_FALSE(bad.pass);
    // S' + SA + AᵀS = diag(−2, 2), plus Id
    CHECK(bad.worst == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(bad.worst - 1.0 == doctest::Approx(2.0));

    // S(t) = sin(5t)·Id on a coarse grid: the difference estimate swamps the margin
    const std::vector<double> t = arange(0.0, 6.0, 0.5);
    std::vector<Mat> osc;
    for (double s : t) osc.push_back(std::sin(5.0 * s) * eye(2) + diag2(1.0, -1.0) * 1e-3);
    CHECK_THROWS_AS(derivative_condition(QuadraticLyapunov(t, osc), const_diag({0.0, 0.0}), RhsForm::Identity),
                    PreconditionError);
}

TEST_CASE("derivative of a time-dependent S") {
    // S(t) = e^{t}·Id tabulated: central difference error ≈ h²/6 relative
    const std::vector<double> t = arange(0.0, 2.0, 0.01);
    std::vector<Mat> s;
    for (double x : t) s.push_back(std::exp(x) * eye(2));
    const QuadraticLyapunov q(t, s);
    for (std::size_t i : {2ul, 50ul, 150ul}) {
        const auto [D, err] = q.derivative(i);
        CHECK(D(0, 0) == doctest::Approx(std::exp(t[i])).epsilon(1e-4));
        CHECK(err <= 1e-4 * std::exp(t[i]));
        CHECK(err >= std::abs(D(0, 0) - std::exp(t[i])) * 0.5);
    }
    CHECK(q.S(0.005)(0, 0) == doctest::Approx(0.5 * (1.0 + std::exp(0.01))));
    CHECK_THROWS_AS(q.index_of(0.005), PreconditionError);
}

TEST_CASE("classify by the sign of H") {
    EvolutionOperator op(const_diag({-1.0, 1.0}));
    const QuadraticLyapunov q = constant_S(diag2(1.0, -1.0), -3.0, 10.0);
    CHECK(classify(q, op, 0.0, Vec::Unit(2, 0), 5.0) == VectorClass::Stable);
    CHECK(classify(q, op, 0.0, Vec::Unit(2, 1), 5.0) == VectorClass::Unstable);
    CHECK(classify(q, op, 0.0, Vec::Ones(2), 5.0) == VectorClass::Unstable);
    Vec tilted(2);
    tilted << 10.0, 1.0;  // H = 100e^{−2t} − e^{2t} changes sign near t = 1.15
    CHECK(classify(q, op, 0.0, tilted, 5.0) == VectorClass::Undetermined);
    CHECK(classify(q, op, 0.0, tilted, 1.0) == VectorClass::Stable);
    CHECK_THROWS_AS(classify(q, op, 0.0, Vec::Zero(2), 5.0), PreconditionError);
    CHECK(to_string(VectorClass::Undetermined) == "undetermined");
}

TEST_CASE("decay inequalities on the saddle") {
    EvolutionOperator op(const_diag({-1.0, 1.0}));
    const DichotomySpec spec = saddle_spec();
    const QuadraticLyapunov q = constant_S(diag2(1.0, -1.0), -3.0, 6.0);
    const std::vector<Vec> samples{Vec::Unit(2, 0), Vec::Unit(2, 1)};
    LyapunovHypotheses hyp;
    hyp.eta1 = 2.0;
    hyp.eta2 = 2.0;
    hyp.l1 = std::exp(1.0);
    hyp.l2 = std::exp(1.0);

    const DecayReport r = decay_inequalities(q, spec, op, hyp, {0.0, 1.0}, samples, 2.0);
    CHECK(r.stable_samples == 2);
    CHECK(r.unstable_samples == 2);
    CHECK(r.split_dim_stable + r.split_dim_unstable == 2);
    // Ḣ = −2H along both orbits: equality in the differential and integrated forms
    CHECK(std::abs(r.diff_slack_stable) <= 1e-9);
    CHECK(std::abs(r.gronwall_slack_stable) <= 1e-7);
    CHECK(std::abs(r.gronwall_slack_unstable) <= 1e-7);
    // max over |t − τ| ≤ 1 of e^{−(t−τ)} is e
    CHECK(r.local_ratio_stable == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(r.local_pass);
    CHECK(r.iv_applies);
    CHECK(r.iv_pass);
    CHECK(r.nu_side_min_ratio == doctest::Approx(1.0));
    // H(τ,e₁) = 1 against d̂/l̂₁² = e^{−2}
    CHECK(r.lower_bound_ratio == doctest::Approx(std::exp(2.0)).epsilon(1e-12));
    CHECK(r.pass);

    LyapunovHypotheses steep = hyp;
    steep.eta1 = 2.5;
    const DecayReport s = decay_inequalities(q, spec, op, steep, {0.0}, samples, 2.0);
    CHECK_FALSE(s.differential_pass);
    CHECK(s.diff_slack_stable == doctest::Approx(-0.5).epsilon(1e-9));
    CHECK_FALSE(s.gronwall_pass);
    CHECK_FALSE(s.pass);

    LyapunovHypotheses tight = hyp;
    tight.l1 = 1.0;
    const DecayReport l = decay_inequalities(q, spec, op, tight, {0.0}, samples, 2.0);
    CHECK_FALSE(l.local_pass);
    CHECK(l.local_ratio_stable == doctest::Approx(std::exp(1.0)).epsilon(1e-7));

    CHECK_THROWS_AS(decay_inequalities(q, spec, op, hyp, {0.05}, samples, 2.0), PreconditionError);
}

TEST_CASE("example22 end to end") {
    const Example22 ex = make_example22(Example22Params{});
    EvolutionOperator op(ex.field);
    std::vector<std::pair<double, double>> pairs;
    for (double t = -4.0; t <= 4.0; t += 0.5)
        for (double s = -4.0; s <= 4.0; s += 0.5) pairs.emplace_back(t, s);
    REQUIRE(verify(ex.spec, op, pairs).pass);
    const LyapunovBuild b = construct_S(ex.spec, op, 0.5, arange(-1.0, 1.0, 0.05));
    CHECK(b.worst_norm_bound_ratio <= 1.0);
    CHECK(b.lyap->max_asymmetry() <= 1e-10);
    const DerivativeReport nec = derivative_condition(*b.lyap, ex.field, RhsForm::Necessity, &ex.spec);
    CHECK(nec.pass);
    CHECK(nec.margin > 0.0);
    // h = k = exp and a diagonal projection: P*P + Q*Q − Id = 0
    CHECK(corollary_condition(ex.spec, b.lyap->times()) == doctest::Approx(0.0).epsilon(1e-12));

    const std::vector<Vec> samples{Vec::Unit(2, 0), Vec::Unit(2, 1)};
    LyapunovHypotheses hyp;
    const DecayReport r = decay_inequalities(*b.lyap, ex.spec, op, hyp, {0.0}, samples, 0.5);
    CHECK(r.stable_samples == 1);
    CHECK(r.unstable_samples == 1);
    CHECK(r.lower_bound_ratio > 0.0);
}
