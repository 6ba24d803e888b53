#include "doctest.h"

#include "gdich/csv.hpp"
#include "gdich/growth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace gdich;

namespace {

const ValidationCheck& check_named(const ValidationReport& rep, const std::string& name) {
    for (const auto& c : rep.checks)
        if (c.name == name) return c;
    FAIL("missing check " << name);
    return rep.checks.front();
}

} // namespace

TEST_CASE("builtin rates evaluate their closed forms") {
    CHECK(builtin("exp").eval(0.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(builtin("poly").eval(3.0) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(builtin("expsq").eval(2.0) == doctest::Approx(std::exp(4.0)).epsilon(1e-14));
    CHECK(builtin("polysq").eval(2.0) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(builtin("expabs").eval(-3.0) == doctest::Approx(std::exp(3.0)).epsilon(1e-14));
    CHECK(builtin("exp", {{"rate", 2.0}}).eval(1.5) == doctest::Approx(std::exp(3.0)).epsilon(1e-14));
}

TEST_CASE("builtin derivatives match closed forms") {
    CHECK(builtin("poly").deriv(3.0) == doctest::Approx(1.0));
    CHECK(builtin("polysq").deriv(2.0) == doctest::Approx(4.0));
    CHECK(builtin("expsq").deriv(1.0) == doctest::Approx(2.0 * std::exp(1.0)));
    CHECK(builtin("exp").dlog(-7.0) == doctest::Approx(1.0));
}

TEST_CASE("builtin errors") {
    CHECK_THROWS_AS(builtin("cosh"), ConfigError);
    CHECK_THROWS_AS(builtin("exp", {{"rate", -1.0}}), ConfigError);
    CHECK_THROWS_AS(builtin("exp", {{"speed", 1.0}}), ConfigError);
    CHECK(builtin("poly").domain() == Domain::HalfLine);
    CHECK(builtin("polysq").domain() == Domain::HalfLine);
    CHECK(builtin("expsq").domain() == Domain::HalfLine);
    CHECK(builtin("exp").domain() == Domain::FullLine);
    CHECK_THROWS_AS(builtin("poly").eval(-0.5), DomainError);
}

TEST_CASE("ratio_power") {
    auto r = ratio_power(builtin("exp"), 2.0, 1.0, -1.0);
    CHECK(r.value == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
    CHECK_FALSE(r.saturated);
    CHECK(ratio_power(builtin("poly"), 3.0, 1.0, 2.0).value == doctest::Approx(4.0).epsilon(1e-14));
    auto big = ratio_power(builtin("expsq"), 10.0, 0.0, 1.0);
    CHECK_FALSE(big.saturated);  // e^100 is representable
    CHECK(big.value == doctest::Approx(std::exp(100.0)));
    auto huge = ratio_power(builtin("expsq"), 30.0, 0.0, 1.0);
    CHECK(huge.saturated);
    CHECK(std::isinf(huge.value));
    auto tiny = ratio_power(builtin("expsq"), 30.0, 0.0, -1.0);
    CHECK(tiny.saturated);
    CHECK(tiny.value > 0.0);
}

TEST_CASE("ratio_power reciprocity and saturation flag") {
    const std::vector<std::string> names{"exp", "poly", "polysq", "expabs", "expsq"};
    const std::vector<double> ts{0.0, 0.3, 1.0, 2.5, 4.0, 7.0};
    for (const auto& name : names) {
        const GrowthRate r = builtin(name);
        for (double t : ts)
            for (double s : ts) {
                if (t < s) continue;
                for (double p : {-2.0, -0.5, 0.7, 3.0}) {
                    const auto a = ratio_power(r, t, s, p);
                    const auto b = ratio_power(r, s, t, p);
                    CHECK(a.value > 0.0);
                    CHECK_FALSE(std::isnan(a.value));
                    const double lv = p * (r.log_eval(t) - r.log_eval(s));
                    CHECK(a.saturated == (std::abs(lv) > 700.0));
                    if (!a.saturated) CHECK(a.value * b.value == doctest::Approx(1.0).epsilon(1e-10));
                }
            }
    }
}

TEST_CASE("validate") {
    std::vector<double> probes;
    for (int i = -10; i <= 10; ++i) probes.push_back(i);
    CHECK(validate(builtin("exp"), probes).pass);

    std::vector<double> small;
    for (int i = -5; i <= 5; ++i) small.push_back(i);
    auto poly_full = validate(builtin("poly").with_domain(Domain::FullLine), small);
    CHECK_FALSE(poly_full.pass);
    CHECK_FALSE(check_named(poly_full, "evaluation").pass);
    CHECK(check_named(poly_full, "evaluation").detail.find("evaluation error") != std::string::npos);

    auto abs_rep = validate(builtin("expabs"), probes);
    CHECK_FALSE(abs_rep.pass);
    CHECK_FALSE(check_named(abs_rep, "monotone").pass);
    CHECK(check_named(abs_rep, "derivative").pass);

    std::vector<double> half;
    for (int i = 0; i <= 5; ++i) half.push_back(i);
    CHECK(validate(builtin("poly"), half).pass);
    CHECK(validate(builtin("polysq"), half).pass);
    CHECK(validate(builtin("expsq"), half).pass);
    CHECK_THROWS_AS(validate(builtin("exp"), {}), PreconditionError);
}

TEST_CASE("rho_exp from samples") {
    // rho(t) = t: e^{rho} reproduces exp on the sampled range
    std::vector<double> t, rho;
    for (int i = -20; i <= 20; ++i) {
        t.push_back(0.5 * i);
        rho.push_back(0.5 * i);
    }
    GrowthRate r = rho_exp(t, rho);
    CHECK(r.domain() == Domain::FullLine);
    CHECK(r.eval(0.0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r.log_eval(3.3) == doctest::Approx(3.3).epsilon(1e-12));
    CHECK(r.dlog(1.7) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.log_eval(50.0) == doctest::Approx(50.0).epsilon(1e-12));  // linear extrapolation
    std::vector<double> probes;
    for (int i = -10; i <= 10; ++i) probes.push_back(i);
    CHECK(validate(r, probes).pass);

    const auto dir = std::filesystem::temp_directory_path() / "gdich_rho_test";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "rho.csv").string();
    {
        std::ofstream out(path);
        out << "t,rho\n";
        for (int i = 0; i <= 10; ++i) out << i << "," << 0.5 * i * i << "\n";
    }
    GrowthRate q = rho_exp_from_csv(path);
    CHECK(q.domain() == Domain::HalfLine);
    CHECK(q.log_eval(2.0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(rho_exp({0, 1, 1, 2}, {0, 1, 2, 3}), ConfigError);
    CHECK_THROWS_AS(rho_exp_from_csv((dir / "missing.csv").string()), ConfigError);
}

TEST_CASE("product rate adds logarithms") {
    GrowthRate p = product(builtin("exp"), builtin("exp", {{"rate", 2.0}}));
    CHECK(p.log_eval(1.25) == doctest::Approx(3.75));
    CHECK(p.dlog(0.0) == doctest::Approx(3.0));
    CHECK(product(builtin("exp"), builtin("poly")).domain() == Domain::HalfLine);
}
