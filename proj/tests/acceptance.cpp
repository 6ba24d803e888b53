// One line per acceptance criterion. Every run goes through the gdich executable.

#include "gdich/app/run.hpp"
#include "gdich/csv.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace gdich;
using namespace gdich::app;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / ("gdich_acceptance_" + std::to_string(::getpid()));

fs::path data(const std::string& f) { return fs::path(GDICH_SOURCE_DIR) / "tests" / "data" / f; }

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct Run {
    int code = -1;
    double seconds = 0.0;
    fs::path out;
    Json report;
};

Run gdich(const fs::path& config, const std::string& name, const std::string& extra = "") {
    Run r;
    r.out = kWork / name;
    const std::string cmd = std::string(GDICH_CLI_PATH) + " -c " + config.string() + " -o " + r.out.string() + " " +
                            extra + " > " + (kWork / (name + ".log")).string() + " 2>&1";
    const auto t0 = std::chrono::steady_clock::now();
    const int status = std::system(cmd.c_str());
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (fs::exists(r.out / "report.json")) r.report = Json::parse(slurp(r.out / "report.json"));
    return r;
}

fs::path variant(const std::string& name, const std::string& text) {
    const fs::path p = kWork / (name + ".toml");
    std::ofstream(p) << text;
    return p;
}

int failures = 0;

void line(int id, bool ok, const std::string& what, const std::string& measured) {
    if (!ok) ++failures;
    std::printf("[%s] criterion %d: %s | %s\n", ok ? "PASS" : "FAIL", id, what.c_str(), measured.c_str());
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double at(const Json& j, const std::string& path) {
    const Json& v = at_path(j, path);
    return v.is_number() ? v.get<double>() : std::nan("");
}

bool passed(const Json& j, const std::string& cert) { return at_path(j, "certificates." + cert + ".pass").get<bool>(); }

template <class F>
void guarded(int id, const std::string& what, F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        line(id, false, what, std::string("exception: ") + e.what());
    }
}

void c1() {
    const std::string what = "reference system verifies with K=e^0.2, a=-1, b=1, eps=0.2 in under 10 s";
    guarded(1, what, [&] {
        const Run r = gdich(data("example22_verify.toml"), "c1");
        const Json& c = r.report["certificates"];
        const bool ok = r.code == 0 && std::abs(at(c, "constants.K") - std::exp(0.2)) <= 1e-12 &&
                        at(c, "constants.a") == -1.0 && at(c, "constants.b") == 1.0 && at(c, "constants.eps") == 0.2 &&
                        at(c, "dichotomy.violations") == 0 && at(c, "dichotomy.samples") == 625 &&
                        at(c, "projection.max_commute") <= 1e-8 && r.seconds < 10.0;
        line(1, ok, what,
             fmt("exit %.0f, violations %.0f, commute %.2e, %.2f s", r.code, at(c, "dichotomy.violations"),
                 at(c, "projection.max_commute"), r.seconds));
    });
}

void c2() {
    const std::string what = "evolution matches closed form within 1e-7 on 50 pairs, cocycle within 1e-7";
    guarded(2, what, [&] {
        const Run r = gdich(data("example22_evolve.toml"), "c2");
        const Json& c = r.report["certificates"];
        const double e = at(c, "fidelity.max_relative_error"), k = at(c, "cocycle.max_residual");
        const bool ok = r.code == 0 && at(c, "fidelity.pairs") == 50 && e <= 1e-7 && k <= 1e-7;
        line(2, ok, what, fmt("max relative error %.2e, cocycle %.2e", e, k));
    });
}

void c3() {
    const std::string what = "estimate on diag(-1,1): a in [-1.05,-0.95], b in [0.95,1.05], eps <= 0.05, re-verifies";
    guarded(3, what, [&] {
        const Run r = gdich(data("diag_estimate.toml"), "c3");
        const Json& c = r.report["certificates"]["estimate"]["constants"];
        const double a = at(c, "a"), b = at(c, "b"), eps = at(c, "eps");
        const bool ok = r.code == 0 && a >= -1.05 && a <= -0.95 && b >= 0.95 && b <= 1.05 && eps <= 0.05 &&
                        passed(r.report, "reverify") && at(r.report["certificates"], "reverify.violations") == 0;
        line(3, ok, what, fmt("a %.4f, b %.4f, eps %.4f, K %.4f", a, b, eps, at(c, "K")));
    });
}

void c4() {
    const std::string what = "Lyapunov S within 1e-6 of diag(1,-1), both derivative forms with margin >= 0.9";
    guarded(4, what, [&] {
        const Run r = gdich(data("diag_lyapunov.toml"), "c4");
        const CsvTable S = read_csv((r.out / "S.csv").string());
        double dev = 0.0;
        for (const auto& row : S.rows)
            dev = std::max({dev, std::abs(row[1] - 1.0), std::abs(row[2]), std::abs(row[3]), std::abs(row[4] + 1.0)});
        const Json& c = r.report["certificates"];
        const double mi = at(c, "identity.margin"), mn = at(c, "necessity.margin");
        const bool ok = r.code == 0 && !S.rows.empty() && dev <= 1e-6 && passed(r.report, "identity") &&
                        passed(r.report, "necessity") && mi >= 0.9 && mn >= 0.9;
        line(4, ok, what, fmt("max |S - diag(1,-1)| %.2e, margins %.4f / %.4f", dev, mi, mn));
    });
}

void c5() {
    const std::string what = "spectrum of diag(-1,-2) + (3) is {-2,-1} and {3} within 0.05; eps~=0.1 spec verifies";
    guarded(5, what, [&] {
        const Run r = gdich(data("block_spectrum.toml"), "c5");
        const Json& s = r.report["certificates"]["spectrum"];
        std::vector<double> E, F;
        for (const auto& v : s["E"])
            for (int m = 0; m < v["multiplicity"].get<int>(); ++m) E.push_back(v["value"].get<double>());
        for (const auto& v : s["F"])
            for (int m = 0; m < v["multiplicity"].get<int>(); ++m) F.push_back(v["value"].get<double>());
        std::sort(E.begin(), E.end());
        double err = (E.size() == 2 && F.size() == 1) ? 0.0 : INFINITY;
        if (std::isfinite(err)) err = std::max({std::abs(E[0] + 2.0), std::abs(E[1] + 1.0), std::abs(F[0] - 3.0)});
        const bool ok = r.code == 0 && err <= 0.05 && at(s, "horizon") == 50.0 && passed(r.report, "claim_verify");
        line(5, ok, what,
             fmt("max exponent error %.2e, claim violations %.0f", err,
                 at(r.report["certificates"], "claim_verify.violations")));
    });
}

void c6() {
    const std::string what =
        "robustness c=0.05, omega=2: N=1, margin>0, contraction <= KcN+0.05, |U|_1 <= Khat, semigroup <= 1e-6, "
        "perturbed bounds hold; B=0 keeps P to 1e-9";
    guarded(6, what, [&] {
        const Run r = gdich(data("diag_robust.toml"), "c6");
        const Json& c = r.report["certificates"];
        const double N = at(c, "N.N"), margin = at(c, "smallness.margin"), kc = at(c, "picard.max_contraction"),
                     th = at(c, "picard.theory"), U = at(c, "picard.max_U_norm"), Kh = at(c, "picard.Khat"),
                     sg = std::max(at(c, "semigroup.worst_U"), at(c, "semigroup.worst_V"));
        const fs::path zero = variant("c6_zero",
                                      "command = \"robust\"\n[system]\nkind = \"diag\"\ndiag = [-1.0, 1.0]\n"
                                      "[robust]\nc = 0.05\nomega = 2.0\nB = [[0.0, 0.0], [0.0, 0.0]]\n");
        const Run z = gdich(zero, "c6_zero");
        const double pdev = at(z.report["certificates"], "projections.max_deviation_from_P");
        const bool ok = r.code == 0 && std::abs(N - 1.0) <= 1e-6 && margin > 0.0 && kc <= th + 0.05 && U <= Kh * (1.0 + 1e-9) &&
                        sg <= 1e-6 && passed(r.report, "perturbed") && z.code == 0 && pdev <= 1e-9;
        line(6, ok, what,
             fmt("N-1 %.1e, contraction %.3f (<= %.3f), |U|_1 %.4f", N - 1.0, kc, th + 0.05, U) + fmt(" (Khat %.4f)", Kh) +
                 fmt("; semigroup %.1e, B=0 deviation %.1e", sg, pdev));
    });
}

void c7() {
    const std::string what = "conjugacy: f=0 gives the identity; smooth saturation passes every check";
    guarded(7, what, [&] {
        const fs::path zero = variant("c7_zero",
                                      "command = \"conjugacy\"\n[system]\nkind = \"diag\"\ndiag = [-1.0, 1.0]\n"
                                      "[conjugacy]\nterm = \"zero\"\n");
        const Run z = gdich(zero, "c7_zero");
        const Run r = gdich(data("diag_conjugacy.toml"), "c7");
        const double disp = at(z.report["certificates"], "conjugacy.max_displacement");
        const Json& c = r.report["certificates"]["conjugacy"];
        const double round0 = at(z.report["certificates"], "conjugacy.max_roundtrip");
        const Json& d = r.report["config"]["dichotomy"];
        const double smallness = at(d, "K") * at(r.report["certificates"], "hypotheses.gamma") *
                                 (1.0 / std::abs(at(d, "a")) + 1.0 / at(d, "b"));
        const bool ok = z.code == 0 && disp == 0.0 && round0 == 0.0 && r.code == 0 && smallness <= 0.5 &&
                        c["displacement_ok"] == true && at(c, "max_roundtrip") <= 1e-5 &&
                        at(c, "max_conjugation") <= 1e-5 && at(c, "horizon") == 5.0 &&
                        at(c, "max_contraction") <= at(c, "contraction_theory") + 0.05 && passed(r.report, "conjugacy");
        line(7, ok, what,
             fmt("f=0 displacement %.1e; K*gamma*(1/|a|+1/b) %.3f, roundtrip %.1e, conjugation %.1e", disp, smallness,
                 at(c, "max_roundtrip"), at(c, "max_conjugation")) +
                 fmt(", contraction %.3f (<= %.3f)", at(c, "max_contraction"), at(c, "contraction_theory") + 0.05));
    });
}

void c8() {
    const std::string what =
        "manifold: f=0 in one sweep; cubic case Lipschitz <= 1, invariance <= 1e-4, d <= 3K1, lambda sweep linear "
        "within 10%";
    guarded(8, what, [&] {
        const fs::path zero = variant("c8_zero",
                                      "command = \"manifold\"\n[system]\nkind = \"diag\"\ndiag = [-2.0, 1.0]\n"
                                      "[dichotomy]\nK = 1.0\na = -2.0\nb = 1.0\neps = 0.1\n"
                                      "[manifold]\nterm = \"zero\"\nlambdas = []\n");
        const Run z = gdich(zero, "c8_zero");
        const Run r = gdich(data("saddle_manifold.toml"), "c8");
        const Json& c = r.report["certificates"];
        const double sweeps0 = at(z.report["certificates"], "manifold.sweeps");
        const double lip = at(c, "lipschitz.graph_lipschitz"), inv = at(c, "invariance.max_residual"),
                     d = at(c, "lipschitz.d"), db = at(c, "lipschitz.d_bound"),
                     reg = at(c, "lambda_sweep.regression_residual");
        double phi0 = 0.0;
        for (const auto& row : read_csv((z.out / "phi_slice_s0.csv").string()).rows)
            phi0 = std::max({phi0, std::abs(row[2]), std::abs(row[3])});
        const double small = at(c, "hypotheses.smallness"), dstar = at(c, "lambda_sweep.d_star");
        bool kappas = c["invariance"]["per_kappa"].size() == 3;
        for (const auto& k : c["invariance"]["per_kappa"]) kappas = kappas && k["max_residual"].get<double>() <= 1e-4;
        const bool ok = z.code == 0 && sweeps0 == 1 && phi0 == 0.0 && r.code == 0 && small <= 0.5 && lip <= 1.0 &&
                        inv <= 1e-4 && kappas && d <= db && std::isfinite(dstar) && reg <= 0.1 &&
                        passed(r.report, "lambda_sweep");
        line(8, ok, what,
             fmt("f=0 sweeps %.0f, max |phi| %.1e; smallness %.3f, Lipschitz %.2e", sweeps0, phi0, small, lip) +
                 fmt(", invariance %.2e, d %.4f (<= %.3f)", inv, d, db) +
                 fmt(", d* %.2e, sweep residual %.2e", dstar, reg));
    });
}

void c9() {
    const std::string what = "two runs of the same config give byte-identical report.json";
    guarded(9, what, [&] {
        const Run a = gdich(data("example22_verify.toml"), "c9a");
        const Run b = gdich(data("example22_verify.toml"), "c9b", "-j 2");
        const std::string ra = slurp(a.out / "report.json"), rb = slurp(b.out / "report.json");
        const bool ok = a.code == 0 && b.code == 0 && !ra.empty() && ra == rb;
        line(9, ok, what, fmt("%.0f bytes, identical %.0f", static_cast<double>(ra.size()), ra == rb ? 1.0 : 0.0));
    });
}

} // namespace

int main() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    c1();
    c2();
    c3();
    c4();
    c5();
    c6();
    c7();
    c8();
    c9();
    std::printf("%d of 9 criteria passed\n", 9 - failures);
    fs::remove_all(kWork);
    return failures == 0 ? 0 : 1;
}
