#include "gdich/app/pipelines.hpp"

#include "gdich/conjugacy.hpp"
#include "gdich/lyapfun.hpp"
#include "gdich/manifold.hpp"
#include "gdich/parallel.hpp"
#include "gdich/robustness.hpp"
#include "gdich/spectrum.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

namespace gdich::app {

namespace {

const Json& val(const RunConfig& cfg, const std::string& path) { return at_path(cfg.values, path); }
double num(const RunConfig& cfg, const std::string& path) { return get_number(val(cfg, path), path); }
int integer(const RunConfig& cfg, const std::string& path) { return get_int(val(cfg, path), path); }
std::vector<double> nums(const RunConfig& cfg, const std::string& path) { return get_numbers(val(cfg, path), path); }
double tol(const RunConfig& cfg, const std::string& name) { return num(cfg, "tolerances." + name); }

Json mat_json(const Mat& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json r = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(r);
    }
    return rows;
}

Json pair_json(const std::pair<double, double>& p) { return Json::array({p.first, p.second}); }

/// Finite doubles only; JSON has no NaN or infinity.
Json finite(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

class Stopwatch {
public:
    explicit Stopwatch(Json& out) : out_(out) {}
    template <class F>
    auto time(const std::string& stage, F&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        if constexpr (std::is_void_v<decltype(f())>) {
            f();
            record(stage, t0);
        } else {
            auto r = f();
            record(stage, t0);
            return r;
        }
    }

private:
    void record(const std::string& stage, std::chrono::steady_clock::time_point t0) {
        out_[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    Json& out_;
};

Mat square_matrix(const RunConfig& cfg, const std::string& path) {
    const Mat m = get_matrix(val(cfg, path), path);
    if (m.rows() == 0 || m.rows() != m.cols()) throw ConfigError(path + ": expected a nonempty square matrix");
    return m;
}

std::function<Mat(double, double)> matrix_exponential(const Mat& A) {
    return [A](double t, double s) -> Mat { return Mat(A * (t - s)).exp(); };
}

TimePairs square_grid(const RunConfig& cfg) {
    const double lo = num(cfg, "grid.t_lo"), hi = num(cfg, "grid.t_hi"), step = num(cfg, "grid.step");
    if (!(step > 0.0)) throw ConfigError("grid.step: must be positive");
    const auto g = hi >= lo ? arange(lo, hi, step) : std::vector<double>{};
    return product_grid(g, g);
}

Json constants_json(const DichotomySpec& s) {
    return {{"K", s.K},
            {"a", s.a},
            {"b", s.b},
            {"eps", s.eps},
            {"rates", {{"h", s.rates.h.name()}, {"k", s.rates.k.name()}, {"mu", s.rates.mu.name()}, {"nu", s.rates.nu.name()}}}};
}

// ---------------------------------------------------------------- rates

PipelineResult rates_pipeline(RunConfig& cfg, const Logger&) {
    PipelineResult res;
    const SystemSetup sys = build_system(cfg);
    const DichotomySpec spec = resolve_spec(cfg, sys, false);
    const int count = integer(cfg, "rates_check.probe_count");
    if (count < 2) throw ConfigError("rates_check.probe_count: must be at least 2");
    const auto probes = linspace(num(cfg, "rates_check.probe_lo"), num(cfg, "rates_check.probe_hi"),
                                 static_cast<std::size_t>(count));
    const std::vector<std::pair<std::string, const GrowthRate*>> roles{
        {"h", &spec.rates.h}, {"k", &spec.rates.k}, {"mu", &spec.rates.mu}, {"nu", &spec.rates.nu}};
    CsvTable table{{"t", "log_h", "log_k", "log_mu", "log_nu"}, {}};
    for (double t : probes) {
        std::vector<double> row{t};
        for (const auto& [role, r] : roles) row.push_back(r->in_domain(t) ? r->log_eval(t) : std::nan(""));
        table.rows.push_back(std::move(row));
    }
    for (const auto& [role, r] : roles) {
        std::vector<double> inside;
        for (double t : probes)
            if (r->in_domain(t)) inside.push_back(t);
        const ValidationReport rep = validate(*r, inside);
        Json checks = Json::array();
        for (const auto& c : rep.checks)
            checks.push_back({{"name", c.name}, {"pass", c.pass}, {"worst", finite(c.worst)}, {"detail", c.detail}});
        res.certificates[role] = {{"rate", r->name()}, {"domain", to_string(r->domain())}, {"checks", checks}, {"pass", rep.pass}};
        res.pass = res.pass && rep.pass;
    }
    res.tables.push_back({"rates.csv", std::move(table)});
    return res;
}

// ---------------------------------------------------------------- evolve

PipelineResult evolve_pipeline(RunConfig& cfg, const Logger& log) {
    PipelineResult res;
    Stopwatch sw(res.timings);
    const SystemSetup sys = build_system(cfg);
    if (!sys.closed_form) throw ConfigError("evolve: system.kind = '" + get_string(val(cfg, "system.kind"), "system.kind") +
                                            "' has no closed-form evolution operator");
    const EvolutionOperator op(sys.field, integrator_config(cfg));
    const int n = integer(cfg, "evolve.pairs");
    if (n < 1) throw ConfigError("evolve.pairs: must be positive");
    const double lo = num(cfg, "evolve.t_lo"), hi = num(cfg, "evolve.t_hi");
    if (!(hi > lo)) throw ConfigError("evolve.t_hi: must exceed evolve.t_lo");
    std::mt19937_64 rng(static_cast<std::uint64_t>(integer(cfg, "seed")));
    std::uniform_real_distribution<double> U(lo, hi);
    std::vector<std::array<double, 3>> draws(static_cast<std::size_t>(n));
    for (auto& d : draws) d = {U(rng), U(rng), U(rng)};
    std::vector<double> rel(draws.size()), coc(draws.size());
    if (log) log("evolve: " + std::to_string(n) + " pairs and triples");
    sw.time("compare", [&] {
        parallel_for(draws.size(), [&](std::size_t i) {
            const auto [t, s, r] = draws[i];
            const Mat T = op.evolve(t, s);
            const Mat E = (*sys.closed_form)(t, s);
            rel[i] = opnorm(T - E) / opnorm(E);
            coc[i] = opnorm(op.evolve(t, r) * op.evolve(r, s) - T) / opnorm(T);
        });
    });
    const double max_rel = *std::max_element(rel.begin(), rel.end());
    const double max_coc = *std::max_element(coc.begin(), coc.end());
    const bool fid = max_rel <= tol(cfg, "evolve");
    const bool cyc = max_coc <= tol(cfg, "cocycle");
    res.certificates["fidelity"] = {{"pairs", n}, {"max_relative_error", max_rel}, {"tol", tol(cfg, "evolve")}, {"pass", fid}};
    res.certificates["cocycle"] = {{"triples", n}, {"max_residual", max_coc}, {"tol", tol(cfg, "cocycle")}, {"pass", cyc}};
    res.pass = fid && cyc;
    CsvTable table{{"t", "s", "r", "relative_error", "cocycle_residual"}, {}};
    for (std::size_t i = 0; i < draws.size(); ++i)
        table.rows.push_back({draws[i][0], draws[i][1], draws[i][2], rel[i], coc[i]});
    res.tables.push_back({"evolve.csv", std::move(table)});
    return res;
}

// ---------------------------------------------------------------- dichotomy

PipelineResult verify_pipeline(RunConfig& cfg, const Logger& log) {
    PipelineResult res;
    Stopwatch sw(res.timings);
    const SystemSetup sys = build_system(cfg);
    const DichotomySpec spec = resolve_spec(cfg, sys);
    const EvolutionOperator op(sys.field, integrator_config(cfg));
    const TimePairs grid = square_grid(cfg);
    if (log) log("dichotomy verify: " + std::to_string(grid.size()) + " pairs");
    const Certificate cert = sw.time("verify", [&] { return verify(spec, op, grid, tol(cfg, "verify")); });
    const ProjectionReport proj =
        sw.time("projection", [&] { return check_projection(spec.P, op, grid, tol(cfg, "commute")); });
    res.certificates["constants"] = constants_json(spec);
    res.certificates["dichotomy"] = certificate_json(cert);
    res.certificates["projection"] = {{"max_commute", proj.max_commute},
                                      {"max_idempotency", proj.max_idempotency},
                                      {"worst_at", pair_json(proj.worst_at)},
                                      {"tol", proj.tol},
                                      {"pass", proj.pass}};
    res.pass = cert.pass && proj.pass;
    res.tables.push_back({"ratios.csv", ratios_table(cert)});
    return res;
}

PipelineResult estimate_pipeline(RunConfig& cfg, const Logger& log) {
    PipelineResult res;
    Stopwatch sw(res.timings);
    const SystemSetup sys = build_system(cfg);
    const DichotomySpec base = resolve_spec(cfg, sys, false);
    const EvolutionOperator op(sys.field, integrator_config(cfg));
    const TimePairs grid = square_grid(cfg);
    const double e = num(cfg, "estimate.eps");
    const std::optional<double> eps_fixed = e >= 0.0 ? std::optional<double>(e) : std::nullopt;
    if (log) log("dichotomy estimate: " + std::to_string(grid.size()) + " pairs");
    const EstimateResult r =
        sw.time("estimate", [&] { return estimate_constants(op, base.P, base.rates, grid, eps_fixed); });
    const Certificate cert = sw.time("reverify", [&] { return verify(r.spec, op, grid, tol(cfg, "verify")); });
    res.certificates["estimate"] = {{"constants", constants_json(r.spec)},
                                    {"eps_stable", r.eps_stable},
                                    {"eps_unstable", r.eps_unstable},
                                    {"pairs_stable", r.pairs_stable},
                                    {"pairs_unstable", r.pairs_unstable},
                                    {"rms_stable", r.rms_stable},
                                    {"rms_unstable", r.rms_unstable},
                                    {"warnings", r.warnings},
                                    {"pass", true}};
    res.certificates["reverify"] = certificate_json(cert);
    res.pass = cert.pass;
    res.tables.push_back({"ratios.csv", ratios_table(cert)});
    return res;
}

// ---------------------------------------------------------------- spectrum

Json values_json(const std::vector<ExponentValue>& v) {
    Json out = Json::array();
    for (const auto& x : v) out.push_back({{"value", x.value}, {"multiplicity", x.multiplicity}});
    return out;
}

PipelineResult spectrum_pipeline(RunConfig& cfg, const Logger& log) {
    PipelineResult res;
    Stopwatch sw(res.timings);
    const SystemSetup sys = build_system(cfg);
    if (!sys.block) throw ConfigError("spectrum: needs system.kind = 'block'");
    const DichotomySpec base = resolve_spec(cfg, sys, false);
    const SpectrumRates rates = SpectrumRates::same(base.rates.h, base.rates.k);
    ExponentOptions opts;
    opts.horizon = num(cfg, "spectrum.horizon");
    const IntegratorConfig icfg = integrator_config(cfg);
    if (log) log("spectrum: horizon " + std::to_string(opts.horizon));
    const SpectrumReport rep = sw.time("spectrum", [&] { return spectrum(*sys.block, rates, opts, icfg); });
    const RegularityReport reg = sw.time("regularity", [&] { return regularity(*sys.block, rates, {}, {}, opts, icfg); });
    const SpectrumClaim claim = dichotomy_from_spectrum(rep, reg, rates, num(cfg, "spectrum.eps_tilde"));
    const EvolutionOperator op(sys.block->full(), icfg);
    const double hi = num(cfg, "spectrum.verify_hi"), step = num(cfg, "spectrum.verify_step");
    if (!(step > 0.0)) throw ConfigError("spectrum.verify_step: must be positive");
    const auto g = arange(0.0, hi, step);
    const Certificate cert = sw.time("verify", [&] { return verify(claim.spec, op, product_grid(g, g), tol(cfg, "verify")); });

    res.certificates["spectrum"] = {{"E", values_json(rep.values_E)},
                                    {"F", values_json(rep.values_F)},
                                    {"adjoint_E", values_json(rep.adjoint_E)},
                                    {"adjoint_F", values_json(rep.adjoint_F)},
                                    {"horizon", rep.horizon},
                                    {"warnings", rep.warnings},
                                    {"pass", rep.reliable}};
    res.certificates["regularity"] = {{"gamma", reg.gamma()}, {"gamma_bar", reg.gamma_bar()}, {"pass", true}};
    res.certificates["claim"] = {{"constants", constants_json(claim.spec)},
                                 {"Kbar1", claim.Kbar1},
                                 {"Kbar2", claim.Kbar2},
                                 {"warnings", claim.warnings},
                                 {"pass", true}};
    res.certificates["claim_verify"] = certificate_json(cert);
    res.pass = rep.reliable && cert.pass;

    CsvTable ex{{"side", "adjoint", "value", "multiplicity"}, {}};
    auto add = [&](const std::vector<ExponentValue>& v, double side, double adj) {
        for (const auto& x : v) ex.rows.push_back({side, adj, x.value, static_cast<double>(x.multiplicity)});
    };
    add(rep.values_E, 0, 0);
    add(rep.values_F, 1, 0);
    add(rep.adjoint_E, 0, 1);
    add(rep.adjoint_F, 1, 1);
    res.tables.push_back({"exponents.csv", std::move(ex)});
    res.tables.push_back({"ratios.csv", ratios_table(cert)});
    return res;
}

// ---------------------------------------------------------------- lyapunov

QuadConfig quad_config(const RunConfig& cfg) {
    QuadConfig q;
    q.rel_tol = num(cfg, "quadrature.rel_tol");
    q.abs_tol = num(cfg, "quadrature.abs_tol");
    q.tail_tol = num(cfg, "quadrature.tail_tol");
    return q;
}

Json derivative_json(const DerivativeReport& r) {
    return {{"worst", r.worst}, {"margin", r.margin}, {"nodes", r.t.size()}, {"tol", r.tol}, {"pass", r.pass}};
}

PipelineResult lyapunov_pipeline(RunConfig& cfg, const Logger& log, bool check) {
    PipelineResult res;
    Stopwatch sw(res.timings);
    const SystemSetup sys = build_system(cfg);
    const DichotomySpec spec = resolve_spec(cfg, sys);
    const EvolutionOperator op(sys.field, integrator_config(cfg));
    const double step = num(cfg, "lyapunov.step");
    if (!(step > 0.0)) throw ConfigError("lyapunov.step: must be positive");
    const auto grid = arange(num(cfg, "lyapunov.t_lo"), num(cfg, "lyapunov.t_hi"), step);
    const double dbar = num(cfg, "lyapunov.dbar");
    if (log) log("lyapunov: constructing S on " + std::to_string(grid.size()) + " nodes");
    const LyapunovBuild b = sw.time("construct", [&] { return construct_S(spec, op, dbar, grid, quad_config(cfg)); });
    const QuadraticLyapunov& L = *b.lyap;
    const bool bound_ok = b.worst_norm_bound_ratio <= 1.0 + 1e-9;
    const bool sym_ok = L.max_asymmetry() <= 1e-10;
    res.certificates["construct"] = {{"dbar", dbar},
                                     {"nodes", grid.size()},
                                     {"max_asymmetry", L.max_asymmetry()},
                                     {"min_abs_eigenvalue", L.min_abs_eigenvalue()},
                                     {"worst_norm_bound_ratio", b.worst_norm_bound_ratio},
                                     {"pass", bound_ok && sym_ok}};
    res.pass = bound_ok && sym_ok;
    const auto n = L.dim();
    CsvTable st{{"t"}, {}};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) st.header.push_back("S_" + std::to_string(i + 1) + std::to_string(j + 1));
    for (std::size_t k = 0; k < L.times().size(); ++k) {
        std::vector<double> row{L.times()[k]};
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) row.push_back(L.values()[k](i, j));
        st.rows.push_back(std::move(row));
    }
    res.tables.push_back({"S.csv", std::move(st)});
    if (!check) return res;

    const double dt = tol(cfg, "derivative");
    const DerivativeReport id = sw.time("identity", [&] { return derivative_condition(L, op.field(), RhsForm::Identity, nullptr, dt); });
    const DerivativeReport nec = sw.time("necessity", [&] { return derivative_condition(L, op.field(), RhsForm::Necessity, &spec, dt); });
    res.certificates["identity"] = derivative_json(id);
    res.certificates["necessity"] = derivative_json(nec);
    const double mc = corollary_condition(spec, grid);
    res.certificates["matrix_condition"] = {{"min_eig", mc}, {"pass", mc >= -1e-12}};
    res.pass = res.pass && id.pass && nec.pass;
    CsvTable dt_table{{"t", "identity_max_eig", "necessity_max_eig"}, {}};
    for (std::size_t k = 0; k < id.t.size(); ++k) dt_table.rows.push_back({id.t[k], id.max_eig[k], nec.max_eig[k]});
    res.tables.push_back({"derivative.csv", std::move(dt_table)});
    return res;
}

// ---------------------------------------------------------------- robust

PipelineResult robust_pipeline_cli(RunConfig& cfg, const Logger& log) {
    PipelineResult res;
    Stopwatch sw(res.timings);
    const SystemSetup sys = build_system(cfg);
    const DichotomySpec spec = resolve_spec(cfg, sys);
    const EvolutionOperator op(sys.field, integrator_config(cfg));
    const Mat Bm = square_matrix(cfg, "robust.B");
    if (Bm.rows() != op.dim()) throw ConfigError("robust.B: dimension differs from the system");
    const double c = num(cfg, "robust.c"), decay = num(cfg, "robust.decay");
    PerturbationSpec pert;
    pert.B = [Bm, c, decay](double t, const Param&) -> Mat { return c * std::exp(-decay * std::abs(t)) * Bm; };
    pert.c = c * opnorm(Bm);
    pert.omega = num(cfg, "robust.omega");
    pert.name = "B";

    RobustRun run;
    const int nc = integer(cfg, "robust.n_count");
    if (nc < 2) throw ConfigError("robust.n_count: must be at least 2");
    run.N_grid = linspace(num(cfg, "robust.n_lo"), num(cfg, "robust.n_hi"), static_cast<std::size_t>(nc));
    run.starts = nums(cfg, "robust.starts");
    run.proj_grid = arange(num(cfg, "robust.proj_lo"), num(cfg, "robust.proj_hi"), num(cfg, "robust.proj_step"));
    const auto vg = arange(num(cfg, "robust.verify_lo"), num(cfg, "robust.verify_hi"), num(cfg, "robust.verify_step"));
    run.verify_grid = product_grid(vg, vg);
    run.semigroup_t_max = num(cfg, "robust.semigroup_t_max");
    RobustOptions opts;
    opts.step = num(cfg, "robust.step");
    opts.window = num(cfg, "robust.window");
    opts.fp_tol = num(cfg, "robust.fp_tol");
    opts.contraction_slack = tol(cfg, "contraction_slack");
    opts.quad = quad_config(cfg);
    if (log) log("robust: N, Picard iteration, projections, perturbed bounds");
    const RobustResult r = sw.time("pipeline", [&] { return robust_pipeline(spec, op, pert, Param(), run, opts); });

    double phat_dev = 0.0;
    for (std::size_t i = 0; i < r.proj_grid.size(); ++i)
        phat_dev = std::max(phat_dev, (r.Phat[i] - spec.P.P(r.proj_grid[i])).cwiseAbs().maxCoeff());
    double u_norm = 0.0, v_norm = 0.0;
    for (const auto& u : r.family.U) u_norm = std::max(u_norm, u.weighted_norm);
    for (const auto& v : r.family.V) v_norm = std::max(v_norm, v.weighted_norm);
    const bool contraction_ok = r.family.max_contraction <= r.small.KcN + opts.contraction_slack &&
                                std::max(u_norm, v_norm) <= r.family.Khat * (1.0 + 1e-9);
    const bool semigroup_ok = std::max(r.semigroup.worst_U, r.semigroup.worst_V) <= tol(cfg, "semigroup");
    res.certificates["N"] = {{"N", r.N.N}, {"at", r.N.at}, {"tail", r.N.tail}, {"pass", true}};
    res.certificates["smallness"] = {{"margin", r.small.margin}, {"KcN", r.small.KcN}, {"Khat", finite(r.small.Khat)},
                                     {"decay_ratio", r.decay_ratio}, {"pass", r.small.ok}};
    res.certificates["picard"] = {{"window", r.family.window},
                                  {"max_iterations", r.family.max_iterations},
                                  {"max_contraction", r.family.max_contraction},
                                  {"theory", r.small.KcN},
                                  {"omega1_norm", r.family.omega1_norm},
                                  {"omega2_norm", r.family.omega2_norm},
                                  {"max_U_norm", u_norm},
                                  {"max_V_norm", v_norm},
                                  {"Khat", finite(r.family.Khat)},
                                  {"pass", contraction_ok}};
    res.certificates["semigroup"] = {{"worst_U", r.semigroup.worst_U}, {"worst_V", r.semigroup.worst_V},
                                     {"triples", r.semigroup.triples}, {"tol", tol(cfg, "semigroup")}, {"pass", semigroup_ok}};
    res.certificates["projections"] = {{"S0_deviation", r.proj.S0_deviation},
                                       {"S0_bound", r.proj.S0_bound},
                                       {"prefactor", r.proj.prefactor},
                                       {"max_idempotency", r.max_idempotency},
                                       {"max_deviation_from_P", phat_dev},
                                       {"P0", mat_json(r.proj.P0)},
                                       {"Ptilde0", mat_json(r.proj.Ptilde0)},
                                       {"pass", r.proj.S0_deviation <= r.proj.S0_bound + 1e-12}};
    res.certificates["perturbed"] = certificate_json(r.cert);
    res.pass = r.small.ok && contraction_ok && semigroup_ok && r.cert.pass &&
               res.certificates["projections"]["pass"].get<bool>();
    CsvTable nt{{"t", "N"}, {}};
    for (std::size_t i = 0; i < run.N_grid.size() && i < r.N.values.size(); ++i) nt.rows.push_back({run.N_grid[i], r.N.values[i]});
    res.tables.push_back({"N.csv", std::move(nt)});
    res.tables.push_back({"ratios.csv", ratios_table(r.cert)});
    return res;
}

// ---------------------------------------------------------------- conjugacy

bool all_exp(const DichotomySpec& s) {
    for (const GrowthRate* r : {&s.rates.h, &s.rates.k, &s.rates.mu, &s.rates.nu})
        if (r->name() != "exp" || r->params().size() != 1 || r->params()[0].value != 1.0) return false;
    return true;
}

PipelineResult conjugacy_pipeline(RunConfig& cfg, const Logger& log) {
    PipelineResult res;
    Stopwatch sw(res.timings);
    const SystemSetup sys = build_system(cfg);
    const DichotomySpec spec = resolve_spec(cfg, sys);
    const EvolutionOperator op(sys.field, integrator_config(cfg));
    const int n = op.dim();
    const std::string term = get_string(val(cfg, "conjugacy.term"), "conjugacy.term");
    NonlinearTerm f;
    if (term == "zero") {
        f = NonlinearTerm::zero(n);
    } else if (term == "smooth_sat") {
        if (!all_exp(spec)) throw ConfigError("conjugacy.term: smooth_sat needs the rate exp with rate = 1 in every role");
        const double a0 = num(cfg, "conjugacy.alpha0");
        f.dim = n;
        f.fn = [a0](double t, const Vec& x, const Param&) -> Vec {
            return a0 * std::exp(-t * t) * x / std::sqrt(1.0 + x.squaredNorm());
        };
        f.alpha = f.gamma = a0 * std::exp(spec.eps * spec.eps / 4.0);
        f.name = "smooth_sat";
    } else {
        throw ConfigError("conjugacy.term: unknown term '" + term + "' (zero, smooth_sat)");
    }
    ConjugacyConfig cc;
    cc.step = num(cfg, "conjugacy.step");
    cc.t_lo = num(cfg, "conjugacy.t_lo");
    cc.t_hi = num(cfg, "conjugacy.t_hi");
    cc.fp_tol = num(cfg, "conjugacy.fp_tol");
    cc.tail_tol = num(cfg, "conjugacy.tail_tol");
    cc.contraction_slack = tol(cfg, "contraction_slack");

    const double lo = num(cfg, "conjugacy.box_lo"), hi = num(cfg, "conjugacy.box_hi");
    HypothesisProbes probes{linspace(cc.t_lo, cc.t_hi, 41), box_samples(n, lo, hi, 5)};
    const HypothesisReport hyp = check_hypotheses(f, spec, probes);
    res.certificates["hypotheses"] = {{"alpha", hyp.alpha},   {"gamma", hyp.gamma},
                                      {"alpha_observed", hyp.alpha_observed},
                                      {"gamma_observed", hyp.gamma_observed},
                                      {"margin", hyp.margin}, {"pass", hyp.pass}};
    if (!hyp.pass) {
        res.pass = false;
        return res;
    }
    if (log) log("conjugacy: building H and L");
    const ConjugacyPair pair = sw.time("build", [&] { return build_pair(spec, op, f, cc); });
    CertifyOptions co;
    co.ts = nums(cfg, "conjugacy.ts");
    co.box_lo = lo;
    co.box_hi = hi;
    co.per_axis = integer(cfg, "conjugacy.per_axis");
    co.horizon = num(cfg, "conjugacy.horizon");
    co.roundtrip_tol = tol(cfg, "roundtrip");
    co.conjugation_tol = tol(cfg, "conjugation");
    const ConjugacyReport rep = sw.time("certify", [&] { return certify(pair, op, f, co); });
    res.certificates["conjugacy"] = {{"bound", rep.bound},
                                     {"horizon", co.horizon},
                                     {"max_displacement", rep.max_displacement},
                                     {"max_roundtrip", rep.max_roundtrip},
                                     {"min_separation", rep.min_separation},
                                     {"growth_slack", rep.growth_slack},
                                     {"max_conjugation", rep.max_conjugation},
                                     {"max_contraction", rep.max_contraction},
                                     {"contraction_theory", rep.contraction_theory},
                                     {"window_stable", rep.window_stable},
                                     {"window_unstable", rep.window_unstable},
                                     {"max_iterations", rep.max_iterations},
                                     {"samples", rep.samples.size()},
                                     {"displacement_ok", rep.displacement_ok},
                                     {"roundtrip_ok", rep.roundtrip_ok},
                                     {"injective", rep.injective},
                                     {"growth_ok", rep.growth_ok},
                                     {"conjugation_ok", rep.conjugation_ok},
                                     {"contraction_ok", rep.contraction_ok},
                                     {"pass", rep.pass}};
    res.pass = rep.pass;
    CsvTable tab{{"t"}, {}};
    for (int i = 0; i < n; ++i) tab.header.push_back("x_" + std::to_string(i + 1));
    for (int i = 0; i < n; ++i) tab.header.push_back("H_" + std::to_string(i + 1));
    tab.header.push_back("roundtrip_LH");
    tab.header.push_back("roundtrip_HL");
    for (const auto& s : rep.samples) {
        std::vector<double> row{s.t};
        for (int i = 0; i < n; ++i) row.push_back(s.x(i));
        for (int i = 0; i < n; ++i) row.push_back(s.Hx(i));
        row.push_back(s.roundtrip_LH);
        row.push_back(s.roundtrip_HL);
        tab.rows.push_back(std::move(row));
    }
    res.tables.push_back({"conjugacy.csv", std::move(tab)});
    return res;
}

// ---------------------------------------------------------------- manifold

PipelineResult manifold_pipeline(RunConfig& cfg, const Logger& log) {
    PipelineResult res;
    Stopwatch sw(res.timings);
    const SystemSetup sys = build_system(cfg);
    const DichotomySpec spec = resolve_spec(cfg, sys);
    const EvolutionOperator op(sys.field, integrator_config(cfg));
    const int n = op.dim();
    const std::string term = get_string(val(cfg, "manifold.term"), "manifold.term");
    NonlinearTerm f;
    if (term == "zero") {
        f = NonlinearTerm::zero(n, LipschitzKind::Manifold);
        f.q = 2.0;
    } else if (term == "swap_cubic") {
        if (n != 2) throw ConfigError("manifold.term: swap_cubic needs a two-dimensional system");
        const double g = num(cfg, "manifold.g");
        f.dim = 2;
        f.fn = [g](double, const Vec& x, const Param& lam) -> Vec {
            const double l = lam.size() > 0 ? lam(0) : 1.0;
            Vec out(2);
            out << x(1), x(0);
            return l * g * x.squaredNorm() * out;
        };
        f.kind = LipschitzKind::Manifold;
        f.q = 2.0;
        f.chat = 1.5 * g * std::max(std::abs(num(cfg, "manifold.lambda_lo")), std::abs(num(cfg, "manifold.lambda_hi")));
        f.name = "swap_cubic";
    } else {
        throw ConfigError("manifold.term: unknown term '" + term + "' (zero, swap_cubic)");
    }
    const double r_over = num(cfg, "manifold.radius");
    ManifoldProblem pb{spec, f,
                       ParameterSpace{Vec::Constant(1, num(cfg, "manifold.lambda_lo")),
                                      Vec::Constant(1, num(cfg, "manifold.lambda_hi"))},
                       r_over > 0.0 ? std::optional<double>(r_over) : std::nullopt};
    pb.Y.validate();
    const auto starts = nums(cfg, "manifold.starts");
    const auto kappas = nums(cfg, "manifold.kappas");
    if (starts.empty() || kappas.empty()) throw ConfigError("manifold.starts, manifold.kappas: must be nonempty");
    ManifoldOptions mo;
    mo.step = num(cfg, "manifold.step");
    mo.slice_step = num(cfg, "manifold.slice_step");
    mo.s_eval = *std::max_element(starts.begin(), starts.end());
    mo.kappa_max = *std::max_element(kappas.begin(), kappas.end());
    mo.shells = integer(cfg, "manifold.shells");
    mo.tail_tol = num(cfg, "manifold.tail_tol");
    mo.fp_tol = num(cfg, "manifold.fp_tol");
    mo.inner_fp_tol = num(cfg, "manifold.inner_fp_tol");
    mo.contraction_slack = tol(cfg, "contraction_slack");
    mo.quad = quad_config(cfg);
    const Param lam = Vec::Constant(1, num(cfg, "manifold.lambda"));
    if (!pb.Y.contains(lam)) throw ConfigError("manifold.lambda: outside [lambda_lo, lambda_hi]");

    const ManifoldSolver solver = sw.time("setup", [&] { return ManifoldSolver(pb, op, mo); });
    const ManifoldHypotheses& hyp = solver.hypotheses();
    const ManifoldConstants& c = hyp.constants;
    res.certificates["hypotheses"] = {{"smallness", c.smallness},       {"chat", f.chat},
                                      {"K1", finite(c.K1)},             {"K2", finite(c.K2)},
                                      {"lipschitz_J", finite(c.lipschitz_J)},
                                      {"outer_theory", finite(c.outer_theory)},
                                      {"H", finite(c.H)},               {"d_bound", finite(c.d_bound)},
                                      {"d_star_bound", finite(c.d_star_bound)},
                                      {"c2_log_value", hyp.c2_log_value}, {"c2_ok", hyp.c2_ok},
                                      {"c3_worst_increase", finite(hyp.c3_worst_increase)}, {"c3_ok", hyp.c3_ok},
                                      {"smallness_ok", hyp.smallness_ok}, {"origin_ok", hyp.origin_ok},
                                      {"window", solver.window()},      {"s_max", solver.s_max()},
                                      {"pass", hyp.pass}};
    if (!hyp.pass) {
        res.pass = false;
        return res;
    }
    if (log) log("manifold: graph transform iteration");
    const ManifoldSolution sol = sw.time("solve", [&] { return solver.solve(lam); });
    const auto samples = default_samples(solver, starts);
    const ManifoldCertificate cert =
        sw.time("certify", [&] { return certify_manifold(solver, sol, lam, samples, kappas, tol(cfg, "invariance")); });
    Json per = Json::array();
    for (std::size_t i = 0; i < kappas.size(); ++i) per.push_back({{"kappa", kappas[i]}, {"max_residual", cert.invariance.per_kappa[i]}});
    res.certificates["manifold"] = {{"sweeps", sol.sweeps},
                                    {"distances", sol.distances},
                                    {"outer_contraction", sol.outer_contraction},
                                    {"outer_theory", c.outer_theory},
                                    {"inner_contraction", sol.inner_contraction},
                                    {"inner_iterations", sol.inner_iterations},
                                    {"outer_ok", cert.outer_ok},
                                    {"pass", cert.outer_ok}};
    res.certificates["invariance"] = {{"max_residual", cert.invariance.max_residual},
                                      {"per_kappa", per},
                                      {"checked", cert.invariance.checked},
                                      {"outside", cert.invariance.outside},
                                      {"tol", cert.invariance.tol},
                                      {"pass", cert.invariance.pass}};
    res.certificates["lipschitz"] = {{"graph_lipschitz", cert.lipschitz.graph_lipschitz},
                                     {"d", cert.lipschitz.d},
                                     {"d_bound", cert.lipschitz.d_bound},
                                     {"max_proj_leak", cert.lipschitz.max_proj_leak},
                                     {"graph_ok", cert.lipschitz.graph_ok},
                                     {"d_ok", cert.lipschitz.d_ok},
                                     {"pass", cert.lipschitz.pass}};
    res.pass = cert.pass;

    CsvTable phi{{}, {}};
    for (int i = 0; i < n; ++i) phi.header.push_back("xi_" + std::to_string(i + 1));
    for (int i = 0; i < n; ++i) phi.header.push_back("phi_" + std::to_string(i + 1));
    for (std::size_t k = 0; k < sol.graph.nodes_per_slice(); ++k) {
        const Vec x = sol.graph.node_effective(0, k);
        std::vector<double> row;
        for (int i = 0; i < n; ++i) row.push_back(x(i));
        for (int i = 0; i < n; ++i) row.push_back(sol.graph.value(0, k)(i));
        phi.rows.push_back(std::move(row));
    }
    res.tables.push_back({"phi_slice_s0.csv", std::move(phi)});

    const auto lambdas = nums(cfg, "manifold.lambdas");
    CsvTable lt{{"lambda", "flow_distance", "graph_distance"}, {}};
    if (lambdas.size() >= 3) {
        for (double l : lambdas)
            if (!pb.Y.contains(Vec::Constant(1, l))) throw ConfigError("manifold.lambdas: outside [lambda_lo, lambda_hi]");
        if (log) log("manifold: parameter sweep over " + std::to_string(lambdas.size()) + " values");
        const ManifoldLambdaSweep swp = sw.time("sweep", [&] { return manifold_lambda_sweep(solver, lambdas, samples, kappas); });
        const bool ok = std::isfinite(swp.d_star) && swp.regression_residual <= tol(cfg, "regression") &&
                        swp.d_star <= swp.d_star_bound && swp.H_ratio <= 1.0;
        res.certificates["lambda_sweep"] = {{"lambdas", lambdas},
                                            {"flow_distance", swp.flow_distance},
                                            {"graph_distance", swp.graph_distance},
                                            {"d_star", swp.d_star},
                                            {"d_star_bound", finite(swp.d_star_bound)},
                                            {"H_ratio", swp.H_ratio},
                                            {"slope", swp.slope},
                                            {"regression_residual", swp.regression_residual},
                                            {"tol", tol(cfg, "regression")},
                                            {"pass", ok}};
        res.pass = res.pass && ok;
        for (std::size_t i = 0; i < lambdas.size(); ++i)
            lt.rows.push_back({lambdas[i], swp.flow_distance[i], swp.graph_distance[i]});
    }
    res.tables.push_back({"lambda_sweep.csv", std::move(lt)});
    return res;
}

} // namespace

IntegratorConfig integrator_config(const RunConfig& cfg) {
    IntegratorConfig ic;
    ic.rel_tol = num(cfg, "integrator.rel_tol");
    ic.abs_tol = num(cfg, "integrator.abs_tol");
    ic.max_step = num(cfg, "integrator.max_step");
    ic.cell = num(cfg, "integrator.cell");
    ic.blowup = num(cfg, "integrator.blowup");
    ic.validate();
    return ic;
}

SystemSetup build_system(const RunConfig& cfg) {
    SystemSetup s;
    const std::string kind = get_string(val(cfg, "system.kind"), "system.kind");
    if (kind == "example22") {
        const auto eta = nums(cfg, "system.eta");
        const auto hats = get_strings(val(cfg, "system.hats"), "system.hats");
        if (eta.size() != 3) throw ConfigError("system.eta: expected three values");
        if (hats.size() != 4) throw ConfigError("system.hats: expected four rate names");
        Example22Params p;
        p.eta1 = eta[0];
        p.eta2 = eta[1];
        p.eta3 = eta[2];
        p.hats = {builtin(hats[0]), builtin(hats[1]), builtin(hats[2]), builtin(hats[3])};
        Example22 ex = make_example22(p);
        s.field = ex.field;
        s.closed_form = ex.analytic;
        s.P = ex.spec.P;
        s.rate_names = {ex.spec.rates.h.name(), ex.spec.rates.k.name(), ex.spec.rates.mu.name(), ex.spec.rates.nu.name()};
        s.spec = std::move(ex.spec);
    } else if (kind == "diag") {
        const auto d = nums(cfg, "system.diag");
        if (d.empty()) throw ConfigError("system.diag: must be nonempty");
        s.field = const_diag(d);
        Vec dv = Eigen::Map<const Vec>(d.data(), static_cast<Eigen::Index>(d.size()));
        s.closed_form = [dv](double t, double u) -> Mat { return (dv * (t - u)).array().exp().matrix().asDiagonal(); };
        Mat P = Mat::Zero(dv.size(), dv.size());
        double a = -1.0, b = 0.0;
        bool any_neg = false, any_pos = false;
        for (Eigen::Index i = 0; i < dv.size(); ++i) {
            if (dv(i) < 0.0) {
                P(i, i) = 1.0;
                a = any_neg ? std::max(a, dv(i)) : dv(i);
                any_neg = true;
            } else {
                b = any_pos ? std::min(b, dv(i)) : dv(i);
                any_pos = true;
            }
        }
        s.P = ProjectionFamily::constant(P);
        s.rate_names = {"exp", "exp", "exp", "exp"};
        const GrowthRate e = builtin("exp");
        s.spec = DichotomySpec{*s.P, RateQuadruple::uniform(e), 1.0, a, b, 0.0};
    } else if (kind == "matrix") {
        const Mat A = square_matrix(cfg, "system.matrix");
        s.field = const_matrix(A);
        s.closed_form = matrix_exponential(A);
        s.rate_names = {"exp", "exp", "exp", "exp"};
    } else if (kind == "block") {
        const Mat W1 = square_matrix(cfg, "system.w1");
        const Mat W2 = square_matrix(cfg, "system.w2");
        s.block = BlockSystem::make(const_matrix(W1, "W1"), const_matrix(W2, "W2"));
        s.field = s.block->full();
        s.closed_form = matrix_exponential(s.field(0.0));
        s.P = ProjectionFamily::constant(s.block->block_projection());
        s.rate_names = {"exp", "exp", "exp", "exp"};
    } else if (kind == "csv") {
        const std::string rel = get_string(val(cfg, "system.csv"), "system.csv");
        if (rel.empty()) throw ConfigError("system.csv: path required for system.kind = 'csv'");
        std::filesystem::path p(rel);
        if (p.is_relative()) p = cfg.base_dir / p;
        s.field = tabulated_field_from_csv(p.string());
        s.rate_names = {"exp", "exp", "exp", "exp"};
    } else {
        throw ConfigError("system.kind: unknown kind '" + kind + "' (example22, diag, matrix, block, csv)");
    }
    return s;
}

DichotomySpec resolve_spec(RunConfig& cfg, const SystemSetup& sys, bool need_constants) {
    Json& r = cfg.values["rates"];
    const std::vector<std::string> roles{"h", "k", "mu", "nu"};
    for (std::size_t i = 0; i < roles.size(); ++i)
        if (r[roles[i]].is_null()) r[roles[i]] = sys.rate_names[i];
    const RateQuadruple rates{builtin(r["h"].get<std::string>()), builtin(r["k"].get<std::string>()),
                              builtin(r["mu"].get<std::string>()), builtin(r["nu"].get<std::string>())};

    Json& d = cfg.values["dichotomy"];
    std::optional<ProjectionFamily> P = sys.P;
    if (!d["P"].is_null()) {
        const Mat m = get_matrix(d["P"], "dichotomy.P");
        if (m.rows() != sys.field.dim || m.cols() != sys.field.dim)
            throw ConfigError("dichotomy.P: dimension differs from the system");
        P = ProjectionFamily::constant(m);
    } else if (P) {
        d["P"] = P->is_constant() ? mat_json(P->P(0.0)) : Json("system");
    }
    if (!P) throw ConfigError("dichotomy.P: required for this system kind");

    std::vector<std::string> missing;
    auto fill = [&](const char* key, std::optional<double> from_sys) {
        if (d[key].is_null() && from_sys) d[key] = *from_sys;
        if (d[key].is_null()) missing.push_back(std::string("dichotomy.") + key);
    };
    fill("K", sys.spec ? std::optional<double>(sys.spec->K) : std::nullopt);
    fill("a", sys.spec ? std::optional<double>(sys.spec->a) : std::nullopt);
    fill("b", sys.spec ? std::optional<double>(sys.spec->b) : std::nullopt);
    fill("eps", sys.spec ? std::optional<double>(sys.spec->eps) : std::nullopt);
    if (!missing.empty()) {
        if (need_constants) {
            std::ostringstream os;
            os << "missing dichotomy constants for this system kind:";
            for (const auto& m : missing) os << "\n  " << m << ": required";
            throw ConfigError(os.str());
        }
        return DichotomySpec{*P, rates, 1.0, -1.0, 0.0, 0.0};
    }
    DichotomySpec spec{*P, rates, d["K"].get<double>(), d["a"].get<double>(), d["b"].get<double>(), d["eps"].get<double>()};
    if (need_constants) spec.validate();
    return spec;
}

Json certificate_json(const Certificate& c) {
    return {{"samples", c.samples.size()},
            {"violations", c.violations},
            {"worst_stable_ratio", c.worst_stable_ratio},
            {"worst_stable_at", pair_json(c.worst_stable_at)},
            {"worst_unstable_ratio", c.worst_unstable_ratio},
            {"worst_unstable_at", pair_json(c.worst_unstable_at)},
            {"worst_commute_residual", c.worst_commute_residual},
            {"tol", c.tol},
            {"pass", c.pass}};
}

CsvTable ratios_table(const Certificate& cert) {
    CsvTable t{{"t", "s", "stable_ratio", "unstable_ratio"}, {}};
    for (const auto& s : cert.samples) t.rows.push_back({s.t, s.s, s.stable_ratio, s.unstable_ratio});
    return t;
}

PipelineResult run_pipeline(RunConfig& cfg, const Logger& log) {
    const std::string& c = cfg.command;
    if (c == "rates") return rates_pipeline(cfg, log);
    if (c == "evolve") return evolve_pipeline(cfg, log);
    if (c == "dichotomy.verify") return verify_pipeline(cfg, log);
    if (c == "dichotomy.estimate") return estimate_pipeline(cfg, log);
    if (c == "spectrum") return spectrum_pipeline(cfg, log);
    if (c == "lyapunov.construct") return lyapunov_pipeline(cfg, log, false);
    if (c == "lyapunov.check") return lyapunov_pipeline(cfg, log, true);
    if (c == "robust") return robust_pipeline_cli(cfg, log);
    if (c == "conjugacy") return conjugacy_pipeline(cfg, log);
    if (c == "manifold") return manifold_pipeline(cfg, log);
    throw ConfigError("command: unknown command '" + c + "'");
}

} // namespace gdich::app
