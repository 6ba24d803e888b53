#include "gdich/robustness.hpp"

#include "gdich/grid_ops.hpp"
#include "gdich/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gdich {

namespace {

LogEnvelope inverse_power(const GrowthRate& u, double omega, double log_scale) {
    return {[u, omega, log_scale](double tau) { return log_scale - omega * u.log_eval(std::abs(tau)); },
            [u, omega](double tau) {
                const double sg = tau > 0 ? 1.0 : (tau < 0 ? -1.0 : 0.0);
                return -omega * sg * u.dlog(std::abs(tau));
            }};
}

double weighted_sup(const std::vector<Mat>& x, const std::vector<double>& w) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, opnorm(x[i]) * w[i]);
    return m;
}

double weighted_diff(const std::vector<Mat>& x, const std::vector<Mat>& y, const std::vector<double>& w) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, opnorm(x[i] - y[i]) * w[i]);
    return m;
}

void require_full_line(const DichotomySpec& spec, const EvolutionOperator& op) {
    if (spec.rates.domain() != Domain::FullLine || op.field().domain != Domain::FullLine)
        throw DomainError("robustness needs rates and field on the whole line");
}

struct GridData {
    std::shared_ptr<GridPropagator> grid;
    NodeProjections P, Q;
    std::vector<Mat> B;
};

/// Picard loop shared by both equations: `apply` maps the current iterate to J(iterate).
template <class Apply>
void iterate(BoundedSolution& out, std::vector<Mat> x, const std::vector<double>& w, const Apply& apply,
             const RobustOptions& opts, double KcN, const char* which) {
    double prev = -1.0;
    for (int k = 1; k <= opts.max_iter; ++k) {
        std::vector<Mat> next = apply(x);
        const double d = weighted_diff(next, x, w);
        if (prev > 100.0 * opts.fp_tol) out.contraction = std::max(out.contraction, d / prev);
        x = std::move(next);
        out.iterations = k;
        out.fp_residual = d;
        prev = d;
        if (out.contraction >= 1.0 || out.contraction > KcN + opts.contraction_slack) {
            std::ostringstream os;
            os << which << " iteration at s=" << out.s << " contracts by " << out.contraction
               << ", above KcN + " << opts.contraction_slack;
            throw NumericalError(os.str());
        }
        if (d < opts.fp_tol) {
            out.value = std::move(x);
            out.weighted_norm = weighted_sup(out.value, w);
            return;
        }
    }
    throw NumericalError(std::string(which) + " iteration did not converge");
}

} // namespace

double decay_ratio(const PerturbationSpec& pert, const RateQuadruple& rates, double eps,
                   const std::vector<double>& ts, const std::vector<Param>& lambdas) {
    double worst = 0.0;
    for (double t : ts)
        for (const Param& l : lambdas) {
            const double bound = pert.c * std::exp(-(pert.omega + eps) * std::max(rates.mu.log_eval(std::abs(t)),
                                                                                   rates.nu.log_eval(std::abs(t))));
            const double nb = opnorm(pert(t, l));
            if (nb == 0.0) continue;
            worst = std::max(worst, bound > 0.0 ? nb / bound : std::numeric_limits<double>::infinity());
        }
    return worst;
}

NResult compute_N(const RateQuadruple& rates, double omega, double eps, const std::vector<double>& grid,
                  const QuadConfig& quad) {
    if (!(omega > 0.0) || eps < 0.0) throw PreconditionError("compute_N needs omega > 0 and eps >= 0");
    if (grid.empty()) throw PreconditionError("compute_N needs a time grid");
    NResult out;
    out.values.resize(grid.size());
    std::vector<double> tails(grid.size());
    const LogEnvelope em = inverse_power(rates.mu, omega, 0.0);
    const LogEnvelope en = inverse_power(rates.nu, omega, 0.0);
    auto fm = [&](double tau) { return std::exp(em.log_value(tau)); };
    auto fn = [&](double tau) { return std::exp(en.log_value(tau)); };
    try {
        parallel_for(grid.size(), [&](std::size_t i) {
            const double t = grid[i];
            const CertifiedIntegral lo = integrate_lower(fm, em, t, quad, {0.0});
            const CertifiedIntegral up = integrate_upper(fn, en, t, quad, {0.0});
            out.values[i] = std::exp(eps * rates.nu.log_eval(std::abs(t))) * lo.value +
                            std::exp(eps * rates.mu.log_eval(std::abs(t))) * up.value;
            tails[i] = lo.tail + up.tail;
        });
    } catch (const NumericalError& e) {
        throw PreconditionError(std::string("N integral diverges: ") + e.what());
    }
    const auto it = std::max_element(out.values.begin(), out.values.end());
    out.N = *it;
    out.at = grid[static_cast<std::size_t>(it - out.values.begin())];
    out.tail = *std::max_element(tails.begin(), tails.end());
    return out;
}

Smallness check_smallness(double c, double K, double N) {
    Smallness s;
    s.KcN = K * c * N;
    s.margin = 1.0 - c * K * N * (2.0 * K + 1.0);
    s.ok = s.margin > 0.0;
    s.Khat = s.KcN < 1.0 ? K / (1.0 - s.KcN) : std::numeric_limits<double>::infinity();
    return s;
}

const Mat& BoundedSolution::at(double time) const {
    if (t.size() == 1) {
        if (std::abs(time - t[0]) > 1e-9) throw PreconditionError("time is not a node of the bounded solution");
        return value[0];
    }
    const double h = t[1] - t[0];
    const double x = (time - t[0]) / h;
    const long i = std::lround(x);
    if (i < 0 || i >= static_cast<long>(t.size()) || std::abs(x - static_cast<double>(i)) > 1e-7)
        throw PreconditionError("time is not a node of the bounded solution");
    return value[static_cast<std::size_t>(i)];
}

const BoundedSolution& BoundedSolutionFamily::U_at(double s) const {
    for (const auto& u : U)
        if (std::abs(u.s - s) < 1e-9) return u;
    throw PreconditionError("no stable bounded solution for this start");
}

const BoundedSolution& BoundedSolutionFamily::V_at(double s) const {
    for (const auto& v : V)
        if (std::abs(v.s - s) < 1e-9) return v;
    throw PreconditionError("no unstable bounded solution for this start");
}

double certified_window(const DichotomySpec& spec, const PerturbationSpec& pert, double Khat, double tail_tol) {
    const double scale = spec.K * pert.c * Khat;
    if (scale <= 0.0) return 1.0;
    double T = 0.0;
    for (const GrowthRate* u : {&spec.rates.mu, &spec.rates.nu}) {
        const LogEnvelope env = inverse_power(*u, pert.omega, std::log(scale));
        double R = 1.0;
        while (true) {
            const TailBound tb = upper_tail(env, R);
            if (tb.convergent && tb.bound <= tail_tol) break;
            R += 0.5;
            if (R > 1e4) throw PreconditionError("tail of the bounded-solution equation is not certifiable");
        }
        T = std::max(T, R);
    }
    return T;
}

BoundedSolutionFamily solve_bounded(const DichotomySpec& spec, const EvolutionOperator& op,
                                    const PerturbationSpec& pert, const Param& lambda, double N,
                                    const std::vector<double>& starts, const RobustOptions& opts) {
    spec.validate();
    require_full_line(spec, op);
    if (!(opts.step > 0.0) || !(opts.fp_tol > 0.0) || opts.max_iter < 1)
        throw PreconditionError("robust options out of range");
    const Smallness sm = check_smallness(pert.c, spec.K, N);
    if (!sm.ok) throw PreconditionError("smallness condition fails: margin " + std::to_string(sm.margin));

    const double need = certified_window(spec, pert, sm.Khat, opts.quad.tail_tol);
    double T = need;
    if (opts.window > 0.0) {
        if (opts.window < need)
            throw PreconditionError("window " + std::to_string(opts.window) + " shorter than the certified " +
                                    std::to_string(need));
        T = opts.window;
    }
    for (double s : starts) T = std::max(T, std::abs(s) + opts.step);
    const auto half = static_cast<std::size_t>(std::ceil(T / opts.step - 1e-9));
    T = static_cast<double>(half) * opts.step;

    GridData gd;
    gd.grid = std::make_shared<GridPropagator>(op, -T, opts.step, 2 * half);
    std::vector<double> kinks = pert.breakpoints;
    kinks.insert(kinks.end(), op.field().breakpoints.begin(), op.field().breakpoints.end());
    gd.grid->set_kinks(kinks);
    const GridPropagator& grid = *gd.grid;
    const std::size_t M = grid.size();
    gd.P.resize(M);
    gd.Q.resize(M);
    gd.B.resize(M);
    for (std::size_t j = 0; j < M; ++j) {
        gd.P[j] = spec.P.P(grid.time(j));
        gd.Q[j] = spec.P.Q(grid.time(j));
        gd.B[j] = pert(grid.time(j), lambda);
    }
    const int n = op.dim();
    const auto& r = spec.rates;

    BoundedSolutionFamily fam;
    fam.window = T;
    fam.step = opts.step;
    fam.KcN = sm.KcN;
    fam.Khat = sm.Khat;
    fam.U.resize(starts.size());
    fam.V.resize(starts.size());

    parallel_for(2 * starts.size(), [&](std::size_t job) {
        const bool stable = job < starts.size();
        const double s = starts[stable ? job : job - starts.size()];
        const std::size_t is = grid.index_of(s);
        BoundedSolution sol;
        sol.s = s;
        if (stable) {
            const std::size_t a = is, b = M - 1;
            std::vector<double> w;
            for (std::size_t j = a; j <= b; ++j) {
                sol.t.push_back(grid.time(j));
                w.push_back(std::exp(-spec.a * (r.h.log_eval(grid.time(j)) - r.h.log_eval(s)) -
                                     spec.eps * r.mu.log_eval(std::abs(s))));
            }
            const std::vector<Mat> zero(b - a + 1, Mat::Zero(n, n));
            const std::vector<Mat> base = forward_accumulate(grid, a, b, gd.P[a], zero, &gd.P);
            auto apply = [&](const std::vector<Mat>& U) {
                std::vector<Mat> g1(U.size()), g2(U.size());
                for (std::size_t i = 0; i < U.size(); ++i) {
                    const Mat bu = gd.B[a + i] * U[i];
                    g1[i] = gd.P[a + i] * bu;
                    g2[i] = gd.Q[a + i] * bu;
                }
                std::vector<Mat> y = forward_accumulate(grid, a, b, gd.P[a], g1, &gd.P);
                const std::vector<Mat> z = backward_accumulate(grid, a, b, Mat::Zero(n, n), g2, &gd.Q);
                for (std::size_t i = 0; i < y.size(); ++i) y[i] -= z[i];
                return y;
            };
            iterate(sol, base, w, apply, opts, sm.KcN, "stable");
            fam.U[job] = std::move(sol);
        } else {
            const std::size_t a = 0, b = is;
            std::vector<double> w;
            for (std::size_t j = a; j <= b; ++j) {
                sol.t.push_back(grid.time(j));
                w.push_back(std::exp(spec.b * (r.k.log_eval(s) - r.k.log_eval(grid.time(j))) -
                                     spec.eps * r.nu.log_eval(std::abs(s))));
            }
            const std::vector<Mat> zero(b - a + 1, Mat::Zero(n, n));
            const std::vector<Mat> base = backward_accumulate(grid, a, b, gd.Q[b], zero, &gd.Q);
            auto apply = [&](const std::vector<Mat>& V) {
                std::vector<Mat> g1(V.size()), g2(V.size());
                for (std::size_t i = 0; i < V.size(); ++i) {
                    const Mat bv = gd.B[a + i] * V[i];
                    g1[i] = gd.P[a + i] * bv;
                    g2[i] = -(gd.Q[a + i] * bv);
                }
                std::vector<Mat> y = backward_accumulate(grid, a, b, gd.Q[b], g2, &gd.Q);
                const std::vector<Mat> z = forward_accumulate(grid, a, b, Mat::Zero(n, n), g1, &gd.P);
                for (std::size_t i = 0; i < y.size(); ++i) y[i] += z[i];
                return y;
            };
            iterate(sol, base, w, apply, opts, sm.KcN, "unstable");
            fam.V[job - starts.size()] = std::move(sol);
        }
    });

    for (const auto& u : fam.U) {
        fam.max_iterations = std::max(fam.max_iterations, u.iterations);
        fam.max_contraction = std::max(fam.max_contraction, u.contraction);
        fam.omega1_norm = std::max(fam.omega1_norm, u.weighted_norm);
    }
    for (const auto& v : fam.V) {
        fam.max_iterations = std::max(fam.max_iterations, v.iterations);
        fam.max_contraction = std::max(fam.max_contraction, v.contraction);
        fam.omega2_norm = std::max(fam.omega2_norm, v.weighted_norm);
    }
    return fam;
}

SemigroupReport semigroup_check(const BoundedSolutionFamily& fam, double t_max) {
    SemigroupReport rep;
    for (const auto& us : fam.U)
        for (const auto& usig : fam.U) {
            if (usig.s < us.s) continue;
            const Mat& mid = us.at(usig.s);
            for (std::size_t i = 0; i < usig.t.size() && usig.t[i] <= t_max + 1e-12; ++i) {
                const Mat& direct = us.at(usig.t[i]);
                const double nd = opnorm(direct);
                if (nd == 0.0) continue;
                rep.worst_U = std::max(rep.worst_U, opnorm(usig.value[i] * mid - direct) / nd);
                ++rep.triples;
            }
        }
    for (const auto& vs : fam.V)
        for (const auto& vsig : fam.V) {
            if (vsig.s > vs.s) continue;
            const Mat& mid = vs.at(vsig.s);
            for (std::size_t i = 0; i < vsig.t.size(); ++i) {
                if (vsig.t[i] < -t_max - 1e-12) continue;
                const Mat& direct = vs.at(vsig.t[i]);
                const double nd = opnorm(direct);
                if (nd == 0.0) continue;
                rep.worst_V = std::max(rep.worst_V, opnorm(vsig.value[i] * mid - direct) / nd);
                ++rep.triples;
            }
        }
    return rep;
}

Mat RobustProjections::Phat(double t) const {
    const Mat X = S0 * P0 * S0inv;
    if (t == 0.0) return X;
    return perturbed->evolve(t, 0.0) * X * perturbed->evolve(0.0, t);
}

ProjectionFamily RobustProjections::family() const {
    const RobustProjections self = *this;
    const auto rank = static_cast<int>(std::lround(P0.trace()));
    return ProjectionFamily::analytic([self](double t) { return self.Phat(t); }, static_cast<int>(P0.rows()), rank);
}

RobustProjections build_projections(const DichotomySpec& spec, const BoundedSolutionFamily& fam,
                                    std::shared_ptr<const EvolutionOperator> perturbed, double N, double c) {
    RobustProjections rp;
    rp.Ptilde0 = fam.U_at(0.0).at(0.0);
    rp.Qtilde0 = fam.V_at(0.0).at(0.0);
    const Eigen::Index n = rp.Ptilde0.rows();
    rp.S0 = rp.Ptilde0 + rp.Qtilde0;
    rp.S0_deviation = opnorm(rp.S0 - eye(n));
    rp.Khat = fam.Khat;
    rp.S0_bound = spec.K * fam.Khat * c * N;
    if (!(rp.S0_deviation < 1.0))
        throw PreconditionError("S(0) is not certifiably invertible: ‖S(0) − Id‖ = " +
                                std::to_string(rp.S0_deviation));
    rp.S0inv = rp.S0.inverse();
    const double den = 1.0 - 2.0 * spec.K * fam.Khat * c * N;
    rp.prefactor = den > 0.0 ? spec.K * fam.Khat / den : std::numeric_limits<double>::infinity();
    rp.P0 = spec.P.P(0.0);
    rp.perturbed = std::move(perturbed);
    return rp;
}

Certificate verify_robust(const RobustProjections& proj, const DichotomySpec& spec, const TimePairs& grid,
                          double tol) {
    if (!std::isfinite(proj.prefactor)) throw PreconditionError("perturbed prefactor is not finite");
    const DichotomySpec s2{proj.family(), spec.rates, proj.prefactor, spec.a, spec.b, spec.eps};
    const RateQuadruple r = spec.rates;
    const double eps = spec.eps;
    return verify_scaled(s2, *proj.perturbed, grid, tol, [r, eps](double s) {
        return std::log(std::exp(eps * r.mu.log_eval(std::abs(s))) + std::exp(eps * r.nu.log_eval(std::abs(s))));
    });
}

CoefficientField perturbed_field(const CoefficientField& A, const PerturbationSpec& pert, const Param& lambda) {
    return add(A, [pert, lambda](double t) { return pert(t, lambda); },
               A.name + "+" + (pert.name.empty() ? "B" : pert.name));
}

RobustResult robust_pipeline(const DichotomySpec& spec, const EvolutionOperator& op, const PerturbationSpec& pert,
                             const Param& lambda, const RobustRun& run, const RobustOptions& opts) {
    RobustResult res;
    const std::vector<double> ngrid = run.N_grid.empty() ? linspace(-10.0, 10.0, 81) : run.N_grid;
    res.N = compute_N(spec.rates, pert.omega, spec.eps, ngrid, opts.quad);
    res.small = check_smallness(pert.c, spec.K, res.N.N);
    res.decay_ratio = decay_ratio(pert, spec.rates, spec.eps, ngrid, {lambda});
    if (res.decay_ratio > 1.0 + 1e-9)
        throw PreconditionError("perturbation exceeds c·min(μ, ν)^{−ω−ε}: ratio " + std::to_string(res.decay_ratio));
    std::vector<double> starts = run.starts;
    if (std::none_of(starts.begin(), starts.end(), [](double s) { return s == 0.0; })) starts.push_back(0.0);
    std::vector<double> neg;
    for (double s : starts) neg.push_back(-s);
    std::vector<double> all = starts;
    all.insert(all.end(), neg.begin(), neg.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    res.family = solve_bounded(spec, op, pert, lambda, res.N.N, all, opts);
    res.semigroup = semigroup_check(res.family, run.semigroup_t_max);
    auto hat = std::make_shared<const EvolutionOperator>(perturbed_field(op.field(), pert, lambda), op.config());
    res.proj = build_projections(spec, res.family, hat, res.N.N, pert.c);
    res.proj_grid = run.proj_grid.empty() ? arange(-5.0, 5.0, 0.5) : run.proj_grid;
    res.Phat.resize(res.proj_grid.size());
    parallel_for(res.proj_grid.size(), [&](std::size_t i) { res.Phat[i] = res.proj.Phat(res.proj_grid[i]); });
    for (const Mat& p : res.Phat) res.max_idempotency = std::max(res.max_idempotency, opnorm(p * p - p));
    TimePairs vg = run.verify_grid;
    if (vg.empty()) {
        const auto g = arange(-3.0, 3.0, 0.5);
        vg = product_grid(g, g);
    }
    res.cert = verify_robust(res.proj, spec, vg);
    return res;
}

double subspace_gap(const Mat& P1, const Mat& P2) {
    const Mat A = range_basis(P1);
    const Mat B = range_basis(P2);
    if (A.cols() != B.cols()) return 1.0;
    if (A.cols() == 0) return 0.0;
    return opnorm(B - A * (A.transpose() * B));
}

LambdaSweep lambda_sweep(const DichotomySpec& spec, const EvolutionOperator& op, const PerturbationSpec& pert,
                         double N, const std::vector<double>& lambdas, double t, const RobustOptions& opts) {
    if (lambdas.size() < 2) throw PreconditionError("lambda sweep needs at least two values");
    LambdaSweep sw;
    sw.lambdas = lambdas;
    const std::size_t L = lambdas.size();
    std::vector<Mat> Ph(L);
    std::vector<BoundedSolution> U(L);
    parallel_for(L, [&](std::size_t i) {
        const Param lam = Param::Constant(1, lambdas[i]);
        const BoundedSolutionFamily fam = solve_bounded(spec, op, pert, lam, N, {0.0}, opts);
        auto hat = std::make_shared<const EvolutionOperator>(perturbed_field(op.field(), pert, lam), op.config());
        Ph[i] = build_projections(spec, fam, hat, N, pert.c).Phat(t);
        U[i] = fam.U.front();
    });
    const Smallness sm = check_smallness(pert.c, spec.K, N);
    sw.U_bound = sm.Khat * sm.KcN / (1.0 - sm.KcN);
    const auto& r = spec.rates;
    std::vector<double> w;
    for (double x : U[0].t)
        w.push_back(std::exp(-spec.a * (r.h.log_eval(x) - r.h.log_eval(0.0)) - spec.eps * r.mu.log_eval(0.0)));
    const Eigen::Index n = Ph[0].rows();
    for (std::size_t i = 0; i < L; ++i) {
        sw.stable_gap.push_back(subspace_gap(Ph[i], Ph[0]));
        sw.unstable_gap.push_back(subspace_gap(eye(n) - Ph[i], eye(n) - Ph[0]));
        sw.U_distance.push_back(weighted_diff(U[i].value, U[0].value, w));
        const double dl = std::abs(lambdas[i] - lambdas[0]);
        if (dl == 0.0) continue;
        sw.lipschitz_stable = std::max(sw.lipschitz_stable, sw.stable_gap.back() / dl);
        sw.lipschitz_unstable = std::max(sw.lipschitz_unstable, sw.unstable_gap.back() / dl);
        sw.lipschitz_U = std::max(sw.lipschitz_U, sw.U_distance.back() / dl);
    }
    return sw;
}

FiniteDimReport finite_dim_conditions(const DichotomySpec& spec, const EvolutionOperator& op,
                                      const PerturbationSpec& pert, double dbar, double lhat, double dhat,
                                      const std::vector<double>& grid) {
    spec.validate();
    if (!pert.delta_hat) throw PreconditionError("finite-dimensional conditions need delta_hat");
    if (!(dbar > 0.0 && dbar < std::min(-spec.a, spec.b))) throw PreconditionError("dbar must lie in (0, min(-a, b))");
    if (!(lhat > 0.0 && dhat > 0.0)) throw PreconditionError("lhat and dhat must be positive");
    const double dh = *pert.delta_hat;
    const auto& r = spec.rates;
    FiniteDimReport rep;
    rep.matrix_margin = std::numeric_limits<double>::infinity();
    const Param none;
    const int n = op.dim();
    for (double tau : grid) {
        for (double off : linspace(-dhat, dhat, 9)) {
            const double t = tau + off;
            const double lb = std::log(lhat) + 2.0 * spec.eps * std::min(r.mu.log_eval(t), r.nu.log_eval(t));
            rep.local_growth_ratio = std::max(rep.local_growth_ratio, opnorm(op.evolve(t, tau)) / std::exp(lb));
        }
        const double at = std::abs(tau);
        const double db = dh * std::pow(r.mu.eval(at) + r.nu.eval(at), -2.0 * spec.eps);
        const double nb = opnorm(pert(tau, none));
        if (nb > 0.0) rep.delta_ratio = std::max(rep.delta_ratio, db > 0.0 ? nb / db : std::numeric_limits<double>::infinity());
        const Mat P = spec.P.P(tau);
        const Mat Q = spec.P.Q(tau);
        const Mat m = P.transpose() * P * r.h.dlog(tau) + Q.transpose() * Q * r.k.dlog(tau) -
                      (dh * spec.K * spec.K / dbar + 1.0) * eye(n);
        rep.matrix_margin = std::min(rep.matrix_margin, min_sym_eig(0.5 * (m + m.transpose())));
    }
    rep.boundary = std::abs(rep.matrix_margin) <= 1e-12;
    rep.local_ok = rep.local_growth_ratio <= 1.0 + 1e-9;
    rep.delta_ok = rep.delta_ratio <= 1.0 + 1e-9;
    rep.matrix_ok = rep.matrix_margin >= -1e-12;
    rep.pass = rep.local_ok && rep.delta_ok && rep.matrix_ok;
    return rep;
}

} // namespace gdich
