#include "gdich/dichotomy.hpp"
#include "gdich/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gdich {

namespace {

void check_pair_domain(const RateQuadruple& r, double t, double s) {
    for (const auto* rate : {&r.h, &r.k})
        if (!rate->in_domain(t) || !rate->in_domain(s)) {
            std::ostringstream os;
            os << "rate domain mismatch: pair (" << t << "," << s << ") outside the domain of '"
               << rate->name() << "'";
            throw DomainError(os.str());
        }
}

double safe_log(double x) {
    return x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity();
}

} // namespace

Certificate verify_scaled(const DichotomySpec& spec, const EvolutionOperator& op,
                          const TimePairs& grid, double tol,
                          const std::function<double(double)>& log_extra) {
    spec.validate();
    const auto& r = spec.rates;
    for (const auto& [t, s] : grid) check_pair_domain(r, t, s);

    Certificate cert;
    cert.tol = tol;
    cert.samples.resize(grid.size());
    const double logK = std::log(spec.K);
    parallel_for(grid.size(), [&](std::size_t i) {
        const auto [t, s] = grid[i];
        const Mat T = op.evolve(t, s);
        const Mat Ps = spec.P.P(s);
        const Mat Pt = spec.P.P(t);
        const double extra = log_extra ? log_extra(s) : 0.0;
        BoundSample bs{t, s, std::numeric_limits<double>::quiet_NaN(),
                       std::numeric_limits<double>::quiet_NaN(), 0.0};
        if (t >= s) {
            const double lhs = safe_log(opnorm(T * Ps));
            const double rhs = logK + spec.a * (r.h.log_eval(t) - r.h.log_eval(s)) +
                               spec.eps * r.mu.log_eval(std::abs(s)) + extra;
            bs.stable_ratio = std::exp(lhs - rhs);
        }
        if (s >= t) {
            const Mat Qs = eye(op.dim()) - Ps;
            const double lhs = safe_log(opnorm(T * Qs));
            const double rhs = logK - spec.b * (r.k.log_eval(s) - r.k.log_eval(t)) +
                               spec.eps * r.nu.log_eval(std::abs(s)) + extra;
            bs.unstable_ratio = std::exp(lhs - rhs);
        }
        bs.commute = opnorm(Pt * T - T * Ps);
        cert.samples[i] = bs;
    });

    for (const auto& bs : cert.samples) {
        bool bad = false;
        if (!std::isnan(bs.stable_ratio)) {
            if (bs.stable_ratio > cert.worst_stable_ratio) {
                cert.worst_stable_ratio = bs.stable_ratio;
                cert.worst_stable_at = {bs.t, bs.s};
            }
            bad = bad || bs.stable_ratio > 1.0 + tol;
        }
        if (!std::isnan(bs.unstable_ratio)) {
            if (bs.unstable_ratio > cert.worst_unstable_ratio) {
                cert.worst_unstable_ratio = bs.unstable_ratio;
                cert.worst_unstable_at = {bs.t, bs.s};
            }
            bad = bad || bs.unstable_ratio > 1.0 + tol;
        }
        cert.worst_commute_residual = std::max(cert.worst_commute_residual, bs.commute);
        bad = bad || bs.commute > tol;
        if (bad) ++cert.violations;
    }
    cert.pass = cert.violations == 0;
    return cert;
}

Certificate verify(const DichotomySpec& spec, const EvolutionOperator& op, const TimePairs& grid,
                   double tol) {
    return verify_scaled(spec, op, grid, tol, {});
}

namespace {

struct SideData {
    std::vector<double> y;  // log norm
    std::vector<double> x;  // exponent regressor (a or −b multiplies it)
    std::vector<double> z;  // log of nonuniform factor
    std::size_t pairs = 0;  // pairs in the regime, including zero norms
};

struct SideFit {
    double logK = 0.0;
    double slope = 0.0;
    double eps = 0.0;
    double rms = 0.0;
};

SideFit fit_side(const SideData& d, std::optional<double> eps_fixed, const char* side,
                 std::vector<std::string>& warnings) {
    const auto m = static_cast<Eigen::Index>(d.y.size());
    SideFit out;
    auto solve = [&](bool with_eps, double eps) {
        const Eigen::Index cols = with_eps ? 3 : 2;
        Mat X(m, cols);
        Vec Y(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto k = static_cast<std::size_t>(i);
            X(i, 0) = 1.0;
            X(i, 1) = d.x[k];
            if (with_eps) X(i, 2) = d.z[k];
            Y(i) = d.y[k] - (with_eps ? 0.0 : eps * d.z[k]);
        }
        Eigen::ColPivHouseholderQR<Mat> qr(X);
        qr.setThreshold(1e-10);
        if (qr.rank() < cols) {
            throw PreconditionError(std::string("estimate_constants: rank-deficient regression on the ") +
                                    side + " side (degenerate grid)");
        }
        Vec beta = qr.solve(Y);
        SideFit f;
        f.logK = beta(0);
        f.slope = beta(1);
        f.eps = with_eps ? beta(2) : eps;
        f.rms = std::sqrt((X * beta - Y).squaredNorm() / static_cast<double>(m));
        return f;
    };
    if (eps_fixed) return solve(false, *eps_fixed);
    out = solve(true, 0.0);
    if (out.eps < 0.0) {
        warnings.push_back(std::string(side) + " side: fitted eps < 0, refit with eps = 0");
        out = solve(false, 0.0);
    }
    return out;
}

} // namespace

EstimateResult estimate_constants(const EvolutionOperator& op, const ProjectionFamily& P,
                                  const RateQuadruple& rates, const TimePairs& grid,
                                  std::optional<double> eps_fixed) {
    for (const auto& [t, s] : grid) check_pair_domain(rates, t, s);
    std::size_t n_st = 0, n_un = 0;
    for (const auto& [t, s] : grid) {
        if (t >= s) ++n_st;
        if (s >= t) ++n_un;
    }
    if (n_st < 20 || n_un < 20)
        throw PreconditionError("estimate_constants: need at least 20 pairs with t >= s and with s >= t");
    if (eps_fixed && *eps_fixed < 0.0) throw PreconditionError("estimate_constants: eps must be >= 0");

    std::vector<double> stable_norm(grid.size()), unstable_norm(grid.size());
    parallel_for(grid.size(), [&](std::size_t i) {
        const auto [t, s] = grid[i];
        const Mat T = op.evolve(t, s);
        const Mat Ps = P.P(s);
        stable_norm[i] = t >= s ? opnorm(T * Ps) : 0.0;
        unstable_norm[i] = s >= t ? opnorm(T * (eye(op.dim()) - Ps)) : 0.0;
    });

    constexpr double zero_norm = 1e-300;
    SideData st, un;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto [t, s] = grid[i];
        if (t >= s && stable_norm[i] > zero_norm) {
            st.y.push_back(std::log(stable_norm[i]));
            st.x.push_back(rates.h.log_eval(t) - rates.h.log_eval(s));
            st.z.push_back(rates.mu.log_eval(std::abs(s)));
        }
        if (s >= t && unstable_norm[i] > zero_norm) {
            un.y.push_back(std::log(unstable_norm[i]));
            un.x.push_back(-(rates.k.log_eval(s) - rates.k.log_eval(t)));
            un.z.push_back(rates.nu.log_eval(std::abs(s)));
        }
    }

    EstimateResult res{DichotomySpec{P, rates, 1.0, -1.0, 0.0, 0.0}, {}, 0, 0, 0, 0, 0, 0};
    res.pairs_stable = st.y.size();
    res.pairs_unstable = un.y.size();

    SideFit fs, fu;
    bool have_st = !st.y.empty(), have_un = !un.y.empty();
    if (have_st) {
        fs = fit_side(st, eps_fixed, "stable", res.warnings);
        if (!(fs.slope < 0.0))
            throw NumericalError("estimate_constants: fitted stable exponent is not negative");
    } else {
        res.warnings.push_back("stable side has no data (P = 0); a set to -1");
        fs.slope = -1.0;
    }
    if (have_un) {
        fu = fit_side(un, eps_fixed, "unstable", res.warnings);
        if (fu.slope < 0.0) {
            res.warnings.push_back("unstable side: fitted b < 0, clamped to 0");
            fu.slope = 0.0;
        }
    } else {
        res.warnings.push_back("unstable side has no data (Q = 0); b set to 0");
        fu.slope = 0.0;
    }
    res.eps_stable = fs.eps;
    res.eps_unstable = fu.eps;
    res.rms_stable = fs.rms;
    res.rms_unstable = fu.rms;

    const double eps = eps_fixed ? *eps_fixed : std::max({0.0, have_st ? fs.eps : 0.0, have_un ? fu.eps : 0.0});
    auto inflate = [eps](const SideData& d, double logK, double slope) {
        double worst = 0.0;
        for (std::size_t i = 0; i < d.y.size(); ++i)
            worst = std::max(worst, d.y[i] - (logK + slope * d.x[i] + eps * d.z[i]));
        return logK + worst;
    };
    double logK = -std::numeric_limits<double>::infinity();
    if (have_st) logK = std::max(logK, inflate(st, fs.logK, fs.slope));
    if (have_un) logK = std::max(logK, inflate(un, fu.logK, fu.slope));
    if (!std::isfinite(logK)) logK = 0.0;

    res.spec.K = std::exp(logK);
    res.spec.a = fs.slope;
    res.spec.b = fu.slope;
    res.spec.eps = eps;
    return res;
}

ProjectionReport check_projection(const ProjectionFamily& P, const EvolutionOperator& op,
                                  const TimePairs& grid, double tol) {
    ProjectionReport rep;
    rep.tol = tol;
    std::vector<double> comm(grid.size()), idem(grid.size());
    parallel_for(grid.size(), [&](std::size_t i) {
        const auto [t, s] = grid[i];
        const Mat T = op.evolve(t, s);
        const Mat Pt = P.P(t), Ps = P.P(s);
        comm[i] = opnorm(Pt * T - T * Ps);
        idem[i] = std::max(opnorm(Pt * Pt - Pt), opnorm(Ps * Ps - Ps));
    });
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (comm[i] > rep.max_commute) {
            rep.max_commute = comm[i];
            rep.worst_at = grid[i];
        }
        rep.max_idempotency = std::max(rep.max_idempotency, idem[i]);
    }
    rep.pass = rep.max_commute <= tol && rep.max_idempotency <= 1e-10;
    return rep;
}

} // namespace gdich
