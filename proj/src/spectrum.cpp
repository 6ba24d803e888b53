#include "gdich/spectrum.hpp"
#include "gdich/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gdich {

ExponentTrace lyapunov_exponent(const EvolutionOperator& op, const GrowthRate& rate, const Vec& x0,
                                const ExponentOptions& opts) {
    if (x0.size() != op.dim()) throw PreconditionError("lyapunov_exponent: vector dimension mismatch");
    if (!(opts.window > 0.0 && opts.window <= 1.0)) throw PreconditionError("lyapunov_exponent: window must lie in (0,1]");
    if (opts.samples < 2) throw PreconditionError("lyapunov_exponent: need at least two samples");
    ExponentTrace tr;
    if (x0.norm() == 0.0) {
        tr.zero = true;
        tr.value = -std::numeric_limits<double>::infinity();
        return tr;
    }
    const double T = opts.horizon;
    if (!(T > 0.0) || !(rate.log_eval(T) > opts.min_log_rate)) {
        std::ostringstream os;
        os << "lyapunov_exponent: horizon " << T << " too short, log " << rate.name()
           << "(T) must exceed " << opts.min_log_rate;
        throw PreconditionError(os.str());
    }
    const std::size_t N = opts.samples;
    tr.t.resize(N + 1);
    tr.log_norm.resize(N + 1);
    tr.ratio.resize(N + 1);
    Mat x = x0 / x0.norm();
    double logn = std::log(x0.norm());
    tr.t[0] = 0.0;
    tr.log_norm[0] = logn;
    tr.ratio[0] = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 1; i <= N; ++i) {
        const double a = T * static_cast<double>(i - 1) / static_cast<double>(N);
        const double b = T * static_cast<double>(i) / static_cast<double>(N);
        x = op.integrate(a, b, x);
        const double nrm = x.norm();
        if (!(nrm > 0.0) || !std::isfinite(nrm))
            throw NumericalError("lyapunov_exponent: trajectory collapsed or overflowed", b);
        logn += std::log(nrm);
        x /= nrm;
        tr.t[i] = b;
        tr.log_norm[i] = logn;
        const double lu = rate.log_eval(b);
        // scale-free: the initial norm only shifts the limsup by O(1/log u)
        tr.ratio[i] = lu > 0.0 ? (logn - tr.log_norm[0]) / lu : std::numeric_limits<double>::quiet_NaN();
    }
    const double start = (1.0 - opts.window) * T;
    double hi = -std::numeric_limits<double>::infinity(), lo = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i <= N; ++i) {
        if (tr.t[i] < start || std::isnan(tr.ratio[i])) continue;
        hi = std::max(hi, tr.ratio[i]);
        lo = std::min(lo, tr.ratio[i]);
    }
    tr.value = hi;
    tr.spread = hi - lo;
    tr.reliable = tr.spread <= opts.spread_limit;
    return tr;
}

std::vector<ExponentValue> cluster_values(std::vector<double> values, double gap) {
    std::sort(values.begin(), values.end());
    std::vector<ExponentValue> out;
    std::size_t i = 0;
    while (i < values.size()) {
        std::size_t j = i + 1;
        while (j < values.size() && values[j] - values[j - 1] <= gap) ++j;
        double sum = 0.0;
        for (std::size_t k = i; k < j; ++k) sum += values[k];
        out.push_back({sum / static_cast<double>(j - i), static_cast<int>(j - i)});
        i = j;
    }
    return out;
}

namespace {

std::optional<Mat> real_eigenbasis(const Mat& a) {
    Eigen::EigenSolver<Mat> es(a);
    if (es.info() != Eigen::Success) return std::nullopt;
    const double scale = std::max(1.0, a.norm());
    if (es.eigenvalues().imag().cwiseAbs().maxCoeff() > 1e-12 * scale) return std::nullopt;
    Mat V = es.eigenvectors().real();
    for (Eigen::Index j = 0; j < V.cols(); ++j) V.col(j).normalize();
    Eigen::JacobiSVD<Mat> svd(V);
    const auto& sv = svd.singularValues();
    if (!(sv(sv.size() - 1) > 1e-8 * sv(0))) return std::nullopt;
    return V;
}

std::vector<Vec> probe_vectors(const CoefficientField& w) {
    std::vector<Vec> out;
    for (int i = 0; i < w.dim; ++i) out.push_back(Vec::Unit(w.dim, i));
    if (auto V = real_eigenbasis(w(std::max(0.0, w.support_lo)))) {
        for (Eigen::Index j = 0; j < V->cols(); ++j) {
            const Vec v = V->col(j);
            if (v.cwiseAbs().maxCoeff() < 1.0 - 1e-12) out.push_back(v);
        }
    }
    return out;
}

struct Job {
    const EvolutionOperator* op;
    const GrowthRate* rate;
    Vec x0;
    std::string block;
    bool adjoint;
};

std::vector<ExponentTrace> run_jobs(const std::vector<Job>& jobs, const ExponentOptions& opts) {
    std::vector<ExponentTrace> out(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t i) {
        out[i] = lyapunov_exponent(*jobs[i].op, *jobs[i].rate, jobs[i].x0, opts);
    });
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!std::isfinite(out[i].value))
            throw NumericalError("spectrum: infinite exponent estimate on block " + jobs[i].block);
    return out;
}

void check_block(const BlockSystem& block) {
    if (block.split < 1 || block.W2.dim < 1)
        throw PreconditionError("spectrum: block system needs 1 <= l < n");
}

} // namespace

SpectrumReport spectrum(const BlockSystem& block, const SpectrumRates& rates,
                        const ExponentOptions& opts, const IntegratorConfig& cfg) {
    check_block(block);
    const EvolutionOperator e(block.W1, cfg), f(block.W2, cfg);
    const EvolutionOperator ea(adjoint(block.W1), cfg), fa(adjoint(block.W2), cfg);

    std::vector<Job> jobs;
    auto add = [&](const EvolutionOperator& op, const GrowthRate& r, const std::string& name, bool adj) {
        for (const Vec& v : probe_vectors(op.field())) jobs.push_back({&op, &r, v, name, adj});
    };
    add(e, rates.h, "E", false);
    add(f, rates.k, "F", false);
    add(ea, rates.hbar, "E", true);
    add(fa, rates.kbar, "F", true);
    const auto traces = run_jobs(jobs, opts);

    SpectrumReport rep;
    rep.horizon = opts.horizon;
    std::vector<double> vE, vF, aE, aF;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const auto& j = jobs[i];
        auto& bucket = j.block == "E" ? (j.adjoint ? aE : vE) : (j.adjoint ? aF : vF);
        bucket.push_back(traces[i].value);
        if (!traces[i].reliable) {
            rep.reliable = false;
            std::ostringstream os;
            os << (j.adjoint ? "adjoint " : "") << "block " << j.block << ": tail spread "
               << traces[i].spread << " exceeds " << opts.spread_limit;
            rep.warnings.push_back(os.str());
        }
        rep.vectors.push_back({j.block, j.adjoint, j.x0, traces[i]});
    }
    rep.values_E = cluster_values(vE);
    rep.values_F = cluster_values(vF);
    rep.adjoint_E = cluster_values(aE);
    rep.adjoint_F = cluster_values(aF);
    auto count_check = [&](const std::vector<ExponentValue>& v, int dim, const char* name) {
        if (static_cast<int>(v.size()) > dim) {
            rep.reliable = false;
            rep.warnings.push_back(std::string(name) + ": more distinct values than the block dimension");
        }
    };
    count_check(rep.values_E, block.W1.dim, "values_E");
    count_check(rep.values_F, block.W2.dim, "values_F");
    count_check(rep.adjoint_E, block.W1.dim, "adjoint_E");
    count_check(rep.adjoint_F, block.W2.dim, "adjoint_F");
    return rep;
}

void DualBasisPair::validate(double tol) const {
    if (basis.rows() != basis.cols() || dual.rows() != basis.rows() || dual.cols() != basis.cols())
        throw PreconditionError("dual basis: square matrices of equal size required");
    const Mat g = basis.transpose() * dual;
    if ((g - eye(basis.cols())).cwiseAbs().maxCoeff() > tol)
        throw PreconditionError("dual basis: candidate is not dual (basis^T dual != I)");
}

DualBasisPair DualBasisPair::standard(int n) { return {eye(n), eye(n)}; }

DualBasisPair DualBasisPair::from_basis(const Mat& V) {
    return {V, V.transpose().inverse()};
}

std::vector<DualBasisPair> default_candidates(const CoefficientField& w) {
    std::vector<DualBasisPair> out{DualBasisPair::standard(w.dim)};
    if (auto V = real_eigenbasis(w(std::max(0.0, w.support_lo)))) {
        if ((V->cwiseAbs() - eye(w.dim)).cwiseAbs().maxCoeff() > 1e-12) out.push_back(DualBasisPair::from_basis(*V));
    }
    return out;
}

namespace {

RegularitySide regularity_side(const CoefficientField& w, const GrowthRate& r, const GrowthRate& rbar,
                               std::vector<DualBasisPair> cands, const ExponentOptions& opts,
                               const IntegratorConfig& cfg) {
    if (cands.empty()) cands = default_candidates(w);
    for (const auto& c : cands) {
        if (c.basis.rows() != w.dim) throw PreconditionError("regularity: candidate dimension mismatch");
        c.validate();
    }
    const EvolutionOperator op(w, cfg), adj(adjoint(w), cfg);
    std::vector<Job> jobs;
    for (const auto& c : cands)
        for (Eigen::Index j = 0; j < c.basis.cols(); ++j) {
            jobs.push_back({&op, &r, c.basis.col(j), "", false});
            jobs.push_back({&adj, &rbar, c.dual.col(j), "", true});
        }
    const auto traces = run_jobs(jobs, opts);

    RegularitySide side;
    side.gamma = std::numeric_limits<double>::infinity();
    std::size_t pos = 0;
    for (const auto& c : cands) {
        double g = -std::numeric_limits<double>::infinity();
        std::vector<double> m, n;
        std::vector<ExponentTrace> fw, bw;
        for (Eigen::Index j = 0; j < c.basis.cols(); ++j) {
            m.push_back(traces[pos].value);
            n.push_back(traces[pos + 1].value);
            fw.push_back(traces[pos]);
            bw.push_back(traces[pos + 1]);
            g = std::max(g, m.back() + n.back());
            pos += 2;
        }
        side.candidate_gammas.push_back(g);
        if (g < side.gamma) {
            side.gamma = g;
            side.best = c;
            side.m = std::move(m);
            side.n = std::move(n);
            side.forward = std::move(fw);
            side.adjoint = std::move(bw);
        }
    }
    return side;
}

double log_kbar(const RegularitySide& side, const GrowthRate& r, const GrowthRate& rbar, double et) {
    double worst = -std::numeric_limits<double>::infinity();
    auto scan = [&](const ExponentTrace& tr, const GrowthRate& rate, double expo) {
        for (std::size_t i = 0; i < tr.t.size(); ++i)
            worst = std::max(worst, tr.log_norm[i] - (expo + et) * rate.log_eval(tr.t[i]));
    };
    for (std::size_t j = 0; j < side.m.size(); ++j) {
        scan(side.forward[j], r, side.m[j]);
        scan(side.adjoint[j], rbar, side.n[j]);
    }
    return worst;
}

} // namespace

RegularityReport regularity(const BlockSystem& block, const SpectrumRates& rates,
                            std::vector<DualBasisPair> candidates_E,
                            std::vector<DualBasisPair> candidates_F, const ExponentOptions& opts,
                            const IntegratorConfig& cfg) {
    check_block(block);
    RegularityReport rep;
    rep.E = regularity_side(block.W1, rates.h, rates.hbar, std::move(candidates_E), opts, cfg);
    rep.F = regularity_side(block.W2, rates.k, rates.kbar, std::move(candidates_F), opts, cfg);
    return rep;
}

SpectrumClaim dichotomy_from_spectrum(const SpectrumReport& report, const RegularityReport& reg,
                                      const SpectrumRates& rates, double eps_tilde) {
    if (report.values_E.empty() || report.values_F.empty())
        throw PreconditionError("dichotomy_from_spectrum: empty spectrum");
    if (!(eps_tilde > 0.0)) throw PreconditionError("dichotomy_from_spectrum: eps_tilde must be positive");
    const double lambda_r = report.values_E.back().value;
    const double chi_1 = report.values_F.front().value;
    if (!(lambda_r < 0.0 && chi_1 > 0.0)) {
        std::ostringstream os;
        os << "dichotomy_from_spectrum: sign condition lambda_r < 0 < chi_1 violated (lambda_r=" << lambda_r
           << ", chi_1=" << chi_1 << ")";
        throw PreconditionError(os.str());
    }
    if (!(lambda_r + eps_tilde < 0.0))
        throw PreconditionError("dichotomy_from_spectrum: eps_tilde too large, a = lambda_r + eps_tilde must be negative");

    SpectrumClaim claim{DichotomySpec{ProjectionFamily::constant(eye(1)), RateQuadruple::uniform(rates.h), 1.0, -1.0, 0.0, 0.0},
                        1.0, 1.0, {}};
    const auto l = static_cast<double>(reg.E.m.size());
    const auto nl = static_cast<double>(reg.F.m.size());
    const double lk1 = log_kbar(reg.E, rates.h, rates.hbar, eps_tilde);
    const double lk2 = log_kbar(reg.F, rates.k, rates.kbar, eps_tilde);
    claim.Kbar1 = std::exp(std::max(0.0, lk1));
    claim.Kbar2 = std::exp(std::max(0.0, lk2));
    const double K = std::max(claim.Kbar1 * claim.Kbar1 * l * l, claim.Kbar2 * claim.Kbar2 * nl * nl);

    double eps = std::max(reg.gamma(), reg.gamma_bar()) + eps_tilde;
    if (eps < 0.0) {
        claim.warnings.push_back("max(gamma, gamma_bar) + eps_tilde < 0; eps clamped to 0");
        eps = 0.0;
    }
    const int n = static_cast<int>(l + nl), li = static_cast<int>(l);
    Mat P = Mat::Zero(n, n);
    P.topLeftCorner(li, li).setIdentity();
    claim.spec = DichotomySpec{ProjectionFamily::constant(P),
                               RateQuadruple{rates.h, rates.k, product(rates.h, rates.hbar),
                                             product(rates.k, rates.kbar)},
                               K, lambda_r + eps_tilde, chi_1 + eps_tilde, eps};
    if (!report.reliable) claim.warnings.push_back("spectrum report is marked unreliable");
    return claim;
}

} // namespace gdich
