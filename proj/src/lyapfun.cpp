#include "gdich/lyapfun.hpp"

#include "gdich/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace gdich {

namespace {

Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

bool uniform(const std::vector<double>& t) {
    if (t.size() < 2) return false;
    const double h = t[1] - t[0];
    if (!(h > 0.0)) return false;
    for (std::size_t i = 1; i < t.size(); ++i)
        if (std::abs((t[i] - t[i - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h))) return false;
    return true;
}

/// Smallest offset d with sign·(log u(t + sign·d) − log u(t)) ≥ target.
double envelope_offset(const GrowthRate& u, double t, double target, int sign) {
    const double base = u.log_eval(t);
    auto gain = [&](double d) { return sign * (u.log_eval(t + sign * d) - base); };
    double hi = 1.0;
    int iter = 0;
    while (gain(hi) < target) {
        hi *= 2.0;
        if (++iter > 60) throw NumericalError("growth rate does not reach the truncation level", t);
    }
    double lo = 0.0;
    for (int i = 0; i < 40 && hi - lo > 1e-3; ++i) {
        const double m = 0.5 * (lo + hi);
        (gain(m) >= target ? hi : lo) = m;
    }
    return hi;
}

std::vector<double> panel_edges(double from, double to, const std::vector<double>& breaks) {
    const int sign = to > from ? 1 : -1;
    std::vector<double> e;
    const double len = std::abs(to - from);
    const int whole = static_cast<int>(std::floor(len));
    for (int i = 0; i <= whole; ++i) e.push_back(from + sign * i);
    if (len - whole > 1e-12) e.push_back(to);
    for (double b : breaks)
        if ((b - from) * sign > 1e-12 && (to - b) * sign > 1e-12) e.push_back(b);
    if (sign > 0)
        std::sort(e.begin(), e.end());
    else
        std::sort(e.begin(), e.end(), std::greater<>());
    e.erase(std::unique(e.begin(), e.end(), [](double x, double y) { return std::abs(x - y) < 1e-12; }),
            e.end());
    return e;
}

/// ∫ between t and `to` of Z(v)ᵀZ(v)·exp(2c(log u(v) − log u(t)))·(u'/u)(v), Z(v) = proj(v)T(v,t).
Mat weighted_gram(const EvolutionOperator& op, const std::function<Mat(double)>& proj,
                  const GrowthRate& u, double t, double to, double c, const QuadConfig& quad) {
    const int n = op.dim();
    const double base = u.log_eval(t);
    const std::vector<double> edges = panel_edges(t, to, op.field().breakpoints);
    Mat Y = proj(t);
    double log_scale = 0.0;
    Mat acc = Mat::Zero(n, n);
    for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
        const double c0 = edges[p], c1 = edges[p + 1];
        auto f = [&](double v) -> Mat {
            const Mat Z = proj(v) * op.integrate(c0, v, Y);
            const double lw = 2.0 * (log_scale + c * (u.log_eval(v) - base));
            return (Z.transpose() * Z) * (std::exp(lw) * u.dlog(v));
        };
        const Mat part = integrate<Mat>(f, std::min(c0, c1), std::max(c0, c1), quad);
        acc += part;
        Y = proj(c1) * op.integrate(c0, c1, Y);
        const double nrm = Y.norm();
        if (nrm > 0.0 && std::isfinite(nrm)) {
            Y /= nrm;
            log_scale += std::log(nrm);
        }
    }
    return acc;
}

} // namespace

QuadraticLyapunov::QuadraticLyapunov(std::vector<double> times, std::vector<Mat> S, double dbar)
    : t_(std::move(times)), S_(std::move(S)), dbar_(dbar) {
    if (t_.size() != S_.size() || t_.size() < 2) throw PreconditionError("lyapunov grid needs at least two matching nodes");
    if (!uniform(t_)) throw PreconditionError("lyapunov grid must be uniform and increasing");
    for (const Mat& s : S_)
        if (s.rows() != S_.front().rows() || s.cols() != s.rows()) throw PreconditionError("S must be square of one size");
    if (max_asymmetry() > 1e-10) throw PreconditionError("S is not symmetric");
}

std::size_t QuadraticLyapunov::index_of(double t) const {
    const double x = (t - t_.front()) / step();
    const long i = std::lround(x);
    if (i < 0 || i >= static_cast<long>(t_.size()) || std::abs(x - static_cast<double>(i)) > 1e-7)
        throw PreconditionError("time is not a lyapunov grid node");
    return static_cast<std::size_t>(i);
}

Mat QuadraticLyapunov::S(double t) const {
    if (t < t_.front() - 1e-12 || t > t_.back() + 1e-12) throw DomainError("time outside the lyapunov grid");
    const double x = std::clamp((t - t_.front()) / step(), 0.0, static_cast<double>(t_.size() - 1));
    const std::size_t i = std::min(static_cast<std::size_t>(x), t_.size() - 2);
    const double w = x - static_cast<double>(i);
    if (w < 1e-12) return S_[i];
    return (1.0 - w) * S_[i] + w * S_[i + 1];
}

std::pair<Mat, double> QuadraticLyapunov::derivative(std::size_t i) const {
    if (i < 2 || i + 2 >= S_.size()) throw PreconditionError("derivative needs two nodes on each side");
    const double h = step();
    const Mat d1 = (S_[i + 1] - S_[i - 1]) / (2.0 * h);
    const Mat d2 = (S_[i + 2] - S_[i - 2]) / (4.0 * h);
    return {d1, opnorm(d1 - d2) / 3.0};
}

double QuadraticLyapunov::max_asymmetry() const {
    double w = 0.0;
    for (const Mat& s : S_) w = std::max(w, (s - s.transpose()).cwiseAbs().maxCoeff());
    return w;
}

double QuadraticLyapunov::min_abs_eigenvalue() const {
    double w = std::numeric_limits<double>::infinity();
    for (const Mat& s : S_) {
        Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(s), Eigen::EigenvaluesOnly);
        w = std::min(w, es.eigenvalues().cwiseAbs().minCoeff());
    }
    return w;
}

LyapunovBuild construct_S(const DichotomySpec& spec, const EvolutionOperator& op, double dbar,
                          const std::vector<double>& grid, const QuadConfig& quad) {
    spec.validate();
    if (!(dbar > 0.0 && dbar < std::min(-spec.a, spec.b)))
        throw PreconditionError("dbar must lie in (0, min(-a, b))");
    if (spec.rates.domain() != Domain::FullLine || op.field().domain != Domain::FullLine)
        throw DomainError("the construction integrates over the whole line");
    if (spec.P.dim() != op.dim()) throw PreconditionError("projection and field dimensions differ");
    if (!uniform(grid)) throw PreconditionError("lyapunov grid must be uniform and increasing");
    if (!(quad.tail_tol > 0.0 && quad.tail_tol < 1.0)) throw PreconditionError("tail_tol must lie in (0,1)");

    const std::size_t N = grid.size();
    const double level = std::log(1.0 / quad.tail_tol) / (2.0 * dbar);
    std::vector<Mat> S(N);
    LyapunovBuild out;
    out.norm_bound_ratio.assign(N, 0.0);
    out.stable_cutoff.assign(N, 0.0);
    out.unstable_cutoff.assign(N, 0.0);
    const auto Pf = [&](double v) { return spec.P.P(v); };
    const auto Qf = [&](double v) { return spec.P.Q(v); };

    parallel_for(N, [&](std::size_t i) {
        const double t = grid[i];
        const double up = t + envelope_offset(spec.rates.h, t, level, +1);
        const double down = t - envelope_offset(spec.rates.k, t, level, -1);
        Mat s = Mat::Zero(op.dim(), op.dim());
        if (spec.P.rank() > 0) s += weighted_gram(op, Pf, spec.rates.h, t, up, -(spec.a + dbar), quad);
        if (spec.P.rank() < op.dim()) s -= weighted_gram(op, Qf, spec.rates.k, t, down, -(spec.b - dbar), quad);
        S[i] = symmetrize(s);
        const double at = std::abs(t);
        const double bound = spec.K * spec.K / (2.0 * dbar) *
                             (std::exp(2.0 * spec.eps * spec.rates.mu.log_eval(at)) +
                              std::exp(2.0 * spec.eps * spec.rates.nu.log_eval(at)));
        out.norm_bound_ratio[i] = opnorm(S[i]) / bound;
        out.stable_cutoff[i] = up;
        out.unstable_cutoff[i] = down;
    });
    out.worst_norm_bound_ratio = *std::max_element(out.norm_bound_ratio.begin(), out.norm_bound_ratio.end());
    out.lyap.emplace(grid, std::move(S), dbar);
    return out;
}

DerivativeReport derivative_condition(const QuadraticLyapunov& lyap, const CoefficientField& A,
                                      RhsForm form, const DichotomySpec* spec, double tol) {
    if (form == RhsForm::Necessity && spec == nullptr)
        throw PreconditionError("the necessity form needs the dichotomy spec");
    if (A.dim != lyap.dim()) throw PreconditionError("field and S dimensions differ");
    const auto& t = lyap.times();
    if (t.size() < 5) throw PreconditionError("derivative check needs at least five nodes");
    DerivativeReport rep;
    rep.tol = tol;
    const int n = lyap.dim();
    for (std::size_t i = 2; i + 2 < t.size(); ++i) {
        const auto [D, err] = lyap.derivative(i);
        const Mat& S = lyap.values()[i];
        const Mat a = A(t[i]);
        Mat rhs = eye(n);
        if (form == RhsForm::Necessity) {
            const Mat P = spec->P.P(t[i]);
            const Mat Q = spec->P.Q(t[i]);
            rhs = P.transpose() * P * spec->rates.h.dlog(t[i]) + Q.transpose() * Q * spec->rates.k.dlog(t[i]);
        }
        const double e = max_sym_eig(symmetrize(D + S * a + a.transpose() * S + rhs));
        if (err > tol && err >= std::abs(e))
            throw PreconditionError("grid too coarse: finite-difference error " + std::to_string(err) +
                                    " exceeds the margin at t = " + std::to_string(t[i]));
        rep.t.push_back(t[i]);
        rep.max_eig.push_back(e);
        rep.fd_error.push_back(err);
        rep.worst = std::max(rep.worst, e);
    }
    rep.margin = -rep.worst;
    rep.pass = rep.worst <= tol;
    return rep;
}

std::string to_string(VectorClass c) {
    switch (c) {
    case VectorClass::Stable: return "stable";
    case VectorClass::Unstable: return "unstable";
    default: return "undetermined";
    }
}

VectorClass classify(const QuadraticLyapunov& lyap, const EvolutionOperator& op, double tau,
                     const Vec& x, double horizon, double margin) {
    if (x.size() != lyap.dim()) throw PreconditionError("vector dimension differs from S");
    if (x.norm() == 0.0) throw PreconditionError("classify needs a nonzero vector");
    int pos = 0, neg = 0, total = 0;
    for (double t : lyap.times()) {
        if (t <= tau + 1e-12 || t > tau + horizon + 1e-12) continue;
        const Vec y = op.evolve(t, tau) * x;
        const double H = y.dot(lyap.values()[lyap.index_of(t)] * y);
        const double m = margin * y.squaredNorm();
        ++total;
        if (H > m) ++pos;
        else if (H < -m) ++neg;
    }
    if (total == 0) return VectorClass::Undetermined;
    if (pos == total) return VectorClass::Stable;
    if (neg == total) return VectorClass::Unstable;
    return VectorClass::Undetermined;
}

DecayReport decay_inequalities(const QuadraticLyapunov& lyap, const DichotomySpec& spec,
                               const EvolutionOperator& op, const LyapunovHypotheses& hyp,
                               const std::vector<double>& taus, const std::vector<Vec>& samples,
                               double horizon, double tol) {
    if (!(hyp.eta1 > 0 && hyp.eta2 > 0 && hyp.dhat > 0 && hyp.k1 >= 0 && hyp.k2 >= 0 && hyp.l1 >= 0 && hyp.l2 >= 0))
        throw PreconditionError("lyapunov hypotheses out of range");
    DecayReport rep;
    rep.tol = tol;
    rep.iv_applies = hyp.eta1 > 2.0 * hyp.k1;
    const auto& t = lyap.times();
    const auto& rates = spec.rates;
    const std::size_t last = t.size() - 3;

    for (std::size_t ti = 0; ti < taus.size(); ++ti) {
        const double tau = taus[ti];
        const std::size_t it = lyap.index_of(tau);
        std::vector<Vec> stable, unstable;
        for (const Vec& x : samples) {
            const VectorClass c = classify(lyap, op, tau, x, horizon);
            if (c == VectorClass::Undetermined) {
                ++rep.undetermined;
                continue;
            }
            const bool st = c == VectorClass::Stable;
            (st ? stable : unstable).push_back(x);
            ++(st ? rep.stable_samples : rep.unstable_samples);
            const GrowthRate& u = st ? rates.h : rates.k;
            const double eta = st ? hyp.eta1 : hyp.eta2;
            const double H0 = lyap.H(tau, x);
            if (st) {
                const double lb = hyp.dhat / (hyp.l1 * hyp.l1) *
                                  std::exp(-2.0 * hyp.k1 * rates.mu.log_eval(tau)) * x.squaredNorm();
                rep.lower_bound_ratio = std::min(rep.lower_bound_ratio, std::abs(H0) / lb);
            }
            for (std::size_t j = std::max<std::size_t>(it, 2); j <= last && t[j] <= tau + horizon + 1e-12; ++j) {
                const Vec y = op.evolve(t[j], tau) * x;
                const Mat& S = lyap.values()[j];
                const Mat a = op.field()(t[j]);
                const auto [D, err] = lyap.derivative(j);
                const double Hdot = y.dot((D + S * a + a.transpose() * S) * y);
                const double H = y.dot(S * y);
                const double slack = (-eta * u.dlog(t[j]) * std::abs(H) - Hdot) / y.squaredNorm();
                double& ds = st ? rep.diff_slack_stable : rep.diff_slack_unstable;
                ds = std::min(ds, slack);
                if (j == it) continue;
                const double g = std::exp(eta * (u.log_eval(t[j]) - u.log_eval(tau)));
                if (st) {
                    const double bound = H0 / g;
                    rep.gronwall_slack_stable = std::min(rep.gronwall_slack_stable, (bound - H) / std::abs(bound));
                } else {
                    rep.gronwall_slack_unstable =
                        std::min(rep.gronwall_slack_unstable, (std::abs(H) - g * std::abs(H0)) / std::abs(H));
                }
            }
        }
        const Mat Es = stable.empty() ? Mat(op.dim(), 0) : range_basis([&] {
            Mat m(op.dim(), static_cast<Eigen::Index>(stable.size()));
            for (std::size_t c = 0; c < stable.size(); ++c) m.col(static_cast<Eigen::Index>(c)) = stable[c];
            return m;
        }());
        const Mat Eu = unstable.empty() ? Mat(op.dim(), 0) : range_basis([&] {
            Mat m(op.dim(), static_cast<Eigen::Index>(unstable.size()));
            for (std::size_t c = 0; c < unstable.size(); ++c) m.col(static_cast<Eigen::Index>(c)) = unstable[c];
            return m;
        }());
        if (ti == 0) {
            rep.split_dim_stable = static_cast<std::size_t>(Es.cols());
            rep.split_dim_unstable = static_cast<std::size_t>(Eu.cols());
        }
        for (double s : t) {
            if (std::abs(s - tau) > hyp.dhat + 1e-12) continue;
            const Mat T = op.evolve(s, tau);
            if (Es.cols() > 0)
                rep.local_ratio_stable = std::max(
                    rep.local_ratio_stable, opnorm(T * Es) / (hyp.l1 * std::exp(hyp.k1 * rates.mu.log_eval(s))));
            if (Eu.cols() > 0)
                rep.local_ratio_unstable = std::max(
                    rep.local_ratio_unstable, opnorm(T * Eu) / (hyp.l2 * std::exp(hyp.k2 * rates.nu.log_eval(s))));
        }
        for (double s : t) {
            if (s < tau || s > tau + horizon + 1e-12) continue;
            const double dh = rates.h.log_eval(s) - rates.h.log_eval(tau);
            const double dmu = rates.mu.log_eval(s) - rates.mu.log_eval(tau);
            if (rep.iv_applies && dh < dmu - tol) rep.iv_pass = false;
            const double dk = rates.k.log_eval(s) - rates.k.log_eval(tau);
            const double dnu = rates.nu.log_eval(s) - rates.nu.log_eval(tau);
            rep.nu_side_min_ratio = std::min(rep.nu_side_min_ratio, std::exp(dk - dnu));
        }
    }
    rep.differential_pass = rep.diff_slack_stable >= -tol && rep.diff_slack_unstable >= -tol;
    rep.gronwall_pass = rep.gronwall_slack_stable >= -tol && rep.gronwall_slack_unstable >= -tol;
    rep.local_pass = rep.local_ratio_stable <= 1.0 + tol && rep.local_ratio_unstable <= 1.0 + tol;
    rep.pass = rep.differential_pass && rep.gronwall_pass && rep.local_pass && rep.iv_pass;
    return rep;
}

double corollary_condition(const DichotomySpec& spec, const std::vector<double>& grid) {
    double w = std::numeric_limits<double>::infinity();
    const int n = spec.P.dim();
    for (double t : grid) {
        const Mat P = spec.P.P(t);
        const Mat Q = spec.P.Q(t);
        const Mat m = P.transpose() * P * spec.rates.h.dlog(t) + Q.transpose() * Q * spec.rates.k.dlog(t) - eye(n);
        w = std::min(w, min_sym_eig(symmetrize(m)));
    }
    return w;
}

} // namespace gdich
