#include "gdich/conjugacy.hpp"

#include "gdich/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>

namespace gdich {

namespace {

bool is_zero_projection(const Mat& p) { return p.cwiseAbs().maxCoeff() <= 1e-14; }

/// Smallest multiple of `step` with sign·(log u(t + sign·T) − log u(t)) ≥ drop at every t.
double one_sided_window(const GrowthRate& u, double sign, double drop,
                        const std::vector<double>& ts, double step) {
    if (drop <= 0.0) return step;
    auto ok = [&](long m) {
        const double T = static_cast<double>(m) * step;
        for (double t : ts)
            if (sign * (u.log_eval(t + sign * T) - u.log_eval(t)) < drop) return false;
        return true;
    };
    long hi = 1;
    while (!ok(hi)) {
        hi *= 2;
        if (static_cast<double>(hi) * step > 1e4)
            throw PreconditionError("conjugacy: tail envelope does not reach the tolerance");
    }
    long lo = hi / 2;
    while (hi - lo > 1) {
        const long mid = (lo + hi) / 2;
        (ok(mid) ? hi : lo) = mid;
    }
    return static_cast<double>(hi) * step;
}

double sup_diff(const std::vector<Vec>& x, const std::vector<Vec>& y) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, (x[i] - y[i]).norm());
    return m;
}

std::vector<double> key_of(const Vec& x) { return {x.data(), x.data() + x.size()}; }

} // namespace

double conjugacy_factor(const DichotomySpec& spec) {
    const Mat P0 = spec.P.P(0.0);
    const Mat Q0 = eye(P0.rows()) - P0;
    double f = 0.0;
    if (!is_zero_projection(P0)) f += 1.0 / std::abs(spec.a);
    if (!is_zero_projection(Q0)) {
        if (spec.b <= 0.0) throw PreconditionError("conjugacy needs b > 0 when Q is nonzero");
        f += 1.0 / spec.b;
    }
    return f;
}

double conjugacy_weight(const DichotomySpec& spec, double t) {
    const auto& r = spec.rates;
    const double at = std::abs(t);
    const double ws = r.h.dlog(t) * std::exp(-spec.eps * r.mu.log_eval(at));
    const double wu = r.k.dlog(t) * std::exp(-spec.eps * r.nu.log_eval(at));
    return std::min(ws, wu);
}

HypothesisReport check_hypotheses(const NonlinearTerm& f, const DichotomySpec& spec,
                                  const HypothesisProbes& probes, const Param& lambda) {
    spec.validate();
    HypothesisReport rep;
    rep.alpha = f.alpha;
    rep.gamma = f.gamma;
    for (double t : probes.ts) {
        const double w = conjugacy_weight(spec, t);
        std::vector<Vec> fx(probes.xs.size());
        for (std::size_t i = 0; i < probes.xs.size(); ++i) {
            fx[i] = f(t, probes.xs[i], lambda);
            rep.alpha_observed = std::max(rep.alpha_observed, fx[i].norm() / w);
        }
        for (std::size_t i = 0; i < fx.size(); ++i)
            for (std::size_t j = i + 1; j < fx.size(); ++j) {
                const double dx = (probes.xs[i] - probes.xs[j]).norm();
                if (dx == 0.0) continue;
                rep.gamma_observed = std::max(rep.gamma_observed, (fx[i] - fx[j]).norm() / (w * dx));
            }
    }
    rep.margin = 1.0 - spec.K * f.gamma * conjugacy_factor(spec);
    rep.bound_ok = rep.alpha_observed <= f.alpha * (1.0 + 1e-12);
    rep.lipschitz_ok = rep.gamma_observed <= f.gamma * (1.0 + 1e-12);
    rep.margin_ok = rep.margin > 0.0;
    rep.pass = rep.bound_ok && rep.lipschitz_ok && rep.margin_ok;
    return rep;
}

const Vec& BoundedPath::at(double time) const {
    const double h = t.size() > 1 ? t[1] - t[0] : 1.0;
    const double pos = (time - t.front()) / h;
    const long j = std::lround(pos);
    if (j < 0 || static_cast<std::size_t>(j) >= t.size() || std::abs(pos - static_cast<double>(j)) > 1e-6)
        throw PreconditionError("BoundedPath::at: time is not an output node");
    return z[static_cast<std::size_t>(j)];
}

struct ConjugacySolver::Memo {
    std::shared_mutex mu;
    std::map<std::pair<std::size_t, std::vector<double>>, Vec> H;
    std::map<std::pair<std::size_t, std::vector<double>>, Vec> L;
    double max_contraction = 0.0;
    int max_iterations = 0;
};

ConjugacySolver::ConjugacySolver(const DichotomySpec& spec, const EvolutionOperator& op,
                                 NonlinearTerm f, ConjugacyConfig cfg)
    : spec_(spec), op_(&op), f_(std::move(f)), cfg_(std::move(cfg)), memo_(std::make_shared<Memo>()) {
    spec_.validate();
    if (spec_.rates.domain() != Domain::FullLine || op.field().domain != Domain::FullLine)
        throw DomainError("conjugacy needs rates and field on the whole line");
    if (f_.dim != op.dim() || spec_.P.dim() != op.dim())
        throw PreconditionError("conjugacy: dimension mismatch");
    if (!(cfg_.step > 0.0) || cfg_.t_hi < cfg_.t_lo || cfg_.margin < 0.0)
        throw PreconditionError("conjugacy: invalid grid configuration");
    alpha_ = cfg_.alpha.value_or(f_.alpha);
    gamma_ = cfg_.gamma.value_or(f_.gamma);
    if (alpha_ < 0.0 || gamma_ < 0.0) throw PreconditionError("conjugacy: alpha and gamma must be >= 0");
    const double factor = conjugacy_factor(spec_);
    bound_ = spec_.K * alpha_ * factor;
    theory_ = spec_.K * gamma_ * factor;
    if (theory_ >= 1.0) {
        std::ostringstream os;
        os << "conjugacy smallness fails: K*gamma*(1/|a|+1/b) = " << theory_ << " >= 1";
        throw PreconditionError(os.str());
    }

    const double h = cfg_.step;
    std::vector<double> probe = arange(cfg_.t_lo, cfg_.t_hi, 0.5);
    probe.push_back(cfg_.t_hi);
    const Mat P0 = spec_.P.P(0.0);
    const bool has_P = !is_zero_projection(P0);
    const bool has_Q = !is_zero_projection(eye(P0.rows()) - P0);
    if (cfg_.window > 0.0) {
        Ts_ = Tu_ = std::ceil(cfg_.window / h - 1e-9) * h;
    } else {
        const double Ka = spec_.K * alpha_;
        Ts_ = Tu_ = h;
        if (Ka > 0.0 && has_P) {
            const double a = std::abs(spec_.a);
            Ts_ = one_sided_window(spec_.rates.h, -1.0, std::log(Ka / (a * cfg_.tail_tol)) / a, probe, h);
        }
        if (Ka > 0.0 && has_Q) {
            const double b = spec_.b;
            Tu_ = one_sided_window(spec_.rates.k, 1.0, std::log(Ka / (b * cfg_.tail_tol)) / b, probe, h);
        }
    }
    Ns_ = static_cast<std::size_t>(std::lround(Ts_ / h));
    Nu_ = static_cast<std::size_t>(std::lround(Tu_ / h));
    Nspan_ = static_cast<std::size_t>(std::ceil(cfg_.margin / h - 1e-9));

    const long k0 = static_cast<long>(std::floor(cfg_.t_lo / h + 1e-9)) - static_cast<long>(Ns_ + Nspan_);
    const long k1 = static_cast<long>(std::ceil(cfg_.t_hi / h - 1e-9)) + static_cast<long>(Nu_ + Nspan_);
    grid_ = std::make_shared<GridPropagator>(op, static_cast<double>(k0) * h, h,
                                             static_cast<std::size_t>(k1 - k0));
    std::vector<double> kinks = cfg_.breakpoints;
    kinks.insert(kinks.end(), op.field().breakpoints.begin(), op.field().breakpoints.end());
    grid_->set_kinks(kinks);
    P_.resize(grid_->size());
    Q_.resize(grid_->size());
    for (std::size_t j = 0; j < grid_->size(); ++j) {
        P_[j] = spec_.P.P(grid_->time(j));
        Q_[j] = eye(P_[j].rows()) - P_[j];
    }
}

std::size_t ConjugacySolver::node(double t) const {
    if (t < cfg_.t_lo - 1e-9 || t > cfg_.t_hi + 1e-9) {
        std::ostringstream os;
        os << "conjugacy: time " << t << " outside the evaluation range [" << cfg_.t_lo << ", "
           << cfg_.t_hi << "]";
        throw PreconditionError(os.str());
    }
    return grid_->index_of(t);
}

BoundedPath ConjugacySolver::bounded_h(double tbar, const Vec& xi, double span) const {
    if (span > cfg_.margin + 1e-12) throw PreconditionError("bounded_h: span exceeds the configured margin");
    const std::size_t jc = node(tbar);
    const auto ns = static_cast<std::size_t>(std::ceil(span / cfg_.step - 1e-9));
    const std::size_t a = jc - Ns_ - ns, b = jc + Nu_ + ns;
    const auto n = static_cast<Eigen::Index>(op_->dim());

    std::vector<double> times(b - a + 1);
    for (std::size_t j = a; j <= b; ++j) times[j - a] = grid_->time(j);
    times[jc - a] = tbar;
    const std::vector<Vec> X = op_->nonlinear_path(times, tbar, xi, f_, cfg_.lambda);

    std::vector<Mat> gp(times.size()), gq(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
        const Vec fx = f_(times[i], X[i], cfg_.lambda);
        gp[i] = P_[a + i] * fx;
        gq[i] = Q_[a + i] * fx;
    }
    const Mat zero = Mat::Zero(n, 1);
    const std::vector<Mat> S = forward_accumulate(*grid_, a, b, zero, gp, &P_);
    const std::vector<Mat> U = backward_accumulate(*grid_, a, b, zero, gq, &Q_);

    BoundedPath path;
    for (std::size_t i = 0; i < times.size(); ++i)
        path.sup_norm = std::max(path.sup_norm, (U[i] - S[i]).norm());
    for (std::size_t j = jc - ns; j <= jc + ns; ++j) {
        path.t.push_back(times[j - a]);
        path.z.push_back(U[j - a].col(0) - S[j - a].col(0));
    }
    path.center = ns;
    if (path.sup_norm > bound_ * (1.0 + 1e-6) + 1e-12) {
        std::ostringstream os;
        os << "bounded_h: sup norm " << path.sup_norm << " exceeds K*alpha*(1/|a|+1/b) = " << bound_;
        throw PreconditionError(os.str());
    }
    return path;
}

BoundedPath ConjugacySolver::bounded_l(double tbar, const Vec& xi, double span) const {
    if (span > cfg_.margin + 1e-12) throw PreconditionError("bounded_l: span exceeds the configured margin");
    const std::size_t jc = node(tbar);
    const auto ns = static_cast<std::size_t>(std::ceil(span / cfg_.step - 1e-9));
    const std::size_t a = jc - Ns_ - ns, b = jc + Nu_ + ns;
    const std::size_t m = b - a + 1;
    const auto n = static_cast<Eigen::Index>(op_->dim());

    const std::vector<Mat> Y = grid_->flow(jc, Mat(xi), a, b);
    std::vector<double> times(m);
    for (std::size_t j = a; j <= b; ++j) times[j - a] = grid_->time(j);

    std::vector<Vec> z(m, Vec::Zero(n));
    std::vector<Mat> gp(m), gq(m);
    const Mat zero = Mat::Zero(n, 1);
    BoundedPath path;
    double prev = -1.0;
    for (int it = 1;; ++it) {
        for (std::size_t i = 0; i < m; ++i) {
            const Vec fx = f_(times[i], Vec(Y[i].col(0) + z[i]), cfg_.lambda);
            gp[i] = P_[a + i] * fx;
            gq[i] = Q_[a + i] * fx;
        }
        const std::vector<Mat> S = forward_accumulate(*grid_, a, b, zero, gp, &P_);
        const std::vector<Mat> U = backward_accumulate(*grid_, a, b, zero, gq, &Q_);
        std::vector<Vec> next(m);
        for (std::size_t i = 0; i < m; ++i) next[i] = S[i].col(0) - U[i].col(0);
        const double diff = sup_diff(next, z);
        z = std::move(next);
        path.iterations = it;
        path.fp_residual = diff;
        if (prev > 100.0 * cfg_.fp_tol) {
            const double ratio = diff / prev;
            path.contraction = std::max(path.contraction, ratio);
            if (ratio > theory_ + cfg_.contraction_slack || ratio >= 1.0) {
                std::ostringstream os;
                os << "bounded_l: contraction ratio " << ratio << " exceeds the theoretical "
                   << theory_ << " plus slack";
                throw NumericalError(os.str(), tbar);
            }
        }
        if (diff < cfg_.fp_tol) break;
        if (it >= cfg_.max_iter) throw NumericalError("bounded_l: Picard iteration did not converge", tbar);
        prev = diff;
    }

    for (const Vec& v : z) path.sup_norm = std::max(path.sup_norm, v.norm());
    for (std::size_t j = jc - ns; j <= jc + ns; ++j) {
        path.t.push_back(times[j - a]);
        path.z.push_back(z[j - a]);
    }
    path.t[ns] = tbar;
    path.center = ns;
    if (path.sup_norm > bound_ * (1.0 + 1e-6) + 1e-12) {
        std::ostringstream os;
        os << "bounded_l: sup norm " << path.sup_norm << " exceeds K*alpha*(1/|a|+1/b) = " << bound_;
        throw PreconditionError(os.str());
    }
    return path;
}

Vec ConjugacySolver::H(double t, const Vec& x) const {
    const auto key = std::make_pair(node(t), key_of(x));
    {
        std::shared_lock lk(memo_->mu);
        if (auto it = memo_->H.find(key); it != memo_->H.end()) return it->second;
    }
    const Vec value = x + bounded_h(t, x).at_center();
    std::unique_lock lk(memo_->mu);
    memo_->H.emplace(key, value);
    return value;
}

Vec ConjugacySolver::L(double t, const Vec& y) const {
    const auto key = std::make_pair(node(t), key_of(y));
    {
        std::shared_lock lk(memo_->mu);
        if (auto it = memo_->L.find(key); it != memo_->L.end()) return it->second;
    }
    const BoundedPath p = bounded_l(t, y);
    const Vec value = y + p.at_center();
    std::unique_lock lk(memo_->mu);
    memo_->L.emplace(key, value);
    memo_->max_contraction = std::max(memo_->max_contraction, p.contraction);
    memo_->max_iterations = std::max(memo_->max_iterations, p.iterations);
    return value;
}

double ConjugacySolver::max_contraction() const {
    std::shared_lock lk(memo_->mu);
    return memo_->max_contraction;
}

int ConjugacySolver::max_iterations() const {
    std::shared_lock lk(memo_->mu);
    return memo_->max_iterations;
}

ConjugacyPair build_pair(const DichotomySpec& spec, const EvolutionOperator& op,
                         const NonlinearTerm& f, const ConjugacyConfig& cfg) {
    auto solver = std::make_shared<const ConjugacySolver>(spec, op, f, cfg);
    ConjugacyPair pair;
    pair.bound = solver->bound();
    pair.solver = solver;
    pair.H = [solver](double t, const Vec& x) { return solver->H(t, x); };
    pair.L = [solver](double t, const Vec& y) { return solver->L(t, y); };
    return pair;
}

std::pair<double, double> roundtrip(const ConjugacyPair& pair, double t, const Vec& x) {
    const double lh = (pair.L(t, pair.H(t, x)) - x).norm();
    const double hl = (pair.H(t, pair.L(t, x)) - x).norm();
    return {lh, hl};
}

double conjugation_residual(const ConjugacyPair& pair, const EvolutionOperator& op,
                            const NonlinearTerm& f, const Param& lambda, double tbar,
                            const Vec& xbar, double horizon) {
    const double h = pair.solver ? pair.solver->config().step : 0.025;
    const long stride = std::max(1L, std::lround(0.25 / h));
    const long count = std::lround(horizon / h);
    std::vector<double> times;
    for (long k = 0; k <= count; k += stride) times.push_back(tbar + static_cast<double>(k) * h);
    if (times.back() < tbar + horizon - 1e-9) times.push_back(tbar + static_cast<double>(count) * h);

    const std::vector<Vec> X = op.nonlinear_path(times, tbar, xbar, f, lambda);
    const Vec H0 = pair.H(tbar, xbar);
    std::vector<double> res(times.size());
    parallel_for(times.size(), [&](std::size_t i) {
        const Vec lin = op.evolve(times[i], tbar) * H0;
        res[i] = (pair.H(times[i], X[i]) - lin).norm();
    });
    return *std::max_element(res.begin(), res.end());
}

std::vector<Vec> box_samples(int dim, double lo, double hi, int per_axis) {
    if (dim < 1 || per_axis < 1) throw PreconditionError("box_samples: empty box");
    const std::vector<double> axis =
        per_axis == 1 ? std::vector<double>{0.5 * (lo + hi)}
                      : linspace(lo, hi, static_cast<std::size_t>(per_axis));
    std::size_t total = 1;
    for (int d = 0; d < dim; ++d) total *= axis.size();
    std::vector<Vec> out;
    out.reserve(total);
    for (std::size_t k = 0; k < total; ++k) {
        Vec x(dim);
        std::size_t r = k;
        for (int d = dim - 1; d >= 0; --d) {
            x(d) = axis[r % axis.size()];
            r /= axis.size();
        }
        out.push_back(x);
    }
    return out;
}

ConjugacyReport certify(const ConjugacyPair& pair, const EvolutionOperator& op,
                        const NonlinearTerm& f, const CertifyOptions& opts) {
    if (!pair.solver) throw PreconditionError("certify: pair has no solver");
    const ConjugacySolver& solver = *pair.solver;
    const int n = op.dim();
    const std::vector<Vec> box = box_samples(n, opts.box_lo, opts.box_hi, opts.per_axis);

    ConjugacyReport rep;
    rep.bound = pair.bound;
    rep.roundtrip_tol = opts.roundtrip_tol;
    rep.conjugation_tol = opts.conjugation_tol;
    rep.contraction_theory = solver.contraction_theory();
    rep.window_stable = solver.stable_window();
    rep.window_unstable = solver.unstable_window();
    rep.samples.resize(opts.ts.size() * box.size());
    parallel_for(rep.samples.size(), [&](std::size_t i) {
        ConjugacySample& s = rep.samples[i];
        s.t = opts.ts[i / box.size()];
        s.x = box[i % box.size()];
        s.Hx = pair.H(s.t, s.x);
        s.roundtrip_LH = (pair.L(s.t, s.Hx) - s.x).norm();
        s.roundtrip_HL = (pair.H(s.t, pair.L(s.t, s.x)) - s.x).norm();
    });

    rep.min_separation = std::numeric_limits<double>::infinity();
    rep.growth_slack = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < rep.samples.size(); ++i) {
        const ConjugacySample& s = rep.samples[i];
        rep.max_displacement = std::max(rep.max_displacement, (s.Hx - s.x).norm());
        rep.max_roundtrip = std::max({rep.max_roundtrip, s.roundtrip_LH, s.roundtrip_HL});
        rep.growth_slack = std::min(rep.growth_slack, s.Hx.norm() - s.x.norm() + rep.bound);
        for (std::size_t j = i + 1; j < rep.samples.size(); ++j) {
            const ConjugacySample& o = rep.samples[j];
            if (o.t != s.t || (o.x - s.x).norm() == 0.0) continue;
            rep.min_separation = std::min(rep.min_separation, (o.Hx - s.Hx).norm());
        }
    }

    std::vector<Vec> xbars = opts.xbars;
    if (xbars.empty()) {
        xbars.push_back(Vec::Zero(n));
        for (const Vec& x : box_samples(n, opts.box_lo, opts.box_hi, 2)) xbars.push_back(x);
    }
    for (double tbar : opts.ts)
        for (const Vec& xb : xbars) {
            const double r = conjugation_residual(pair, op, f, solver.config().lambda, tbar, xb, opts.horizon);
            rep.max_conjugation = std::max(rep.max_conjugation, r / (1.0 + xb.norm()));
        }

    rep.max_contraction = solver.max_contraction();
    rep.max_iterations = solver.max_iterations();
    rep.displacement_ok = rep.max_displacement <= rep.bound * (1.0 + 1e-9) + 1e-12;
    rep.roundtrip_ok = rep.max_roundtrip <= opts.roundtrip_tol;
    rep.injective = rep.samples.size() < 2 || rep.min_separation > 1e-9;
    rep.growth_ok = rep.growth_slack >= -1e-12;
    rep.conjugation_ok = rep.max_conjugation <= opts.conjugation_tol;
    rep.contraction_ok = rep.max_contraction <= rep.contraction_theory + solver.config().contraction_slack;
    rep.pass = rep.displacement_ok && rep.roundtrip_ok && rep.injective && rep.growth_ok &&
               rep.conjugation_ok && rep.contraction_ok;
    return rep;
}

} // namespace gdich
