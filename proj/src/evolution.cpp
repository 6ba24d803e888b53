#include "gdich/evolution.hpp"

#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>

namespace gdich {

namespace odeint = boost::numeric::odeint;

void IntegratorConfig::validate() const {
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw PreconditionError("integrator tolerances must be positive");
    if (!(max_step > 0.0) || !(cell > 0.0)) throw PreconditionError("integrator steps must be positive");
}

struct EvolutionOperator::Cache {
    mutable std::shared_mutex mu;
    std::map<long, Mat> fwd;
    std::map<long, Mat> bwd;
};

EvolutionOperator::EvolutionOperator(CoefficientField field, IntegratorConfig cfg)
    : field_(std::move(field)), cfg_(cfg), cache_(std::make_shared<Cache>()) {
    cfg_.validate();
    if (field_.dim < 1 || field_.dim > kMaxDim) throw PreconditionError("field dimension must be in 1..16");
}

void EvolutionOperator::check_domain(double t) const {
    if (!field_.in_domain(t)) {
        std::ostringstream os;
        os << "evolution: t=" << t << " outside the domain of field '" << field_.name << "'";
        throw DomainError(os.str());
    }
}

namespace {

using State = std::vector<double>;

// Backward segments run in reversed time tau = -t: odeint's max_dt clamp
// flips the sign of negative steps.
template <class Rhs>
void run_segment(Rhs&& rhs, State& x, double from, double to, const IntegratorConfig& cfg,
                 const std::function<void(const State&, double)>& observe) {
    if (from == to) return;
    // local error is held two orders below the global target
    auto stepper = odeint::make_controlled(cfg.abs_tol * 1e-2, cfg.rel_tol * 1e-2, cfg.max_step,
                                           odeint::runge_kutta_dopri5<State>());
    const double sign = to > from ? 1.0 : -1.0;
    auto sys = [&rhs, sign](const State& xs, State& dx, double tau) {
        rhs(xs, dx, sign * tau);
        if (sign < 0.0)
            for (double& v : dx) v = -v;
    };
    const double dt0 = std::min(std::abs(to - from), 0.01);
    double last = from;
    try {
        odeint::integrate_adaptive(stepper, sys, x, sign * from, sign * to, dt0,
                                   [&](const State& s, double tau) {
                                       last = sign * tau;
                                       for (double v : s)
                                           if (!std::isfinite(v)) throw NumericalError("non-finite state", last);
                                       if (observe) observe(s, last);
                                   });
    } catch (const odeint::step_adjustment_error&) {
        throw NumericalError("step size underflow (stiff or singular field)", last);
    } catch (const odeint::no_progress_error&) {
        throw NumericalError("integrator made no progress", last);
    }
}

std::vector<double> cut_points(const std::vector<double>& breaks, double from, double to) {
    std::vector<double> pts{from};
    const double lo = std::min(from, to), hi = std::max(from, to);
    std::vector<double> inner;
    for (double b : breaks)
        if (b > lo && b < hi) inner.push_back(b);
    std::sort(inner.begin(), inner.end());
    if (to < from) std::reverse(inner.begin(), inner.end());
    pts.insert(pts.end(), inner.begin(), inner.end());
    pts.push_back(to);
    return pts;
}

} // namespace

Mat EvolutionOperator::integrate(double from, double to, const Mat& x0) const {
    check_domain(from);
    check_domain(to);
    if (from == to) return x0;
    const Eigen::Index n = field_.dim, m = x0.cols();
    State x(x0.data(), x0.data() + x0.size());
    auto rhs = [this, n, m](const State& xs, State& dx, double t) {
        const Mat a = field_.fn(t);
        Eigen::Map<const Mat> X(xs.data(), n, m);
        Eigen::Map<Mat> D(dx.data(), n, m);
        D.noalias() = a * X;
    };
    const auto pts = cut_points(field_.breakpoints, from, to);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) run_segment(rhs, x, pts[i], pts[i + 1], cfg_, {});
    return Eigen::Map<const Mat>(x.data(), n, m);
}

const Mat& EvolutionOperator::cell_op(long k, bool forward) const {
    auto& map = forward ? cache_->fwd : cache_->bwd;
    {
        std::shared_lock lk(cache_->mu);
        auto it = map.find(k);
        if (it != map.end()) return it->second;
    }
    const double a = static_cast<double>(k) * cfg_.cell, b = static_cast<double>(k + 1) * cfg_.cell;
    Mat op = forward ? integrate(a, b, eye(field_.dim)) : integrate(b, a, eye(field_.dim));
    std::unique_lock lk(cache_->mu);
    auto [it, inserted] = map.emplace(k, std::move(op));
    return it->second;
}

Mat EvolutionOperator::walk(double t, double s, Mat x,
                            const std::function<Mat(double)>* proj) const {
    check_domain(t);
    check_domain(s);
    if (t == s) return x;
    const double c = cfg_.cell;
    auto project = [&](double tau) {
        if (proj) x = (*proj)(tau) * x;
    };
    if (t > s) {
        const long ks = static_cast<long>(std::ceil(s / c));
        const long kt = static_cast<long>(std::floor(t / c));
        if (ks > kt) {
            x = integrate(s, t, x);
            project(t);
            return x;
        }
        const double first = static_cast<double>(ks) * c;
        if (first > s) {
            x = integrate(s, first, x);
            project(first);
        }
        for (long k = ks; k < kt; ++k) {
            x = cell_op(k, true) * x;
            project(static_cast<double>(k + 1) * c);
        }
        const double last = static_cast<double>(kt) * c;
        if (t > last) {
            x = integrate(last, t, x);
            project(t);
        }
        return x;
    }
    const long ks = static_cast<long>(std::floor(s / c));
    const long kt = static_cast<long>(std::ceil(t / c));
    if (kt > ks) {
        x = integrate(s, t, x);
        project(t);
        return x;
    }
    const double first = static_cast<double>(ks) * c;
    if (first < s) {
        x = integrate(s, first, x);
        project(first);
    }
    for (long k = ks - 1; k >= kt; --k) {
        x = cell_op(k, false) * x;
        project(static_cast<double>(k) * c);
    }
    const double last = static_cast<double>(kt) * c;
    if (t < last) {
        x = integrate(last, t, x);
        project(t);
    }
    return x;
}

Mat EvolutionOperator::evolve(double t, double s) const {
    return walk(t, s, eye(field_.dim), nullptr);
}

Mat EvolutionOperator::evolve_inverse_unstable(double t, double s, const Mat& q_at_t) const {
    if (!(t >= s) || !(s >= 0.0))
        throw PreconditionError("evolve_inverse_unstable requires t >= s >= 0");
    return walk(s, t, q_at_t, nullptr);
}

Mat EvolutionOperator::evolve_projected(double t, double s, const Mat& x0,
                                        const std::function<Mat(double)>& proj) const {
    return walk(t, s, x0, &proj);
}

Vec EvolutionOperator::solve_nonlinear(double t, double tbar, const Vec& xi,
                                       const NonlinearTerm& f, const Param& lambda) const {
    return nonlinear_path({t}, tbar, xi, f, lambda).front();
}

std::vector<Vec> EvolutionOperator::nonlinear_path(const std::vector<double>& times, double tbar,
                                                   const Vec& xi, const NonlinearTerm& f,
                                                   const Param& lambda) const {
    check_domain(tbar);
    const Eigen::Index n = field_.dim;
    if (xi.size() != n) throw PreconditionError("nonlinear_path: state dimension mismatch");
    auto rhs = [this, &f, &lambda, n](const State& xs, State& dx, double t) {
        Eigen::Map<const Vec> x(xs.data(), n);
        Eigen::Map<Vec> d(dx.data(), n);
        d = field_.fn(t) * x + f(t, x, lambda);
    };
    const double bound = cfg_.blowup;
    auto guard = [bound, n](const State& s, double t) {
        if (Eigen::Map<const Vec>(s.data(), n).norm() > bound)
            throw NumericalError("nonlinear trajectory escaped the configured bound", t);
    };

    std::vector<std::size_t> fwd, bwd;
    for (std::size_t i = 0; i < times.size(); ++i) (times[i] >= tbar ? fwd : bwd).push_back(i);
    std::sort(fwd.begin(), fwd.end(), [&](auto a, auto b) { return times[a] < times[b]; });
    std::sort(bwd.begin(), bwd.end(), [&](auto a, auto b) { return times[a] > times[b]; });

    std::vector<Vec> out(times.size());
    for (const auto* order : {&fwd, &bwd}) {
        State x(xi.data(), xi.data() + n);
        double cur = tbar;
        for (std::size_t idx : *order) {
            const double target = times[idx];
            check_domain(target);
            const auto pts = cut_points(field_.breakpoints, cur, target);
            for (std::size_t i = 0; i + 1 < pts.size(); ++i)
                run_segment(rhs, x, pts[i], pts[i + 1], cfg_, guard);
            cur = target;
            out[idx] = Eigen::Map<const Vec>(x.data(), n);
        }
    }
    return out;
}

std::size_t EvolutionOperator::cached_cells() const {
    std::shared_lock lk(cache_->mu);
    return cache_->fwd.size() + cache_->bwd.size();
}

double EvolutionOperator::max_cached_condition() const {
    std::shared_lock lk(cache_->mu);
    double worst = 1.0;
    for (const auto* map : {&cache_->fwd, &cache_->bwd})
        for (const auto& [k, m] : *map) {
            Eigen::JacobiSVD<Mat> svd(m);
            const auto& sv = svd.singularValues();
            worst = std::max(worst, sv(0) / sv(sv.size() - 1));
        }
    return worst;
}

} // namespace gdich
