#include "gdich/manifold.hpp"

#include "gdich/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace gdich {

namespace {

struct LogRates {
    const RateQuadruple& r;
    double lh(double t) const { return r.h.log_eval(t); }
    double lk(double t) const { return r.k.log_eval(t); }
    double lmu(double t) const { return r.mu.log_eval(t); }
    double lnu(double t) const { return r.nu.log_eval(t); }
};

std::size_t ipow(std::size_t base, int e) {
    std::size_t r = 1;
    for (int i = 0; i < e; ++i) r *= base;
    return r;
}

double sum_norm(const Mat& P, const Mat& Q, const Vec& d) { return (P * d).norm() + (Q * d).norm(); }

} // namespace

RadiusFunction compute_radius(const ManifoldProblem& problem, const std::vector<double>& s,
                              const QuadConfig& quad) {
    const DichotomySpec& spec = problem.spec;
    const double q = problem.f.q, eps = spec.eps, a = spec.a, b = spec.b, K = spec.K;
    if (!(q > 0.0)) throw PreconditionError("manifold: q must be positive");
    RadiusFunction out;
    out.s = s;
    const std::size_t m = s.size();
    out.C.assign(m, 0.0);
    out.log_beta.assign(m, 0.0);
    out.radius.assign(m, 0.0);
    out.radius_bm.assign(m, 0.0);
    for (double t : s)
        if (t < 0.0) throw DomainError("manifold radius is defined for s >= 0");
    if (eps == 0.0) {
        if (!problem.radius_override || !(*problem.radius_override > 0.0))
            throw PreconditionError("manifold: eps = 0 needs an explicit ball radius");
        out.constant = true;
        std::fill(out.radius.begin(), out.radius.end(), *problem.radius_override);
        std::fill(out.radius_bm.begin(), out.radius_bm.end(), *problem.radius_override / (2.0 * K));
        return out;
    }
    const LogRates lr{spec.rates};
    const auto& r = spec.rates;
    auto ell = [&](double tau) { return a * q * lr.lh(tau) + eps * std::max(lr.lmu(tau), lr.lnu(tau)); };
    auto slope = [&](double tau) {
        const double dm = lr.lmu(tau) >= lr.lnu(tau) ? r.mu.dlog(tau) : r.nu.dlog(tau);
        return a * q * r.h.dlog(tau) + eps * dm;
    };
    parallel_for(m, [&](std::size_t i) {
        const double t = s[i];
        CertifiedIntegral ci;
        try {
            ci = integrate_upper([&](double tau) { return std::exp(ell(tau)); }, {ell, slope}, t, quad);
        } catch (const NumericalError&) {
            throw PreconditionError("manifold: C(t) diverges");
        }
        if (!std::isfinite(ci.value) || !(ci.value > 0.0)) throw PreconditionError("manifold: C(t) is not finite");
        out.C[i] = ci.value;
        const double lb = (b / (eps * q)) * lr.lk(t) - (a * (q + 1.0) / (eps * q)) * lr.lh(t) +
                          (1.0 + 1.0 / q) * lr.lmu(t) + std::log(ci.value) / (eps * q);
        out.log_beta[i] = lb;
        out.radius[i] = std::exp(-eps * lb);
        out.radius_bm[i] = std::exp(-eps * (lb + lr.lmu(t))) / (2.0 * K);
    });
    return out;
}

ManifoldConstants manifold_constants(double K, double chat, double q) {
    ManifoldConstants c;
    const double inf = std::numeric_limits<double>::infinity();
    c.smallness = std::pow(6.0, q + 1.0) * chat * std::pow(K, q + 1.0);
    const double rest = 1.0 - c.smallness;
    c.K1 = rest > 0.0 ? K / rest : inf;
    c.K2 = rest > 0.0 ? 4.0 * std::pow(6.0, q) * chat * std::pow(K, q + 2.0) / rest : inf;
    c.lipschitz_J = c.smallness * c.K1;
    c.outer_theory = 2.0 * std::pow(6.0, q) * chat * std::pow(K, q) * (2.0 * K + 3.0 * c.K2);
    c.h_prime = 2.0 * std::pow(3.0, q + 1.0) * K * K * chat;
    const double hd = 1.0 - (2.0 / 3.0) * c.h_prime;
    c.H = hd > 0.0 ? c.h_prime / hd : inf;
    const double g = c.h_prime * (1.0 + 2.0 * c.H / 3.0);
    c.K3 = (1.0 - g / K) > 0.0 ? g / (1.0 - g / K) : inf;
    c.d_bound = 3.0 * c.K1;
    c.d_star_bound = 3.0 * c.K3 + 2.0 * K * c.H * (1.0 + c.K3 / K);
    return c;
}

ManifoldHypotheses check_manifold_hypotheses(const ManifoldProblem& problem, const RadiusFunction& radius,
                                             const Param& lambda) {
    const DichotomySpec& spec = problem.spec;
    ManifoldHypotheses h;
    h.constants = manifold_constants(spec.K, problem.f.chat, problem.f.q);
    const ManifoldConstants& c = h.constants;
    h.smallness_ok = c.smallness < 1.0 && c.lipschitz_J <= 1.0 && c.outer_theory < 1.0 &&
                     (2.0 / 3.0) * c.h_prime < 1.0 && std::isfinite(c.K3);

    std::vector<double> ts = radius.s.empty() ? std::vector<double>{0.0} : radius.s;
    h.origin_residual = origin_residual(problem.f, ts, {lambda});
    h.origin_ok = h.origin_residual <= 1e-14;

    const LogRates lr{spec.rates};
    auto c2 = [&](double t) { return -spec.b * lr.lk(t) + spec.a * lr.lh(t) + spec.eps * lr.lnu(t); };
    double prev = c2(1.0);
    h.c2_ok = true;
    for (double t : {10.0, 100.0, 1000.0}) {
        const double v = c2(t);
        if (!(v < prev)) h.c2_ok = false;
        prev = v;
    }
    h.c2_log_value = prev;
    h.c2_ok = h.c2_ok && prev < -20.0;

    if (radius.constant) {
        h.c3_ok = true;
    } else {
        h.c3_worst_increase = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i + 1 < radius.s.size(); ++i) {
            const double v0 = spec.a * lr.lh(radius.s[i]) + spec.eps * radius.log_beta[i];
            const double v1 = spec.a * lr.lh(radius.s[i + 1]) + spec.eps * radius.log_beta[i + 1];
            h.c3_worst_increase = std::max(h.c3_worst_increase, v1 - v0);
        }
        h.c3_ok = h.c3_worst_increase <= 1e-12;
    }
    h.pass = h.smallness_ok && h.origin_ok && h.c2_ok && h.c3_ok;
    return h;
}

ManifoldGraph::ManifoldGraph(std::vector<double> s, std::vector<double> radius, std::vector<Mat> basis,
                             int per_axis, int dim)
    : s_(std::move(s)), radius_(std::move(radius)), basis_(std::move(basis)), m_(per_axis), n_(dim) {
    if (s_.empty() || s_.size() != radius_.size() || s_.size() != basis_.size())
        throw PreconditionError("ManifoldGraph: inconsistent slices");
    if (m_ < 2 || m_ % 2 == 0) throw PreconditionError("ManifoldGraph: per-axis node count must be odd and >= 3");
    l_ = static_cast<int>(basis_.front().cols());
    nodes_ = ipow(static_cast<std::size_t>(m_), l_);
    values_.assign(s_.size(), std::vector<Vec>(nodes_, Vec::Zero(n_)));
}

Vec ManifoldGraph::node(std::size_t j, std::size_t k) const {
    Vec c(l_);
    std::size_t r = k;
    for (int d = 0; d < l_; ++d) {
        const auto i = r % static_cast<std::size_t>(m_);
        r /= static_cast<std::size_t>(m_);
        c(d) = radius_[j] * (-1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(m_ - 1));
    }
    return basis_[j] * c;
}

Vec ManifoldGraph::node_effective(std::size_t j, std::size_t k) const {
    Vec x = node(j, k);
    const double nx = x.norm();
    if (nx > radius_[j]) x *= radius_[j] / nx;
    return x;
}

Vec ManifoldGraph::on_slice(std::size_t j, const Vec& xi) const {
    const double R = radius_[j];
    Vec out = Vec::Zero(n_);
    if (!(R > 0.0)) return out;
    Vec c = basis_[j].transpose() * xi;
    const double nc = c.norm();
    if (nc > R) c *= R / nc;
    std::vector<std::size_t> i0(static_cast<std::size_t>(l_));
    std::vector<double> w(static_cast<std::size_t>(l_));
    for (int d = 0; d < l_; ++d) {
        const double p = std::clamp((c(d) / R + 1.0) * 0.5 * (m_ - 1), 0.0, static_cast<double>(m_ - 1));
        const auto i = std::min(static_cast<std::size_t>(p), static_cast<std::size_t>(m_ - 2));
        i0[static_cast<std::size_t>(d)] = i;
        w[static_cast<std::size_t>(d)] = p - static_cast<double>(i);
    }
    for (std::size_t corner = 0; corner < (std::size_t{1} << l_); ++corner) {
        double weight = 1.0;
        std::size_t idx = 0, mul = 1;
        for (int d = 0; d < l_; ++d) {
            const bool up = (corner >> d) & 1U;
            const auto ud = static_cast<std::size_t>(d);
            weight *= up ? w[ud] : 1.0 - w[ud];
            idx += (i0[ud] + (up ? 1 : 0)) * mul;
            mul *= static_cast<std::size_t>(m_);
        }
        if (weight != 0.0) out += weight * values_[j][idx];
    }
    return out;
}

Vec ManifoldGraph::operator()(double s, const Vec& xi) const {
    if (s < s_.front() - 1e-12) throw DomainError("ManifoldGraph: time before the first slice");
    if (s_.size() == 1 || s >= s_.back()) return on_slice(s_.size() - 1, xi);
    const double ds = s_[1] - s_[0];
    auto j = static_cast<std::size_t>(std::max(0.0, std::floor((s - s_.front()) / ds)));
    j = std::min(j, s_.size() - 2);
    const double w = std::clamp((s - s_[j]) / ds, 0.0, 1.0);
    if (w <= 1e-12) return on_slice(j, xi);
    if (w >= 1.0 - 1e-12) return on_slice(j + 1, xi);
    return (1.0 - w) * on_slice(j, xi) + w * on_slice(j + 1, xi);
}

double graph_distance(const ManifoldGraph& a, const ManifoldGraph& b) {
    double d = 0.0;
    for (std::size_t j = 0; j < a.slices(); ++j)
        for (std::size_t k = 0; k < a.nodes_per_slice(); ++k) {
            const double nx = a.node_effective(j, k).norm();
            if (nx > 0.0) d = std::max(d, (a.value(j, k) - b.value(j, k)).norm() / nx);
        }
    return d;
}

double graph_norm(const ManifoldGraph& g) {
    double d = 0.0;
    for (std::size_t j = 0; j < g.slices(); ++j)
        for (std::size_t k = 0; k < g.nodes_per_slice(); ++k) {
            const double nx = g.node_effective(j, k).norm();
            if (nx > 0.0) d = std::max(d, g.value(j, k).norm() / nx);
        }
    return d;
}

ManifoldSolver::ManifoldSolver(ManifoldProblem problem, const EvolutionOperator& op, ManifoldOptions opts)
    : problem_(std::move(problem)), op_(&op), opts_(std::move(opts)) {
    const DichotomySpec& spec = problem_.spec;
    spec.validate();
    if (problem_.f.dim != op.dim() || spec.P.dim() != op.dim())
        throw PreconditionError("manifold: dimension mismatch");
    if (spec.P.rank() < 1) throw PreconditionError("manifold: the stable space is trivial");
    if (!(opts_.step > 0.0) || opts_.shells < 1 || opts_.s_eval < 0.0 || opts_.kappa_max < 0.0)
        throw PreconditionError("manifold: invalid options");
    const double h = opts_.step;
    stride_ = static_cast<std::size_t>(std::lround(opts_.slice_step / h));
    if (stride_ < 1 || std::abs(static_cast<double>(stride_) * h - opts_.slice_step) > 1e-9)
        throw PreconditionError("manifold: slice_step must be a multiple of step");
    const double ds = opts_.slice_step;

    // Certified window from the tail envelope at the evaluation slices.
    const double core_end = std::ceil((opts_.s_eval + opts_.kappa_max) / ds - 1e-9) * ds;
    const RadiusFunction core = compute_radius(problem_, arange(0.0, core_end, ds), opts_.quad);
    const double q = problem_.f.q, a = spec.a, b = spec.b, eps = spec.eps, K = spec.K;
    const double chat = problem_.f.chat;
    const LogRates lr{spec.rates};
    const auto& r = spec.rates;
    if (opts_.window > 0.0) {
        window_ = std::ceil(opts_.window / ds - 1e-9) * ds;
    } else if (chat == 0.0) {
        window_ = 1.0;
    } else {
        const double lpre = (q + 1.0) * std::log(6.0) + std::log(chat) + (q + 2.0) * std::log(K);
        auto tail_ok = [&](double W) {
            for (std::size_t i = 0; i < core.s.size(); ++i) {
                const double s = core.s[i];
                const double shift = b * lr.lk(s) - a * (q + 1.0) * lr.lh(s);
                LogEnvelope env{[&, shift](double tau) {
                                    return shift - b * lr.lk(tau) + a * (q + 1.0) * lr.lh(tau) + eps * lr.lnu(tau);
                                },
                                [&](double tau) {
                                    return -b * r.k.dlog(tau) + a * (q + 1.0) * r.h.dlog(tau) + eps * r.nu.dlog(tau);
                                }};
                const TailBound tb = upper_tail(env, s + W);
                if (!tb.convergent) return false;
                const double lt = lpre + eps * (q + 1.0) * lr.lmu(s) + (q + 1.0) * std::log(core.radius[i]) +
                                  std::log(tb.bound);
                if (lt > std::log(opts_.tail_tol)) return false;
            }
            return true;
        };
        window_ = 1.0;
        while (!tail_ok(window_)) {
            window_ += 0.5;
            if (window_ > 60.0) throw PreconditionError("manifold: tail envelope does not reach the tolerance");
        }
        window_ = std::ceil(window_ / ds - 1e-9) * ds;
    }

    const double s_max = core_end + window_;
    const auto steps = static_cast<std::size_t>(std::lround(s_max / h));
    grid_ = std::make_shared<GridPropagator>(op, 0.0, h, steps);
    std::vector<double> kinks = op.field().breakpoints;
    grid_->set_kinks(kinks);
    std::vector<double> nodes(grid_->size());
    for (std::size_t j = 0; j < nodes.size(); ++j) nodes[j] = grid_->time(j);
    radius_ = compute_radius(problem_, nodes, opts_.quad);
    const Param lam0 = problem_.Y.dim() > 0 ? Param(problem_.Y.lo) : Param();
    hyp_ = check_manifold_hypotheses(problem_, radius_, lam0);

    P_.resize(grid_->size());
    Q_.resize(grid_->size());
    for (std::size_t j = 0; j < grid_->size(); ++j) {
        P_[j] = spec.P.P(grid_->time(j));
        Q_[j] = eye(P_[j].rows()) - P_[j];
    }
}

double ManifoldSolver::ball_radius(double s) const { return radius_.radius[grid_->index_of(s)]; }

double ManifoldSolver::invariant_radius(double s) const { return radius_.radius_bm[grid_->index_of(s)]; }

ManifoldGraph ManifoldSolver::zero_graph() const {
    std::vector<double> s, R;
    std::vector<Mat> basis;
    for (std::size_t j = 0; j < grid_->size(); j += stride_) {
        s.push_back(grid_->time(j));
        R.push_back(radius_.radius[j]);
        basis.push_back(range_basis(P_[j]));
    }
    return ManifoldGraph(std::move(s), std::move(R), std::move(basis), 2 * opts_.shells + 1, op_->dim());
}

UPath ManifoldSolver::solve_u(const ManifoldGraph& phi, const Param& lambda, double s, const Vec& xi) const {
    const DichotomySpec& spec = problem_.spec;
    const std::size_t a = grid_->index_of(s);
    const auto span = static_cast<std::size_t>(std::lround(window_ / opts_.step));
    const std::size_t b = std::min(a + span, grid_->size() - 1);
    if (b == a) throw PreconditionError("solve_u: start is at the end of the grid");
    const double R = radius_.radius[a];
    if (xi.norm() > R * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "solve_u: |xi| = " << xi.norm() << " exceeds the ball radius " << R;
        throw PreconditionError(os.str());
    }
    if ((P_[a] * xi - xi).norm() > 1e-10 * std::max(1.0, xi.norm()))
        throw PreconditionError("solve_u: xi is not in the stable space");

    const std::size_t m = b - a + 1;
    const Eigen::Index n = op_->dim();
    const LogRates lr{spec.rates};
    std::vector<double> t(m), w(m);
    const double lhs = lr.lh(s), lmus = lr.lmu(s);
    for (std::size_t i = 0; i < m; ++i) {
        t[i] = grid_->time(a + i);
        w[i] = 1.0 / (2.0 * spec.K * std::exp(spec.a * (lr.lh(t[i]) - lhs) + spec.eps * lmus));
    }
    t[0] = s;

    const std::vector<Mat> zero(m, Mat::Zero(n, 1));
    std::vector<Mat> u = forward_accumulate(*grid_, a, b, Mat(xi), zero, &P_);
    std::vector<Mat> g(m);
    UPath path;
    const double theory = hyp_.constants.smallness;
    double prev = -1.0;
    for (int it = 1;; ++it) {
        for (std::size_t i = 0; i < m; ++i) {
            const Vec ui = u[i].col(0);
            g[i] = P_[a + i] * problem_.f(t[i], Vec(ui + phi(t[i], ui)), lambda);
        }
        std::vector<Mat> next = forward_accumulate(*grid_, a, b, Mat(xi), g, &P_);
        double diff = 0.0;
        for (std::size_t i = 0; i < m; ++i) diff = std::max(diff, w[i] * (next[i] - u[i]).norm());
        u = std::move(next);
        path.iterations = it;
        path.fp_residual = diff;
        if (prev > 100.0 * opts_.inner_fp_tol) {
            const double ratio = diff / prev;
            path.contraction = std::max(path.contraction, ratio);
            if (ratio > theory + opts_.contraction_slack || ratio >= 1.0) {
                std::ostringstream os;
                os << "solve_u: contraction ratio " << ratio << " exceeds " << theory << " plus slack";
                throw NumericalError(os.str(), s);
            }
        }
        if (diff < opts_.inner_fp_tol) break;
        if (it >= opts_.max_inner) throw NumericalError("solve_u: Picard iteration did not converge", s);
        prev = diff;
    }

    const double nxi = xi.norm();
    path.t = t;
    path.u.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        path.u.push_back(u[i].col(0));
        if (nxi > 0.0) path.bound_ratio = std::max(path.bound_ratio, w[i] * u[i].norm() / nxi);
    }
    if (path.bound_ratio > 1.0 + 1e-9) {
        std::ostringstream os;
        os << "solve_u: |u(t)| exceeds 2K(h(t)/h(s))^a mu(s)^eps |xi| by the factor " << path.bound_ratio;
        throw NumericalError(os.str(), s);
    }
    return path;
}

TransformResult ManifoldSolver::graph_transform(const ManifoldGraph& phi, const Param& lambda) const {
    TransformResult res;
    res.graph = phi;
    const std::size_t S = phi.slices(), N = phi.nodes_per_slice();
    const Eigen::Index n = op_->dim();
    std::vector<double> contraction(S * N, 0.0);
    std::vector<int> iterations(S * N, 0);
    parallel_for(S * N, [&](std::size_t job) {
        const std::size_t j = job / N, k = job % N;
        const Vec xi = phi.node_effective(j, k);
        Vec& out = res.graph.value(j, k);
        if (xi.norm() == 0.0 || j + 1 == S) {
            out = Vec::Zero(n);
            return;
        }
        const double s = phi.s(j);
        const UPath path = solve_u(phi, lambda, s, xi);
        contraction[job] = path.contraction;
        iterations[job] = path.iterations;
        const std::size_t a = grid_->index_of(s), b = a + path.t.size() - 1;
        std::vector<Mat> g(path.t.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Vec& ui = path.u[i];
            g[i] = Q_[a + i] * problem_.f(path.t[i], Vec(ui + phi(path.t[i], ui)), lambda);
        }
        const std::vector<Mat> w = backward_accumulate(*grid_, a, b, Mat::Zero(n, 1), g, &Q_);
        out = -w.front().col(0);
    });
    res.distance = graph_distance(res.graph, phi);
    res.inner_contraction = *std::max_element(contraction.begin(), contraction.end());
    res.inner_iterations = *std::max_element(iterations.begin(), iterations.end());
    return res;
}

ManifoldSolution ManifoldSolver::solve(const Param& lambda) const {
    if (!hyp_.pass) {
        std::ostringstream os;
        os << "manifold hypotheses fail:";
        if (!hyp_.smallness_ok) os << " smallness (6^{q+1}cK^{q+1} = " << hyp_.constants.smallness << ")";
        if (!hyp_.origin_ok) os << " f(t,0) != 0";
        if (!hyp_.c2_ok) os << " (c2)";
        if (!hyp_.c3_ok) os << " (c3) worst increase " << hyp_.c3_worst_increase;
        throw PreconditionError(os.str());
    }
    if (origin_residual(problem_.f, {0.0, 1.0}, {lambda}) > 1e-14)
        throw PreconditionError("manifold: f(t,0,lambda) != 0");
    ManifoldSolution sol;
    sol.graph = zero_graph();
    double prev = -1.0;
    for (int it = 1; it <= opts_.max_iter; ++it) {
        TransformResult tr = graph_transform(sol.graph, lambda);
        sol.graph = std::move(tr.graph);
        sol.sweeps = it;
        sol.distances.push_back(tr.distance);
        sol.inner_contraction = std::max(sol.inner_contraction, tr.inner_contraction);
        sol.inner_iterations = std::max(sol.inner_iterations, tr.inner_iterations);
        if (prev > 100.0 * opts_.fp_tol) sol.outer_contraction = std::max(sol.outer_contraction, tr.distance / prev);
        if (tr.distance < opts_.fp_tol) return sol;
        prev = tr.distance;
    }
    std::ostringstream os;
    os << "manifold: graph transform did not converge in " << opts_.max_iter
       << " sweeps (last contraction estimate " << sol.outer_contraction << ")";
    throw NumericalError(os.str());
}

std::vector<ManifoldSample> default_samples(const ManifoldSolver& solver, const std::vector<double>& starts,
                                            const std::vector<double>& fractions) {
    std::vector<ManifoldSample> out;
    for (double s : starts) {
        const Mat E = range_basis(solver.problem().spec.P.P(s));
        const double r = solver.invariant_radius(s);
        for (Eigen::Index d = 0; d < E.cols(); ++d)
            for (double fr : fractions)
                for (double sign : {1.0, -1.0}) out.push_back({s, Vec(sign * fr * r * E.col(d))});
    }
    return out;
}

InvarianceReport invariance_check(const ManifoldSolver& solver, const ManifoldGraph& phi, const Param& lambda,
                                  const std::vector<ManifoldSample>& samples, const std::vector<double>& kappas,
                                  double tol, double offset) {
    const ManifoldProblem& pb = solver.problem();
    InvarianceReport rep;
    rep.kappas = kappas;
    rep.tol = tol;
    rep.per_kappa.assign(kappas.size(), 0.0);
    const double last = phi.s(phi.slices() - 1);
    const double fp = solver.options().fp_tol;
    std::vector<std::vector<double>> res(samples.size(), std::vector<double>(kappas.size(), -1.0));
    parallel_for(samples.size(), [&](std::size_t i) {
        const ManifoldSample& smp = samples[i];
        Vec x0 = smp.xi + phi(smp.s, smp.xi);
        if (offset != 0.0) {
            const Mat F = range_basis(pb.spec.P.Q(smp.s));
            if (F.cols() > 0) x0 += offset * F.col(0);
        }
        std::vector<double> times;
        std::vector<std::size_t> which;
        for (std::size_t k = 0; k < kappas.size(); ++k)
            if (smp.s + kappas[k] <= last + 1e-12) {
                times.push_back(smp.s + kappas[k]);
                which.push_back(k);
            }
        if (times.empty()) return;
        const std::vector<Vec> X = solver.op().nonlinear_path(times, smp.s, x0, pb.f, lambda);
        for (std::size_t m = 0; m < times.size(); ++m) {
            const Mat P = pb.spec.P.P(times[m]);
            const Vec u = P * X[m];
            const Vec v = X[m] - u;
            res[i][which[m]] = (v - phi(times[m], u)).norm() / (smp.xi.norm() + fp);
        }
    });
    for (const auto& row : res)
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (row[k] < 0.0) {
                ++rep.outside;
                continue;
            }
            ++rep.checked;
            rep.per_kappa[k] = std::max(rep.per_kappa[k], row[k]);
            rep.max_residual = std::max(rep.max_residual, row[k]);
        }
    rep.pass = rep.checked > 0 && rep.max_residual <= tol;
    return rep;
}

LipschitzReport lipschitz_checks(const ManifoldSolver& solver, const ManifoldGraph& phi, const Param& lambda,
                                 const std::vector<ManifoldSample>& samples, const std::vector<double>& kappas) {
    const ManifoldProblem& pb = solver.problem();
    const DichotomySpec& spec = pb.spec;
    LipschitzReport rep;
    rep.d_bound = solver.constants().d_bound;

    const double s_top = solver.options().s_eval + solver.options().kappa_max;
    std::vector<double> lip(phi.slices(), 0.0), leak(phi.slices(), 0.0);
    parallel_for(phi.slices(), [&](std::size_t j) {
        const Mat P = spec.P.P(phi.s(j));
        for (std::size_t k = 0; k < phi.nodes_per_slice(); ++k) leak[j] = std::max(leak[j], (P * phi.value(j, k)).norm());
        if (phi.s(j) > s_top + 1e-9) return;
        for (std::size_t k1 = 0; k1 < phi.nodes_per_slice(); ++k1) {
            const Vec x1 = phi.node_effective(j, k1);
            for (std::size_t k2 = k1 + 1; k2 < phi.nodes_per_slice(); ++k2) {
                const double dx = (phi.node_effective(j, k2) - x1).norm();
                if (dx <= 1e-14) continue;
                lip[j] = std::max(lip[j], (phi.value(j, k1) - phi.value(j, k2)).norm() / dx);
            }
        }
    });
    rep.graph_lipschitz = *std::max_element(lip.begin(), lip.end());
    rep.max_proj_leak = *std::max_element(leak.begin(), leak.end());

    const double last = phi.s(phi.slices() - 1);
    std::vector<std::vector<Vec>> flows(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        const ManifoldSample& smp = samples[i];
        std::vector<double> times;
        for (double k : kappas) times.push_back(std::min(smp.s + k, last));
        flows[i] = solver.op().nonlinear_path(times, smp.s, Vec(smp.xi + phi(smp.s, smp.xi)), pb.f, lambda);
    });
    const LogRates lr{spec.rates};
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
            if (samples[i].s != samples[j].s) continue;
            const double dxi = (samples[i].xi - samples[j].xi).norm();
            if (dxi == 0.0) continue;
            const double s = samples[i].s;
            for (std::size_t k = 0; k < kappas.size(); ++k) {
                const double t = std::min(s + kappas[k], last);
                const double scale = std::exp(spec.a * (lr.lh(t) - lr.lh(s)) + spec.eps * lr.lmu(s));
                const Vec d = flows[i][k] - flows[j][k];
                const double ratio = sum_norm(spec.P.P(t), spec.P.Q(t), d) / (scale * dxi);
                rep.d = std::max(rep.d, ratio);
            }
        }
    rep.graph_ok = rep.graph_lipschitz <= 1.0 + 1e-12 && rep.max_proj_leak <= 1e-9;
    rep.d_ok = rep.d <= rep.d_bound;
    rep.pass = rep.graph_ok && rep.d_ok;
    return rep;
}

ManifoldLambdaSweep manifold_lambda_sweep(const ManifoldSolver& solver, const std::vector<double>& lambdas,
                                          const std::vector<ManifoldSample>& samples,
                                          const std::vector<double>& kappas) {
    if (lambdas.size() < 3) throw PreconditionError("manifold_lambda_sweep: need at least three values");
    const ManifoldProblem& pb = solver.problem();
    const DichotomySpec& spec = pb.spec;
    ManifoldLambdaSweep out;
    out.lambdas = lambdas;
    out.d_star_bound = solver.constants().d_star_bound;
    const std::size_t L = lambdas.size();
    for (double lam : lambdas) out.solutions.push_back(solver.solve(Param::Constant(1, lam)));

    const double last = solver.s_max();
    std::vector<std::vector<std::vector<Vec>>> flows(L, std::vector<std::vector<Vec>>(samples.size()));
    parallel_for(L * samples.size(), [&](std::size_t job) {
        const std::size_t li = job / samples.size(), i = job % samples.size();
        const ManifoldSample& smp = samples[i];
        const ManifoldGraph& g = out.solutions[li].graph;
        std::vector<double> times;
        for (double k : kappas) times.push_back(std::min(smp.s + k, last));
        flows[li][i] = solver.op().nonlinear_path(times, smp.s, Vec(smp.xi + g(smp.s, smp.xi)), pb.f,
                                                  Param::Constant(1, lambdas[li]));
    });

    const LogRates lr{spec.rates};
    out.flow_distance.assign(L, 0.0);
    out.graph_distance.assign(L, 0.0);
    const double H = solver.constants().H;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t li = 1; li < L; ++li) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const double s = samples[i].s, nxi = samples[i].xi.norm();
            if (nxi == 0.0) continue;
            for (std::size_t k = 0; k < kappas.size(); ++k) {
                const double t = std::min(s + kappas[k], last);
                const double scale = std::exp(spec.a * (lr.lh(t) - lr.lh(s)) + spec.eps * lr.lmu(s));
                const Vec d = flows[li][i][k] - flows[0][i][k];
                out.flow_distance[li] =
                    std::max(out.flow_distance[li], sum_norm(spec.P.P(t), spec.P.Q(t), d) / (scale * nxi));
            }
        }
        out.graph_distance[li] = graph_distance(out.solutions[li].graph, out.solutions[0].graph);
        const double dl = std::abs(lambdas[li] - lambdas[0]);
        if (dl > 0.0) {
            out.d_star = std::max(out.d_star, out.flow_distance[li] / dl);
            out.H_ratio = std::max(out.H_ratio, out.graph_distance[li] / (H * dl));
        }
        sxy += dl * out.flow_distance[li];
        sxx += dl * dl;
    }
    out.slope = sxx > 0.0 ? sxy / sxx : 0.0;
    double num = 0.0, den = 0.0;
    for (std::size_t li = 1; li < L; ++li) {
        const double dl = std::abs(lambdas[li] - lambdas[0]);
        num += std::pow(out.flow_distance[li] - out.slope * dl, 2);
        den += std::pow(out.flow_distance[li], 2);
    }
    out.regression_residual = den > 0.0 ? std::sqrt(num / den) : 0.0;
    out.linear_ok = std::isfinite(out.d_star) && out.regression_residual <= 0.1;
    return out;
}

ManifoldCertificate certify_manifold(const ManifoldSolver& solver, const ManifoldSolution& sol,
                                     const Param& lambda, const std::vector<ManifoldSample>& samples,
                                     const std::vector<double>& kappas, double inv_tol) {
    ManifoldCertificate c;
    c.constants = solver.constants();
    c.sweeps = sol.sweeps;
    c.outer_contraction = sol.outer_contraction;
    c.inner_contraction = sol.inner_contraction;
    c.outer_ok = sol.outer_contraction <= c.constants.outer_theory + solver.options().contraction_slack;
    c.invariance = invariance_check(solver, sol.graph, lambda, samples, kappas, inv_tol);
    c.lipschitz = lipschitz_checks(solver, sol.graph, lambda, samples, kappas);
    c.pass = solver.hypotheses().pass && c.outer_ok && c.invariance.pass && c.lipschitz.pass;
    return c;
}

} // namespace gdich
