#include "gdich/system.hpp"
#include "gdich/csv.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gdich {

// ---- projections and spec ------------------------------------------------

ProjectionFamily ProjectionFamily::constant(const Mat& p) {
    if (p.rows() != p.cols() || p.rows() == 0)
        throw PreconditionError("projection must be a nonempty square matrix");
    if ((p * p - p).norm() > 1e-10 * std::max(1.0, p.norm()))
        throw PreconditionError("constant projection is not idempotent");
    const int rank = static_cast<int>(std::lround(p.trace()));
    return ProjectionFamily([p](double) { return p; }, static_cast<int>(p.rows()), rank, true);
}

ProjectionFamily ProjectionFamily::analytic(Fn fn, int dim, int rank) {
    if (dim <= 0 || rank < 0 || rank > dim)
        throw PreconditionError("projection family: invalid dim/rank");
    return ProjectionFamily(std::move(fn), dim, rank, false);
}

Mat ProjectionFamily::P(double t) const { return fn_(t); }

Mat ProjectionFamily::Q(double t) const { return eye(dim_) - fn_(t); }

void DichotomySpec::validate() const {
    std::ostringstream os;
    if (!(a < 0.0)) os << "a must be negative; ";
    if (!(b >= 0.0)) os << "b must be nonnegative; ";
    if (!(K > 0.0)) os << "K must be positive; ";
    if (!(eps >= 0.0)) os << "eps must be nonnegative; ";
    if (!os.str().empty()) throw PreconditionError("dichotomy constants: " + os.str());
}

// ---- coefficient fields --------------------------------------------------

bool CoefficientField::in_domain(double t) const noexcept {
    if (domain == Domain::HalfLine && t < 0.0) return false;
    return t >= support_lo && t <= support_hi;
}

Mat CoefficientField::operator()(double t) const {
    if (!in_domain(t)) {
        std::ostringstream os;
        os << "field '" << name << "': t=" << t << " outside domain";
        throw DomainError(os.str());
    }
    return fn(t);
}

CoefficientField make_field(std::string name, int dim, std::function<Mat(double)> fn,
                            Domain domain, std::vector<double> breakpoints) {
    if (dim < 1 || dim > kMaxDim) throw PreconditionError("field dimension must be in 1..16");
    CoefficientField f;
    f.dim = dim;
    f.fn = std::move(fn);
    f.domain = domain;
    f.name = std::move(name);
    f.breakpoints = std::move(breakpoints);
    return f;
}

CoefficientField const_matrix(const Mat& a, std::string name) {
    if (a.rows() != a.cols()) throw PreconditionError("coefficient matrix must be square");
    return make_field(std::move(name), static_cast<int>(a.rows()), [a](double) { return a; });
}

CoefficientField const_diag(const std::vector<double>& diag) {
    Vec d = Eigen::Map<const Vec>(diag.data(), static_cast<Eigen::Index>(diag.size()));
    return const_matrix(d.asDiagonal(), "const_diag");
}

CoefficientField tabulated_field(const std::vector<double>& t, const std::vector<Mat>& a) {
    if (t.size() != a.size() || t.size() < 2)
        throw ConfigError("tabulated field: need at least two samples");
    for (std::size_t i = 1; i < t.size(); ++i)
        if (!(t[i] > t[i - 1])) throw ConfigError("tabulated field: times must be strictly increasing");
    const int n = static_cast<int>(a.front().rows());
    auto ts = std::make_shared<const std::vector<double>>(t);
    auto as = std::make_shared<const std::vector<Mat>>(a);
    CoefficientField f = make_field(
        "tabulated", n,
        [ts, as](double x) -> Mat {
            const auto& tt = *ts;
            auto it = std::upper_bound(tt.begin(), tt.end(), x);
            std::size_t j = static_cast<std::size_t>(std::distance(tt.begin(), it));
            if (j == 0) return (*as)[0];
            if (j >= tt.size()) return as->back();
            const double w = (x - tt[j - 1]) / (tt[j] - tt[j - 1]);
            return (1.0 - w) * (*as)[j - 1] + w * (*as)[j];
        },
        t.front() >= 0.0 ? Domain::HalfLine : Domain::FullLine, t);
    f.support_lo = t.front();
    f.support_hi = t.back();
    return f;
}

CoefficientField tabulated_field_from_csv(const std::string& path) {
    CsvTable table = read_csv(path);
    const std::size_t cols = table.header.size();
    if (cols < 2) throw ConfigError(path + ": expected columns t,a11,...");
    const auto n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cols - 1))));
    if (static_cast<std::size_t>(n * n) + 1 != cols || n > kMaxDim)
        throw ConfigError(path + ": column count is not 1 + n*n with n <= 16");
    std::vector<double> t;
    std::vector<Mat> a;
    for (const auto& row : table.rows) {
        t.push_back(row[0]);
        Mat m(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) m(i, j) = row[1 + static_cast<std::size_t>(i * n + j)];
        a.push_back(std::move(m));
    }
    return tabulated_field(t, a);
}

CoefficientField adjoint(const CoefficientField& field) {
    CoefficientField out = field;
    auto fn = field.fn;
    out.fn = [fn](double t) -> Mat { return -fn(t).transpose(); };
    out.name = "adjoint(" + field.name + ")";
    return out;
}

CoefficientField add(const CoefficientField& field, std::function<Mat(double)> b,
                     std::string name) {
    CoefficientField out = field;
    auto fn = field.fn;
    out.fn = [fn, b = std::move(b)](double t) -> Mat { return fn(t) + b(t); };
    out.name = name.empty() ? field.name + "+B" : std::move(name);
    return out;
}

BlockSystem BlockSystem::make(CoefficientField w1, CoefficientField w2) {
    if (w1.dim + w2.dim > kMaxDim) throw PreconditionError("block system dimension exceeds 16");
    BlockSystem bs{std::move(w1), std::move(w2), 0};
    bs.split = bs.W1.dim;
    return bs;
}

CoefficientField BlockSystem::full() const {
    const int l = W1.dim, n = W1.dim + W2.dim;
    auto f1 = W1.fn, f2 = W2.fn;
    CoefficientField out = make_field(
        "block(" + W1.name + "," + W2.name + ")", n,
        [f1, f2, l, n](double t) -> Mat {
            Mat a = Mat::Zero(n, n);
            a.topLeftCorner(l, l) = f1(t);
            a.bottomRightCorner(n - l, n - l) = f2(t);
            return a;
        },
        (W1.domain == Domain::HalfLine || W2.domain == Domain::HalfLine) ? Domain::HalfLine
                                                                         : Domain::FullLine);
    out.breakpoints = W1.breakpoints;
    out.breakpoints.insert(out.breakpoints.end(), W2.breakpoints.begin(), W2.breakpoints.end());
    out.support_lo = std::max(W1.support_lo, W2.support_lo);
    out.support_hi = std::min(W1.support_hi, W2.support_hi);
    return out;
}

Mat BlockSystem::block_projection() const {
    const int n = W1.dim + W2.dim;
    Mat p = Mat::Zero(n, n);
    p.topLeftCorner(split, split).setIdentity();
    return p;
}

// ---- parameters and nonlinear terms --------------------------------------

void ParameterSpace::validate() const {
    if (lo.size() != hi.size()) throw PreconditionError("parameter box: bound sizes differ");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
        if (!(lo(i) < hi(i))) throw PreconditionError("parameter box: lo must be below hi");
}

bool ParameterSpace::contains(const Param& p) const {
    if (p.size() != lo.size()) return false;
    return ((p.array() >= lo.array()) && (p.array() <= hi.array())).all();
}

NonlinearTerm NonlinearTerm::zero(int dim, LipschitzKind kind) {
    NonlinearTerm f;
    f.dim = dim;
    f.fn = [dim](double, const Vec&, const Param&) -> Vec { return Vec::Zero(dim); };
    f.kind = kind;
    f.name = "zero";
    return f;
}

double origin_residual(const NonlinearTerm& f, const std::vector<double>& ts,
                       const std::vector<Param>& lambdas) {
    double worst = 0.0;
    const Vec zero = Vec::Zero(f.dim);
    std::vector<Param> ls = lambdas.empty() ? std::vector<Param>{Param()} : lambdas;
    for (double t : ts)
        for (const auto& l : ls) worst = std::max(worst, f(t, zero, l).norm());
    return worst;
}

// ---- worked example --------------------------------------------------------

namespace {

// G(u) = u(sin u − 1) + cos u, so that d/dt η G(log μ̂) = ζ.
double oscillation(double u) { return u * (std::sin(u) - 1.0) + std::cos(u); }

GrowthRate nonuniform_rate(const GrowthRate& hat) {
    if (hat.name() != "expabs") return hat;
    std::map<std::string, double> ps;
    for (const auto& p : hat.params()) ps[p.name] = p.value;
    return builtin("exp", ps);
}

bool has_kink_at_zero(const GrowthRate& r) { return r.name() == "expabs"; }

} // namespace

Example22 make_example22(const Example22Params& p, Domain requested) {
    if (!(p.eta1 > 0.0) || !(p.eta2 >= 0.0) || !(p.eta3 > 0.0))
        throw PreconditionError("example22: eta1, eta3 must be positive and eta2 nonnegative");
    const RateQuadruple& hats = p.hats;
    const Domain dom = hats.domain();
    if (requested == Domain::FullLine && dom == Domain::HalfLine)
        throw DomainError("example22: half-line hats cannot serve a full-line system");

    const double e1 = p.eta1, e2 = p.eta2, e3 = p.eta3;
    auto fn = [hats, e1, e2, e3](double t) -> Mat {
        auto zeta = [e2, t](const GrowthRate& r) {
            const double u = r.log_eval(t);
            return e2 * r.dlog(t) * (u * std::cos(u) - 1.0);
        };
        Mat a = Mat::Zero(2, 2);
        a(0, 0) = -e1 * hats.h.dlog(t) + zeta(hats.mu);
        a(1, 1) = e3 * hats.k.dlog(t) + zeta(hats.nu);
        return a;
    };
    std::vector<double> kinks;
    if (has_kink_at_zero(hats.mu) || has_kink_at_zero(hats.nu) || has_kink_at_zero(hats.h) ||
        has_kink_at_zero(hats.k))
        kinks.push_back(0.0);

    CoefficientField field = make_field("example22", 2, fn, requested, kinks);
    auto analytic = [hats, e1, e2, e3](double t, double s) -> Mat {
        const double g1 = -e1 * (hats.h.log_eval(t) - hats.h.log_eval(s)) +
                          e2 * (oscillation(hats.mu.log_eval(t)) - oscillation(hats.mu.log_eval(s)));
        const double g2 = e3 * (hats.k.log_eval(t) - hats.k.log_eval(s)) +
                          e2 * (oscillation(hats.nu.log_eval(t)) - oscillation(hats.nu.log_eval(s)));
        Mat m = Mat::Zero(2, 2);
        m(0, 0) = std::exp(g1);
        m(1, 1) = std::exp(g2);
        return m;
    };
    Mat proj = Mat::Zero(2, 2);
    proj(0, 0) = 1.0;
    DichotomySpec spec{ProjectionFamily::constant(proj),
                       RateQuadruple{hats.h, hats.k, nonuniform_rate(hats.mu),
                                     nonuniform_rate(hats.nu)},
                       std::exp(2.0 * e2), -e1, e3, 2.0 * e2};
    return Example22{std::move(field), std::move(analytic), std::move(spec)};
}

} // namespace gdich
