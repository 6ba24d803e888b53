#include "gdich/grid_ops.hpp"
#include "gdich/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gdich {

GridPropagator::GridPropagator(const EvolutionOperator& op, double t0, double h, std::size_t steps)
    : t0_(t0), h_(h), n_(op.dim()), fwd_(steps), bwd_(steps) {
    if (!(h > 0.0) || steps == 0) throw PreconditionError("grid: step must be positive and steps >= 1");
    const Mat id = eye(n_);
    parallel_for(steps, [&](std::size_t j) {
        const double a = time(j), b = time(j + 1);
        fwd_[j] = op.integrate(a, b, id);
        bwd_[j] = op.integrate(b, a, id);
    });
}

bool GridPropagator::is_node(double t) const {
    const double x = (t - t0_) / h_;
    const double r = std::round(x);
    return std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x)) && r >= 0.0 &&
           r <= static_cast<double>(size() - 1);
}

std::size_t GridPropagator::index_of(double t) const {
    if (!is_node(t)) {
        std::ostringstream os;
        os << "grid: t=" << t << " is not a grid node";
        throw PreconditionError(os.str());
    }
    return static_cast<std::size_t>(std::lround((t - t0_) / h_));
}

std::vector<Mat> GridPropagator::flow(std::size_t a, const Mat& x0, std::size_t lo,
                                      std::size_t hi) const {
    std::vector<Mat> out(hi - lo + 1);
    out[a - lo] = x0;
    for (std::size_t j = a; j < hi; ++j) out[j + 1 - lo] = fwd_[j] * out[j - lo];
    for (std::size_t j = a; j > lo; --j) out[j - 1 - lo] = bwd_[j - 1] * out[j - lo];
    return out;
}

void GridPropagator::set_kinks(const std::vector<double>& times) {
    kinks_.clear();
    for (double t : times)
        if (is_node(t)) kinks_.push_back(index_of(t));
    std::sort(kinks_.begin(), kinks_.end());
    kinks_.erase(std::unique(kinks_.begin(), kinks_.end()), kinks_.end());
}

LocalRule local_rule(std::size_t j, std::size_t a, std::size_t b) {
    const std::size_t span = b - a;
    if (span == 1) return {0, {0.5, 0.5, 0.0, 0.0}};
    if (span == 2) {
        if (j == a) return {0, {5.0 / 12, 8.0 / 12, -1.0 / 12, 0.0}};
        return {-1, {-1.0 / 12, 8.0 / 12, 5.0 / 12, 0.0}};
    }
    if (j == a) return {0, {9.0 / 24, 19.0 / 24, -5.0 / 24, 1.0 / 24}};
    if (j + 1 == b) return {-2, {1.0 / 24, -5.0 / 24, 19.0 / 24, 9.0 / 24}};
    return {-1, {-1.0 / 24, 13.0 / 24, 13.0 / 24, -1.0 / 24}};
}

namespace {

Mat transport(const GridPropagator& grid, std::size_t m, std::size_t target, Mat x) {
    while (m < target) {
        x = grid.fwd(m) * x;
        ++m;
    }
    while (m > target) {
        x = grid.bwd(m - 1) * x;
        --m;
    }
    return x;
}

/// Rule for step [j, j+1] restricted to the smooth piece containing it.
LocalRule piece_rule(const GridPropagator& grid, std::size_t j, std::size_t a, std::size_t b) {
    std::size_t lo = a, hi = b;
    for (std::size_t k : grid.kinks()) {
        if (k <= j && k > lo) lo = k;
        if (k >= j + 1 && k < hi) hi = k;
    }
    return local_rule(j, lo, hi);
}

void check_range(const GridPropagator& grid, std::size_t a, std::size_t b, std::size_t gsize) {
    if (!(a < b) || b >= grid.size())
        throw PreconditionError("accumulate: need a < b inside the grid");
    if (gsize != b - a + 1) throw PreconditionError("accumulate: integrand samples do not match range");
}

} // namespace

std::vector<Mat> forward_accumulate(const GridPropagator& grid, std::size_t a, std::size_t b,
                                    const Mat& y0, const std::vector<Mat>& g,
                                    const NodeProjections* proj) {
    check_range(grid, a, b, g.size());
    const double h = grid.step();
    std::vector<Mat> y(b - a + 1);
    y[0] = y0;
    if (proj) y[0] = (*proj)[a] * y[0];
    for (std::size_t j = a; j < b; ++j) {
        const LocalRule rule = piece_rule(grid, j, a, b);
        Mat acc = grid.fwd(j) * y[j - a];
        for (int i = 0; i < 4; ++i) {
            if (rule.w[static_cast<std::size_t>(i)] == 0.0) continue;
            const auto m = static_cast<std::size_t>(static_cast<long>(j) + rule.first + i);
            acc += (h * rule.w[static_cast<std::size_t>(i)]) * transport(grid, m, j + 1, g[m - a]);
        }
        if (proj) acc = (*proj)[j + 1] * acc;
        y[j + 1 - a] = std::move(acc);
    }
    return y;
}

std::vector<Mat> backward_accumulate(const GridPropagator& grid, std::size_t a, std::size_t b,
                                     const Mat& w0, const std::vector<Mat>& g,
                                     const NodeProjections* proj) {
    check_range(grid, a, b, g.size());
    const double h = grid.step();
    std::vector<Mat> w(b - a + 1);
    w[b - a] = w0;
    if (proj) w[b - a] = (*proj)[b] * w[b - a];
    for (std::size_t j = b; j-- > a;) {
        const LocalRule rule = piece_rule(grid, j, a, b);
        Mat acc = grid.bwd(j) * w[j + 1 - a];
        for (int i = 0; i < 4; ++i) {
            if (rule.w[static_cast<std::size_t>(i)] == 0.0) continue;
            const auto m = static_cast<std::size_t>(static_cast<long>(j) + rule.first + i);
            acc += (h * rule.w[static_cast<std::size_t>(i)]) * transport(grid, m, j, g[m - a]);
        }
        if (proj) acc = (*proj)[j] * acc;
        w[j - a] = std::move(acc);
    }
    return w;
}

} // namespace gdich
