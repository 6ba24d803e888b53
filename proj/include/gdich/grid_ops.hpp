#pragma once

#include "gdich/core.hpp"
#include "gdich/evolution.hpp"

#include <array>
#include <vector>

namespace gdich {

/// Uniform grid t_j = t0 + j·h (j = 0..steps) with one-step evolution
/// operators in both directions. Backward steps are integrated backward.
class GridPropagator {
public:
    GridPropagator(const EvolutionOperator& op, double t0, double h, std::size_t steps);

    std::size_t size() const noexcept { return fwd_.size() + 1; }
    double step() const noexcept { return h_; }
    double time(std::size_t j) const noexcept { return t0_ + static_cast<double>(j) * h_; }
    double start() const noexcept { return t0_; }
    double end() const noexcept { return time(size() - 1); }
    int dim() const noexcept { return n_; }

    /// T(t_{j+1}, t_j).
    const Mat& fwd(std::size_t j) const { return fwd_[j]; }
    /// T(t_j, t_{j+1}).
    const Mat& bwd(std::size_t j) const { return bwd_[j]; }

    /// Node index of t; throws PreconditionError unless t is a node (1e-9 slack).
    std::size_t index_of(double t) const;
    bool is_node(double t) const;

    /// Linear flow T(t_j, t_a)·x0 for j in [lo, hi] (a in [lo, hi]), by stepping.
    std::vector<Mat> flow(std::size_t a, const Mat& x0, std::size_t lo, std::size_t hi) const;

    /// Nodes where integrands may be non-smooth; quadrature stencils do not cross them.
    /// Times that are not nodes are ignored.
    void set_kinks(const std::vector<double>& times);
    const std::vector<std::size_t>& kinks() const noexcept { return kinks_; }

private:
    double t0_;
    double h_;
    int n_;
    std::vector<Mat> fwd_;
    std::vector<Mat> bwd_;
    std::vector<std::size_t> kinks_;
};

/// Optional per-node projections applied after every step.
using NodeProjections = std::vector<Mat>;

/// y_j = T(t_j,t_a)·y0 + ∫_{t_a}^{t_j} T(t_j,τ)g(τ)dτ for j = a..b.
/// g is sampled on nodes a..b (g[i] at node a+i). Fourth-order local rule on
/// each step with values propagated by the step operators.
std::vector<Mat> forward_accumulate(const GridPropagator& grid, std::size_t a, std::size_t b,
                                    const Mat& y0, const std::vector<Mat>& g,
                                    const NodeProjections* proj = nullptr);

/// w_j = T(t_j,t_b)·w0 + ∫_{t_j}^{t_b} T(t_j,τ)g(τ)dτ for j = a..b.
std::vector<Mat> backward_accumulate(const GridPropagator& grid, std::size_t a, std::size_t b,
                                     const Mat& w0, const std::vector<Mat>& g,
                                     const NodeProjections* proj = nullptr);

/// Weights of the cumulative fourth-order rule on the step [j, j+1] given
/// which neighbours exist; exposed for tests.
struct LocalRule {
    int first;                  ///< offset of the first node relative to j
    std::array<double, 4> w;    ///< multiply by h
};
LocalRule local_rule(std::size_t j, std::size_t a, std::size_t b);

} // namespace gdich
