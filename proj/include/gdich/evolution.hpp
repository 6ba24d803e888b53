#pragma once

#include "gdich/core.hpp"
#include "gdich/system.hpp"

#include <map>
#include <memory>
#include <shared_mutex>

namespace gdich {

struct IntegratorConfig {
    double rel_tol = 1e-9;
    double abs_tol = 1e-12;
    double max_step = 0.5;
    double cell = 1.0;        ///< checkpoint spacing
    double blowup = 1e12;     ///< escape bound for nonlinear flows

    void validate() const;
};

/// Evolution operator T(t,s) of x' = A(t)x. Whole unit cells [kc,(k+1)c] are
/// integrated once in each direction and cached; partial cells are integrated
/// on demand. Backward maps are integrated backward, never inverted.
class EvolutionOperator {
public:
    explicit EvolutionOperator(CoefficientField field, IntegratorConfig cfg = {});

    const CoefficientField& field() const noexcept { return field_; }
    const IntegratorConfig& config() const noexcept { return cfg_; }
    int dim() const noexcept { return field_.dim; }

    Mat evolve(double t, double s) const;

    /// T(t,s)⁻¹Q(t) = T(s,t)Q(t) for t ≥ s ≥ 0.
    Mat evolve_inverse_unstable(double t, double s, const Mat& q_at_t) const;

    /// T(t,s)·x0, applying proj(τ) after each checkpoint crossed. Keeps columns
    /// inside an invariant family when roundoff would otherwise leak into
    /// the complementary, faster-growing directions.
    Mat evolve_projected(double t, double s, const Mat& x0,
                         const std::function<Mat(double)>& proj) const;

    /// Direct integration of X' = A X from (from, x0), no caching.
    Mat integrate(double from, double to, const Mat& x0) const;

    /// X(t, tbar, xi) for x' = A x + f(t,x,λ).
    Vec solve_nonlinear(double t, double tbar, const Vec& xi, const NonlinearTerm& f,
                        const Param& lambda) const;

    /// X(τ, tbar, xi) at every τ in `times` (any order).
    std::vector<Vec> nonlinear_path(const std::vector<double>& times, double tbar, const Vec& xi,
                                    const NonlinearTerm& f, const Param& lambda) const;

    std::size_t cached_cells() const;
    /// Largest 2-norm condition number among cached cell operators.
    double max_cached_condition() const;

private:
    const Mat& cell_op(long k, bool forward) const;
    Mat walk(double t, double s, Mat x, const std::function<Mat(double)>* proj) const;
    void check_domain(double t) const;

    CoefficientField field_;
    IntegratorConfig cfg_;
    struct Cache;
    std::shared_ptr<Cache> cache_;
};

} // namespace gdich
