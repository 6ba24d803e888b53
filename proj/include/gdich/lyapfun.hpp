#pragma once

#include "gdich/core.hpp"
#include "gdich/evolution.hpp"
#include "gdich/quadrature.hpp"
#include "gdich/spec.hpp"

#include <optional>
#include <string>
#include <vector>

namespace gdich {

/// S(t) on a uniform grid; H(t,x) = ⟨S(t)x,x⟩. Linear interpolation between nodes.
class QuadraticLyapunov {
public:
    QuadraticLyapunov(std::vector<double> times, std::vector<Mat> S, double dbar = 0.0);

    const std::vector<double>& times() const noexcept { return t_; }
    const std::vector<Mat>& values() const noexcept { return S_; }
    double dbar() const noexcept { return dbar_; }
    int dim() const noexcept { return static_cast<int>(S_.front().rows()); }
    double step() const noexcept { return t_[1] - t_[0]; }

    Mat S(double t) const;
    double H(double t, const Vec& x) const { return x.dot(S(t) * x); }
    std::size_t index_of(double t) const;

    /// Central difference at node i with the Richardson estimate |D_h − D_2h|/3.
    /// Requires 2 ≤ i ≤ size−3.
    std::pair<Mat, double> derivative(std::size_t i) const;

    double max_asymmetry() const;
    double min_abs_eigenvalue() const;

private:
    std::vector<double> t_;
    std::vector<Mat> S_;
    double dbar_;
};

struct LyapunovBuild {
    std::optional<QuadraticLyapunov> lyap;
    std::vector<double> norm_bound_ratio;  ///< ‖S(t)‖ / ((K²/2d̄)(μ^{2ε} + ν^{2ε}))
    double worst_norm_bound_ratio = 0.0;
    std::vector<double> stable_cutoff;     ///< upper truncation of the stable integral
    std::vector<double> unstable_cutoff;   ///< lower truncation of the unstable integral
};

/// S(t) = ∫_t^∞ T(v,t)ᵀP(v)ᵀP(v)T(v,t)(h(v)/h(t))^{−2(a+d̄)}(h'/h)(v)dv
///      − ∫_{−∞}^t T(v,t)ᵀQ(v)ᵀQ(v)T(v,t)(k(t)/k(v))^{2(b−d̄)}(k'/k)(v)dv.
/// Tails cut where the dichotomy envelope (h(V)/h(t))^{−2d̄} falls below quad.tail_tol.
LyapunovBuild construct_S(const DichotomySpec& spec, const EvolutionOperator& op, double dbar,
                          const std::vector<double>& grid, const QuadConfig& quad = {});

enum class RhsForm { Identity, Necessity };

struct DerivativeReport {
    std::vector<double> t;
    std::vector<double> max_eig;      ///< of S' + SA + AᵀS + RHS
    std::vector<double> fd_error;
    double worst = -std::numeric_limits<double>::infinity();
    double margin = 0.0;              ///< −worst
    double tol = 1e-8;
    bool pass = false;
};

/// Throws PreconditionError when the finite-difference error estimate exceeds |max eig|.
DerivativeReport derivative_condition(const QuadraticLyapunov& lyap, const CoefficientField& A,
                                      RhsForm form, const DichotomySpec* spec = nullptr,
                                      double tol = 1e-8);

enum class VectorClass { Stable, Unstable, Undetermined };
std::string to_string(VectorClass c);

/// Signs of H(t, T(t,τ)x) on lyapunov grid nodes in (τ, τ + horizon];
/// |H| ≤ margin·‖T(t,τ)x‖² counts as undetermined.
VectorClass classify(const QuadraticLyapunov& lyap, const EvolutionOperator& op, double tau,
                     const Vec& x, double horizon, double margin = 1e-8);

struct LyapunovHypotheses {
    double eta1 = 1.0;
    double eta2 = 1.0;
    double dhat = 1.0;
    double k1 = 0.0;
    double k2 = 0.0;
    double l1 = 1.0;
    double l2 = 1.0;
};

struct DecayReport {
    std::size_t stable_samples = 0;
    std::size_t unstable_samples = 0;
    std::size_t undetermined = 0;
    double diff_slack_stable = std::numeric_limits<double>::infinity();    ///< min over orbits, normalized by ‖y‖²
    double diff_slack_unstable = std::numeric_limits<double>::infinity();
    double gronwall_slack_stable = std::numeric_limits<double>::infinity(); ///< min of 1 − H(t)/bound
    double gronwall_slack_unstable = std::numeric_limits<double>::infinity();
    double local_ratio_stable = 0.0;    ///< max ‖U(t,τ)‖ / (l̂₁μ(t)^{k̂₁})
    double local_ratio_unstable = 0.0;
    double lower_bound_ratio = std::numeric_limits<double>::infinity(); ///< min |H(τ,x)| / ((d̂/l̂₁²)μ(τ)^{−2k̂₁}‖x‖²) on stable x
    bool iv_applies = false;
    bool iv_pass = true;
    double nu_side_min_ratio = std::numeric_limits<double>::infinity();  ///< min of (k(t)/k(τ)) / (ν(t)/ν(τ)), report only
    std::size_t split_dim_stable = 0;
    std::size_t split_dim_unstable = 0;
    double tol = 1e-6;
    bool differential_pass = false;
    bool gronwall_pass = false;
    bool local_pass = false;
    bool pass = false;
};

/// τ values must be grid nodes of `lyap`; orbits sampled on nodes up to τ + horizon.
DecayReport decay_inequalities(const QuadraticLyapunov& lyap, const DichotomySpec& spec,
                               const EvolutionOperator& op, const LyapunovHypotheses& hyp,
                               const std::vector<double>& taus, const std::vector<Vec>& samples,
                               double horizon, double tol = 1e-6);

/// Minimum eigenvalue of P*P h'/h + Q*Q k'/k − Id over the grid.
double corollary_condition(const DichotomySpec& spec, const std::vector<double>& grid);

} // namespace gdich
