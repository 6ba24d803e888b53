#pragma once

#include "gdich/core.hpp"
#include "gdich/evolution.hpp"
#include "gdich/grid_ops.hpp"
#include "gdich/quadrature.hpp"
#include "gdich/spec.hpp"
#include "gdich/system.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace gdich {

struct ManifoldProblem {
    DichotomySpec spec;                   ///< used on t ≥ 0 only
    NonlinearTerm f;                      ///< ĉ = f.chat, q = f.q
    ParameterSpace Y;                     ///< may be empty
    std::optional<double> radius_override;  ///< constant ball radius, required when ε = 0
};

/// C(t), β(t), the ball radius β(t)^{−ε} and the radius (β(t)μ(t))^{−ε}/2K on a grid.
struct RadiusFunction {
    std::vector<double> s;
    std::vector<double> C;
    std::vector<double> log_beta;
    std::vector<double> radius;     ///< β^{−ε}
    std::vector<double> radius_bm;  ///< (βμ)^{−ε}/2K
    bool constant = false;          ///< ε = 0 with an override radius
};

/// Throws PreconditionError for q ≤ 0, for ε = 0 without an override and when C diverges.
RadiusFunction compute_radius(const ManifoldProblem& problem, const std::vector<double>& s,
                              const QuadConfig& quad = {});

struct ManifoldConstants {
    double smallness = 0.0;      ///< 6^{q+1}ĉK^{q+1}
    double K1 = 0.0;             ///< K/(1 − smallness)
    double K2 = 0.0;             ///< 4·6^qĉK^{q+2}/(1 − smallness)
    double lipschitz_J = 0.0;    ///< smallness·K₁
    double outer_theory = 0.0;   ///< 2·6^qĉK^q(2K + 3K₂)
    double h_prime = 0.0;        ///< 2·3^{q+1}K²ĉ
    double H = 0.0;              ///< h'/(1 − (2/3)h')
    double K3 = 0.0;             ///< h'(1 + 2H/3)/(1 − h'(1 + 2H/3)/K)
    double d_bound = 0.0;        ///< 3K₁
    double d_star_bound = 0.0;   ///< 3K₃ + 2KH(1 + K₃/K)
};

ManifoldConstants manifold_constants(double K, double chat, double q);

struct ManifoldHypotheses {
    ManifoldConstants constants;
    double origin_residual = 0.0;
    double c2_log_value = 0.0;   ///< log(k^{−b}h^aν^ε) at the last probe
    bool c2_ok = false;          ///< decreasing along the probes and below e^{−20}
    double c3_worst_increase = 0.0;  ///< largest increase of log(h^aβ^ε) between grid points
    bool c3_ok = false;
    bool smallness_ok = false;   ///< every printed threshold holds
    bool origin_ok = false;
    bool pass = false;
};

ManifoldHypotheses check_manifold_hypotheses(const ManifoldProblem& problem,
                                             const RadiusFunction& radius, const Param& lambda = {});

/// Φ on s-slices; per slice a tensor grid over [−R, R]^l in an orthonormal basis of E(s),
/// multilinear in ξ, linear in s, radially extended outside the ball.
class ManifoldGraph {
public:
    ManifoldGraph() = default;
    ManifoldGraph(std::vector<double> s, std::vector<double> radius, std::vector<Mat> basis,
                  int per_axis, int dim);

    std::size_t slices() const noexcept { return s_.size(); }
    std::size_t nodes_per_slice() const noexcept { return nodes_; }
    int per_axis() const noexcept { return m_; }
    int dim() const noexcept { return n_; }
    int stable_dim() const noexcept { return l_; }
    double s(std::size_t j) const { return s_[j]; }
    double radius(std::size_t j) const { return radius_[j]; }
    const Mat& basis(std::size_t j) const { return basis_[j]; }

    /// Node ξ (full coordinates) and the point where Φ is computed (radial projection).
    Vec node(std::size_t j, std::size_t k) const;
    Vec node_effective(std::size_t j, std::size_t k) const;

    const Vec& value(std::size_t j, std::size_t k) const { return values_[j][k]; }
    Vec& value(std::size_t j, std::size_t k) { return values_[j][k]; }

    /// Φ(s,ξ) for s in [first slice, last slice]; ξ given in full coordinates.
    Vec operator()(double s, const Vec& xi) const;
    Vec on_slice(std::size_t j, const Vec& xi) const;

private:
    std::vector<double> s_;
    std::vector<double> radius_;
    std::vector<Mat> basis_;
    std::vector<std::vector<Vec>> values_;
    int m_ = 0;
    int n_ = 0;
    int l_ = 0;
    std::size_t nodes_ = 0;
};

/// |Φ₁ − Φ₂|' over the nodes with nonzero effective ξ.
double graph_distance(const ManifoldGraph& a, const ManifoldGraph& b);

/// sup ‖Φ(s,ξ)‖/‖ξ‖ over the nodes.
double graph_norm(const ManifoldGraph& g);

struct ManifoldOptions {
    double step = 0.025;        ///< time lattice
    double slice_step = 0.05;   ///< multiple of step
    double s_eval = 2.0;        ///< largest sample start
    double kappa_max = 2.0;     ///< largest flow time checked
    int shells = 10;            ///< 2·shells + 1 nodes per axis
    double window = 0.0;        ///< 0 picks the certified window
    double tail_tol = 1e-10;
    double fp_tol = 1e-10;      ///< outer, on |Φ' − Φ|'
    double inner_fp_tol = 1e-13;
    int max_iter = 60;
    int max_inner = 100;
    double contraction_slack = 0.05;
    QuadConfig quad;
};

struct UPath {
    std::vector<double> t;
    std::vector<Vec> u;
    int iterations = 0;
    double contraction = 0.0;
    double fp_residual = 0.0;
    double bound_ratio = 0.0;   ///< max ‖u(t)‖ / (2K(h(t)/h(s))^aμ(s)^ε‖ξ‖)
};

struct TransformResult {
    ManifoldGraph graph;
    double distance = 0.0;          ///< |J Φ − Φ|'
    double inner_contraction = 0.0;
    int inner_iterations = 0;
};

struct ManifoldSolution {
    ManifoldGraph graph;
    int sweeps = 0;
    std::vector<double> distances;
    double outer_contraction = 0.0;
    double inner_contraction = 0.0;
    int inner_iterations = 0;
};

class ManifoldSolver {
public:
    ManifoldSolver(ManifoldProblem problem, const EvolutionOperator& op, ManifoldOptions opts = {});

    const ManifoldProblem& problem() const noexcept { return problem_; }
    const ManifoldOptions& options() const noexcept { return opts_; }
    const RadiusFunction& radius() const noexcept { return radius_; }
    const ManifoldHypotheses& hypotheses() const noexcept { return hyp_; }
    const ManifoldConstants& constants() const noexcept { return hyp_.constants; }
    const EvolutionOperator& op() const noexcept { return *op_; }
    const GridPropagator& grid() const noexcept { return *grid_; }
    double window() const noexcept { return window_; }
    double s_max() const noexcept { return grid_->end(); }

    ManifoldGraph zero_graph() const;

    /// Ball radius β(s)^{−ε} and (β(s)μ(s))^{−ε}/2K at a slice time.
    double ball_radius(double s) const;
    double invariant_radius(double s) const;

    /// Fixed point of u ↦ T(·,s)ξ + ∫_s^· T(·,τ)P f(τ, u + Φ(τ,u), λ)dτ on [s, s + window].
    /// s must be a lattice node. Throws PreconditionError outside the ball, NumericalError
    /// on non-contraction or when the 2K bound fails.
    UPath solve_u(const ManifoldGraph& phi, const Param& lambda, double s, const Vec& xi) const;

    /// (JΦ)(s,ξ) = −∫_s^∞ T(τ,s)⁻¹Q(τ)f(τ, u + Φ(τ,u), λ)dτ at every node.
    TransformResult graph_transform(const ManifoldGraph& phi, const Param& lambda) const;

    /// Iterates the transform from Φ = 0. Throws PreconditionError unless the hypotheses
    /// hold, NumericalError after max_iter sweeps.
    ManifoldSolution solve(const Param& lambda) const;

private:
    ManifoldProblem problem_;
    const EvolutionOperator* op_;
    ManifoldOptions opts_;
    RadiusFunction radius_;
    ManifoldHypotheses hyp_;
    double window_ = 0.0;
    std::size_t stride_ = 1;
    std::shared_ptr<GridPropagator> grid_;
    NodeProjections P_, Q_;
};

struct ManifoldSample {
    double s = 0.0;
    Vec xi;
};

/// Points of Z_{β·μ}(2K) at the given starts: ±fractions of the radius along each basis vector.
std::vector<ManifoldSample> default_samples(const ManifoldSolver& solver, const std::vector<double>& starts,
                                            const std::vector<double>& fractions = {0.25, 0.5, 0.75, 0.99});

struct InvarianceReport {
    double max_residual = 0.0;      ///< max ‖v(t) − Φ(t,u(t))‖ / (‖ξ‖ + fp_tol)
    std::vector<double> kappas;
    std::vector<double> per_kappa;
    std::size_t checked = 0;
    std::size_t outside = 0;        ///< samples whose flow left the graph support
    double tol = 1e-4;
    bool pass = false;
};

/// Flows (ξ, Φ(s,ξ) + offset·e_F) with the full nonlinear system and compares v(t) to Φ(t,u(t)).
InvarianceReport invariance_check(const ManifoldSolver& solver, const ManifoldGraph& phi,
                                  const Param& lambda, const std::vector<ManifoldSample>& samples,
                                  const std::vector<double>& kappas, double tol = 1e-4,
                                  double offset = 0.0);

struct LipschitzReport {
    double graph_lipschitz = 0.0;  ///< max ‖Φ(s,ξ₁) − Φ(s,ξ₂)‖/‖ξ₁ − ξ₂‖ over node pairs
    double d = 0.0;                ///< max flow-pair ratio
    double d_bound = 0.0;          ///< 3K₁
    double max_proj_leak = 0.0;    ///< max ‖P(s)Φ(s,ξ)‖
    bool graph_ok = false;
    bool d_ok = false;
    bool pass = false;
};

/// Flow pairs use the sum of the E and F component distances.
LipschitzReport lipschitz_checks(const ManifoldSolver& solver, const ManifoldGraph& phi,
                                 const Param& lambda, const std::vector<ManifoldSample>& samples,
                                 const std::vector<double>& kappas);

struct ManifoldLambdaSweep {
    std::vector<double> lambdas;
    std::vector<double> flow_distance;   ///< max ‖Ψ^λ − Ψ^{λ₀}‖ / ((h(t)/h(s))^aμ(s)^ε‖ξ‖)
    std::vector<double> graph_distance;  ///< |Φ^λ − Φ^{λ₀}|'
    double d_star = 0.0;                 ///< max flow_distance / |λ − λ₀|
    double d_star_bound = 0.0;
    double H_ratio = 0.0;                ///< max graph_distance / (H|λ − λ₀|)
    double slope = 0.0;                  ///< least squares through the origin
    double regression_residual = 0.0;    ///< ‖D − slope·Δλ‖ / ‖D‖
    bool linear_ok = false;
    std::vector<ManifoldSolution> solutions;
};

/// λ = lambdas[i]·e₁ of a one-dimensional parameter space.
ManifoldLambdaSweep manifold_lambda_sweep(const ManifoldSolver& solver, const std::vector<double>& lambdas,
                                          const std::vector<ManifoldSample>& samples,
                                          const std::vector<double>& kappas);

struct ManifoldCertificate {
    ManifoldConstants constants;
    int sweeps = 0;
    double outer_contraction = 0.0;
    double inner_contraction = 0.0;
    bool outer_ok = false;           ///< ≤ outer_theory + slack
    InvarianceReport invariance;
    LipschitzReport lipschitz;
    bool pass = false;
};

ManifoldCertificate certify_manifold(const ManifoldSolver& solver, const ManifoldSolution& sol,
                                     const Param& lambda, const std::vector<ManifoldSample>& samples,
                                     const std::vector<double>& kappas, double inv_tol = 1e-4);

} // namespace gdich
