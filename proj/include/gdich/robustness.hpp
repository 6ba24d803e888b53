#pragma once

#include "gdich/core.hpp"
#include "gdich/dichotomy.hpp"
#include "gdich/evolution.hpp"
#include "gdich/quadrature.hpp"
#include "gdich/spec.hpp"
#include "gdich/system.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace gdich {

struct PerturbationSpec {
    std::function<Mat(double, const Param&)> B;
    double c = 0.0;
    double omega = 1.0;
    std::optional<double> delta_hat;
    std::string name;
    std::vector<double> breakpoints{0.0};  ///< times where B may fail to be smooth

    Mat operator()(double t, const Param& lambda) const { return B(t, lambda); }
};

/// Largest ‖B(t,λ)‖ / (c·min(μ(|t|), ν(|t|))^{−ω−ε}) over the probes.
double decay_ratio(const PerturbationSpec& pert, const RateQuadruple& rates, double eps,
                   const std::vector<double>& ts, const std::vector<Param>& lambdas);

struct NResult {
    double N = 0.0;
    double at = 0.0;            ///< maximizing grid time
    std::vector<double> values; ///< per grid time
    double tail = 0.0;          ///< largest tail bound included
};

/// sup_t ν(|t|)^ε∫_{−∞}^t μ(|τ|)^{−ω}dτ + μ(|t|)^ε∫_t^∞ ν(|τ|)^{−ω}dτ over the grid.
/// Throws PreconditionError when a tail diverges.
NResult compute_N(const RateQuadruple& rates, double omega, double eps,
                  const std::vector<double>& grid, const QuadConfig& quad = {});

struct Smallness {
    double margin = 0.0;  ///< 1 − cKN(2K+1)
    double Khat = 0.0;    ///< K/(1 − KcN), +inf when KcN ≥ 1
    double KcN = 0.0;
    bool ok = false;
};

Smallness check_smallness(double c, double K, double N);

struct RobustOptions {
    double step = 0.05;
    double window = 0.0;     ///< half-width T of [−T, T]; 0 picks the certified value
    double fp_tol = 1e-10;
    int max_iter = 200;
    double contraction_slack = 0.05;
    QuadConfig quad;
};

/// U(·,s) on nodes t ≥ s (stable) or V(·,s) on nodes t ≤ s (unstable).
struct BoundedSolution {
    double s = 0.0;
    std::vector<double> t;
    std::vector<Mat> value;
    double weighted_norm = 0.0;   ///< ‖·‖₁ or ‖·‖₂ restricted to the window
    double fp_residual = 0.0;     ///< weighted norm of the last update
    double contraction = 0.0;     ///< largest observed ratio of successive updates
    int iterations = 0;

    const Mat& at(double time) const;
};

struct BoundedSolutionFamily {
    std::vector<BoundedSolution> U;
    std::vector<BoundedSolution> V;
    double window = 0.0;
    double step = 0.0;
    double KcN = 0.0;
    double Khat = 0.0;
    int max_iterations = 0;
    double max_contraction = 0.0;
    double omega1_norm = 0.0;
    double omega2_norm = 0.0;

    const BoundedSolution& U_at(double s) const;
    const BoundedSolution& V_at(double s) const;
};

/// Picard iteration for the bounded-solution equations at every s in `starts`.
/// Throws PreconditionError when smallness fails or the window is too short,
/// NumericalError when the measured contraction exceeds KcN + slack or reaches 1.
BoundedSolutionFamily solve_bounded(const DichotomySpec& spec, const EvolutionOperator& op,
                                    const PerturbationSpec& pert, const Param& lambda, double N,
                                    const std::vector<double>& starts, const RobustOptions& opts = {});

/// Certified window half-width for the given constants.
double certified_window(const DichotomySpec& spec, const PerturbationSpec& pert, double Khat,
                        double tail_tol);

struct SemigroupReport {
    double worst_U = 0.0;  ///< max ‖U(t,σ)U(σ,s) − U(t,s)‖ / ‖U(t,s)‖
    double worst_V = 0.0;
    std::size_t triples = 0;
};

/// Every s ≤ σ ≤ t (resp. t ≤ σ ≤ s) with s, σ in the family's starts and t ≤ t_max.
SemigroupReport semigroup_check(const BoundedSolutionFamily& fam, double t_max);

struct RobustProjections {
    Mat Ptilde0;
    Mat Qtilde0;
    Mat S0;
    Mat S0inv;
    double S0_deviation = 0.0;  ///< ‖S(0) − Id‖
    double S0_bound = 0.0;      ///< KK̂cN
    double prefactor = 0.0;     ///< KK̂/(1 − 2KK̂cN)
    double Khat = 0.0;
    Mat P0;
    std::shared_ptr<const EvolutionOperator> perturbed;

    Mat Phat(double t) const;
    Mat Qhat(double t) const { return eye(P0.rows()) - Phat(t); }
    ProjectionFamily family() const;
};

/// P̂(t) = T̂(t,0)S(0)P(0)S(0)⁻¹T̂(0,t) with S(0) = U(0,0) + V(0,0).
/// Throws PreconditionError when ‖S(0) − Id‖ ≥ 1.
RobustProjections build_projections(const DichotomySpec& spec, const BoundedSolutionFamily& fam,
                                    std::shared_ptr<const EvolutionOperator> perturbed, double N,
                                    double c);

/// Both perturbed bounds with constant KK̂/(1 − 2KK̂cN) and the extra factor μ(|s|)^ε + ν(|s|)^ε.
Certificate verify_robust(const RobustProjections& proj, const DichotomySpec& spec,
                          const TimePairs& grid, double tol = 1e-6);

/// x' = (A(t) + B(t,λ))x.
CoefficientField perturbed_field(const CoefficientField& A, const PerturbationSpec& pert,
                                 const Param& lambda);

struct RobustResult {
    NResult N;
    Smallness small;
    double decay_ratio = 0.0;
    BoundedSolutionFamily family;
    SemigroupReport semigroup;
    RobustProjections proj;
    double max_idempotency = 0.0;  ///< max ‖P̂² − P̂‖ on the projection grid
    std::vector<double> proj_grid;
    std::vector<Mat> Phat;
    Certificate cert;
};

struct RobustRun {
    std::vector<double> N_grid;          ///< times for N
    std::vector<double> starts{0.0, 1.0, 2.0};
    std::vector<double> proj_grid;       ///< times for P̂
    TimePairs verify_grid;
    double semigroup_t_max = 5.0;
};

/// compute_N, smallness, Picard iteration, projections and the perturbed certificate.
RobustResult robust_pipeline(const DichotomySpec& spec, const EvolutionOperator& op,
                             const PerturbationSpec& pert, const Param& lambda, const RobustRun& run,
                             const RobustOptions& opts = {});

/// Sine of the largest principal angle between the ranges of two projections.
double subspace_gap(const Mat& P1, const Mat& P2);

struct LambdaSweep {
    std::vector<double> lambdas;
    std::vector<double> stable_gap;    ///< against the first λ, at time t
    std::vector<double> unstable_gap;
    std::vector<double> U_distance;    ///< ‖U^λ − U^{λ₀}‖₁ on the window at s = 0
    double lipschitz_stable = 0.0;     ///< max gap / |λ − λ₀|
    double lipschitz_unstable = 0.0;
    double lipschitz_U = 0.0;
    double U_bound = 0.0;              ///< K̂KcN/(1 − KcN)
};

/// Scalar parameter sweep: λ = lambdas[i]·e₁ of a one-dimensional space.
LambdaSweep lambda_sweep(const DichotomySpec& spec, const EvolutionOperator& op,
                         const PerturbationSpec& pert, double N, const std::vector<double>& lambdas,
                         double t, const RobustOptions& opts = {});

struct FiniteDimReport {
    double local_growth_ratio = 0.0;  ///< max ‖T(t,τ)‖ / (l̂·min(μ(t), ν(t))^{2ε})
    double delta_ratio = 0.0;         ///< max ‖B(t)‖ / (δ̂(μ(|t|)+ν(|t|))^{−2ε})
    double matrix_margin = 0.0;       ///< min eig of P*P h'/h + Q*Q k'/k − (δ̂K²/d̄)Id − Id
    bool boundary = false;            ///< |matrix_margin| ≤ 1e-12
    bool local_ok = false;
    bool delta_ok = false;
    bool matrix_ok = false;
    bool pass = false;
};

FiniteDimReport finite_dim_conditions(const DichotomySpec& spec, const EvolutionOperator& op,
                                      const PerturbationSpec& pert, double dbar, double lhat,
                                      double dhat, const std::vector<double>& grid);

} // namespace gdich
