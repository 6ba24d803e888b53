#pragma once

#include "gdich/core.hpp"
#include "gdich/evolution.hpp"
#include "gdich/spec.hpp"
#include "gdich/system.hpp"

#include <string>
#include <vector>

namespace gdich {

struct ExponentOptions {
    double horizon = 50.0;
    double window = 0.2;          ///< tail window is [(1 − window)T, T]
    std::size_t samples = 400;    ///< trace points on (0, T]
    double min_log_rate = 10.0;   ///< require log u(T) above this
    double spread_limit = 0.2;
};

/// log(‖x(t)‖/‖x0‖) / log u(t) sampled on (0, T]; value is the tail-window maximum.
struct ExponentTrace {
    std::vector<double> t;          ///< includes t = 0
    std::vector<double> log_norm;   ///< log‖x(t)‖ (not normalized), accumulated with renormalization
    std::vector<double> ratio;      ///< NaN at t = 0
    double value = 0.0;
    double spread = 0.0;
    bool reliable = true;
    bool zero = false;              ///< x0 = 0: value is −∞
};

ExponentTrace lyapunov_exponent(const EvolutionOperator& op, const GrowthRate& rate, const Vec& x0,
                                const ExponentOptions& opts = {});

/// Rates for the two blocks and their adjoints.
struct SpectrumRates {
    GrowthRate h;
    GrowthRate k;
    GrowthRate hbar;
    GrowthRate kbar;

    static SpectrumRates same(const GrowthRate& h, const GrowthRate& k) { return {h, k, h, k}; }
};

struct ExponentValue {
    double value;
    int multiplicity;
};

struct VectorExponent {
    std::string block;   ///< "E" or "F"
    bool adjoint;
    Vec x0;
    ExponentTrace trace;
};

struct SpectrumReport {
    std::vector<ExponentValue> values_E;
    std::vector<ExponentValue> values_F;
    std::vector<ExponentValue> adjoint_E;
    std::vector<ExponentValue> adjoint_F;
    double horizon = 0.0;
    bool reliable = true;
    std::vector<std::string> warnings;
    std::vector<VectorExponent> vectors;
};

/// Sorted distinct values: consecutive values closer than `gap` merge (mean).
std::vector<ExponentValue> cluster_values(std::vector<double> values, double gap = 0.05);

SpectrumReport spectrum(const BlockSystem& block, const SpectrumRates& rates,
                        const ExponentOptions& opts = {}, const IntegratorConfig& cfg = {});

/// basisᵀ·dual = I; columns are the vectors.
struct DualBasisPair {
    Mat basis;
    Mat dual;

    void validate(double tol = 1e-10) const;
    static DualBasisPair standard(int n);
    /// Columns of V with dual V^{−T}.
    static DualBasisPair from_basis(const Mat& V);
};

struct RegularitySide {
    double gamma = 0.0;                 ///< upper bound: min over candidates
    DualBasisPair best;
    std::vector<double> m;              ///< forward exponents of best.basis columns
    std::vector<double> n;              ///< adjoint exponents of best.dual columns
    std::vector<ExponentTrace> forward; ///< traces for best.basis
    std::vector<ExponentTrace> adjoint; ///< traces for best.dual
    std::vector<double> candidate_gammas;
};

struct RegularityReport {
    RegularitySide E;
    RegularitySide F;
    double gamma() const { return E.gamma; }
    double gamma_bar() const { return F.gamma; }
};

/// Default candidates: standard basis, and the real eigenbasis of W(0) when it exists.
std::vector<DualBasisPair> default_candidates(const CoefficientField& w);

RegularityReport regularity(const BlockSystem& block, const SpectrumRates& rates,
                            std::vector<DualBasisPair> candidates_E = {},
                            std::vector<DualBasisPair> candidates_F = {},
                            const ExponentOptions& opts = {}, const IntegratorConfig& cfg = {});

struct SpectrumClaim {
    DichotomySpec spec;
    double Kbar1 = 1.0;
    double Kbar2 = 1.0;
    std::vector<std::string> warnings;
};

/// a = λ_r + ε̃, b = χ₁ + ε̃, ε = max(γ, γ̄) + ε̃, μ = h·h̄, ν = k·k̄, P = block
/// projection, K = max(K̄₁²l², K̄₂²(n−l)²) with K̄ the sampled sup of the
/// column traces against h^{m_j+ε̃} and h̄^{n_j+ε̃}.
SpectrumClaim dichotomy_from_spectrum(const SpectrumReport& report, const RegularityReport& reg,
                                      const SpectrumRates& rates, double eps_tilde);

} // namespace gdich
