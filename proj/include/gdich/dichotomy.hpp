#pragma once

#include "gdich/core.hpp"
#include "gdich/evolution.hpp"
#include "gdich/spec.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gdich {

using TimePairs = std::vector<std::pair<double, double>>;

struct BoundSample {
    double t;
    double s;
    double stable_ratio;   ///< NaN when t < s
    double unstable_ratio; ///< NaN when t > s
    double commute;
};

struct Certificate {
    std::vector<BoundSample> samples;
    double worst_stable_ratio = 0.0;
    double worst_unstable_ratio = 0.0;
    double worst_commute_residual = 0.0;
    std::pair<double, double> worst_stable_at{0.0, 0.0};
    std::pair<double, double> worst_unstable_at{0.0, 0.0};
    double tol = 1e-6;
    std::size_t violations = 0;
    bool pass = true;
};

/// Grid check of both bounds: ‖T(t,s)P(s)‖ ≤ K(h(t)/h(s))^a μ(|s|)^ε for t ≥ s and
/// ‖T(t,s)Q(s)‖ ≤ K(k(s)/k(t))^{−b} ν(|s|)^ε for s ≥ t, plus the commutation residual.
Certificate verify(const DichotomySpec& spec, const EvolutionOperator& op, const TimePairs& grid,
                   double tol = 1e-6);

/// verify with both bounds multiplied by exp(log_extra(s)).
Certificate verify_scaled(const DichotomySpec& spec, const EvolutionOperator& op,
                          const TimePairs& grid, double tol,
                          const std::function<double(double)>& log_extra);

struct EstimateResult {
    DichotomySpec spec;
    std::vector<std::string> warnings;
    double eps_stable = 0.0;
    double eps_unstable = 0.0;
    std::size_t pairs_stable = 0;
    std::size_t pairs_unstable = 0;
    double rms_stable = 0.0;
    double rms_unstable = 0.0;
};

/// Least-squares fit of (log K, a, ε) and (log K, b, ε) from computed
/// evolution operators, then K inflated so that the fit holds on the grid.
EstimateResult estimate_constants(const EvolutionOperator& op, const ProjectionFamily& P,
                                  const RateQuadruple& rates, const TimePairs& grid,
                                  std::optional<double> eps_fixed = std::nullopt);

struct ProjectionReport {
    double max_commute = 0.0;
    double max_idempotency = 0.0;
    std::pair<double, double> worst_at{0.0, 0.0};
    double tol = 1e-8;
    bool pass = true;
};

ProjectionReport check_projection(const ProjectionFamily& P, const EvolutionOperator& op,
                                  const TimePairs& grid, double tol = 1e-8);

} // namespace gdich
