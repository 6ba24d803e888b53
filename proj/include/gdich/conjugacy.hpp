#pragma once

#include "gdich/core.hpp"
#include "gdich/evolution.hpp"
#include "gdich/grid_ops.hpp"
#include "gdich/spec.hpp"
#include "gdich/system.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <vector>

namespace gdich {

/// 1/|a| + 1/b, dropping the term of a zero projection.
/// Throws PreconditionError when Q ≠ 0 and b = 0.
double conjugacy_factor(const DichotomySpec& spec);

/// min{h'/h·μ(|t|)^{−ε}, k'/k·ν(|t|)^{−ε}}.
double conjugacy_weight(const DichotomySpec& spec, double t);

struct HypothesisProbes {
    std::vector<double> ts;
    std::vector<Vec> xs;  ///< bound probes; Lipschitz probes are all distinct pairs
};

struct HypothesisReport {
    double alpha = 0.0;
    double gamma = 0.0;
    double alpha_observed = 0.0;  ///< max ‖f(t,x)‖ / weight(t)
    double gamma_observed = 0.0;  ///< max ‖f(t,x₁) − f(t,x₂)‖ / (weight(t)‖x₁ − x₂‖)
    double margin = 0.0;          ///< 1 − Kγ(1/|a| + 1/b)
    bool bound_ok = false;
    bool lipschitz_ok = false;
    bool margin_ok = false;
    bool pass = false;
};

/// Uses f.alpha and f.gamma as the claimed constants.
HypothesisReport check_hypotheses(const NonlinearTerm& f, const DichotomySpec& spec,
                                  const HypothesisProbes& probes, const Param& lambda = {});

struct ConjugacyConfig {
    std::optional<double> alpha;  ///< defaults to f.alpha
    std::optional<double> gamma;  ///< defaults to f.gamma
    double step = 0.025;
    double window = 0.0;          ///< one-sided truncation length; 0 picks it from the tail envelope
    double tail_tol = 1e-9;
    double fp_tol = 1e-12;
    int max_iter = 200;
    double contraction_slack = 0.05;
    double t_lo = -5.0;           ///< evaluation times must be lattice nodes in [t_lo, t_hi]
    double t_hi = 5.0;
    double margin = 2.0;          ///< largest `span` accepted by the path solvers
    std::vector<double> breakpoints{0.0};
    Param lambda;
};

/// Solution of one bounded-solution problem on the nodes around t̄.
struct BoundedPath {
    std::vector<double> t;
    std::vector<Vec> z;
    std::size_t center = 0;    ///< index of t̄
    double sup_norm = 0.0;
    double contraction = 0.0;  ///< largest ratio of successive updates (Picard only)
    int iterations = 0;
    double fp_residual = 0.0;

    const Vec& at_center() const { return z[center]; }
    const Vec& at(double time) const;
};

/// Shared grid and projections for every solve of one system.
class ConjugacySolver {
public:
    ConjugacySolver(const DichotomySpec& spec, const EvolutionOperator& op, NonlinearTerm f,
                    ConjugacyConfig cfg = {});

    double alpha() const noexcept { return alpha_; }
    double gamma() const noexcept { return gamma_; }
    double bound() const noexcept { return bound_; }             ///< Kα(1/|a| + 1/b)
    double contraction_theory() const noexcept { return theory_; } ///< Kγ(1/|a| + 1/b)
    double stable_window() const noexcept { return Ts_; }
    double unstable_window() const noexcept { return Tu_; }
    const GridPropagator& grid() const noexcept { return *grid_; }
    const NonlinearTerm& term() const noexcept { return f_; }
    const EvolutionOperator& op() const noexcept { return *op_; }
    const ConjugacyConfig& config() const noexcept { return cfg_; }

    /// Bounded solution of z' = Az − f(t, X(t,t̄,ξ)) by direct quadrature;
    /// values are accurate on [t̄ − span, t̄ + span].
    BoundedPath bounded_h(double tbar, const Vec& xi, double span = 0.0) const;

    /// Bounded solution of z' = Az + f(t, Y(t,t̄,ξ) + z) by Picard iteration from 0.
    /// Throws NumericalError when the measured contraction exceeds the theory plus slack.
    BoundedPath bounded_l(double tbar, const Vec& xi, double span = 0.0) const;

    /// H(t,x) = x + h(t,(t,x)) and L(t,y) = y + l(t,(t,y)), memoized per (node, point).
    Vec H(double t, const Vec& x) const;
    Vec L(double t, const Vec& y) const;

    double max_contraction() const;
    int max_iterations() const;

private:
    std::size_t node(double t) const;

    DichotomySpec spec_;
    const EvolutionOperator* op_;
    NonlinearTerm f_;
    ConjugacyConfig cfg_;
    double alpha_ = 0.0;
    double gamma_ = 0.0;
    double bound_ = 0.0;
    double theory_ = 0.0;
    double Ts_ = 0.0;
    double Tu_ = 0.0;
    std::size_t Ns_ = 0;
    std::size_t Nu_ = 0;
    std::size_t Nspan_ = 0;
    std::shared_ptr<GridPropagator> grid_;
    NodeProjections P_, Q_;

    struct Memo;
    std::shared_ptr<Memo> memo_;
};

struct ConjugacyPair {
    std::function<Vec(double, const Vec&)> H;
    std::function<Vec(double, const Vec&)> L;
    double bound = 0.0;
    std::shared_ptr<const ConjugacySolver> solver;
};

/// Checks smallness first; throws PreconditionError when Kγ(1/|a| + 1/b) ≥ 1.
ConjugacyPair build_pair(const DichotomySpec& spec, const EvolutionOperator& op,
                         const NonlinearTerm& f, const ConjugacyConfig& cfg = {});

/// (‖L(t,H(t,x)) − x‖, ‖H(t,L(t,x)) − x‖).
std::pair<double, double> roundtrip(const ConjugacyPair& pair, double t, const Vec& x);

/// max over nodes t in [t̄, t̄ + horizon] of ‖H(t, X(t,t̄,x̄)) − T(t,t̄)H(t̄,x̄)‖.
double conjugation_residual(const ConjugacyPair& pair, const EvolutionOperator& op,
                            const NonlinearTerm& f, const Param& lambda, double tbar,
                            const Vec& xbar, double horizon);

/// Points of [lo, hi]ⁿ with `per_axis` points on each axis.
std::vector<Vec> box_samples(int dim, double lo, double hi, int per_axis);

struct ConjugacySample {
    double t = 0.0;
    Vec x;
    Vec Hx;
    double roundtrip_LH = 0.0;
    double roundtrip_HL = 0.0;
};

struct ConjugacyReport {
    double bound = 0.0;
    double max_displacement = 0.0;
    double max_roundtrip = 0.0;
    double min_separation = 0.0;  ///< min ‖H(t,x) − H(t,x')‖ over distinct samples
    double growth_slack = 0.0;    ///< min ‖H(t,x)‖ − ‖x‖ + bound
    double max_conjugation = 0.0; ///< normalized by 1 + ‖x̄‖
    double max_contraction = 0.0;
    double contraction_theory = 0.0;
    double window_stable = 0.0;
    double window_unstable = 0.0;
    int max_iterations = 0;
    double roundtrip_tol = 1e-5;
    double conjugation_tol = 1e-5;
    bool displacement_ok = false;
    bool roundtrip_ok = false;
    bool injective = false;
    bool growth_ok = false;
    bool conjugation_ok = false;
    bool contraction_ok = false;
    bool pass = false;
    std::vector<ConjugacySample> samples;
};

struct CertifyOptions {
    std::vector<double> ts{0.0};
    double box_lo = -1.0;
    double box_hi = 1.0;
    int per_axis = 9;
    std::vector<Vec> xbars;  ///< conjugation starts; empty uses the box corners and the origin
    double horizon = 5.0;
    double roundtrip_tol = 1e-5;
    double conjugation_tol = 1e-5;
};

ConjugacyReport certify(const ConjugacyPair& pair, const EvolutionOperator& op,
                        const NonlinearTerm& f, const CertifyOptions& opts = {});

} // namespace gdich
