#pragma once

#include "gdich/core.hpp"

#include <array>
#include <cmath>
#include <functional>

namespace gdich {

struct QuadConfig {
    double rel_tol = 1e-10;
    double abs_tol = 1e-14;
    double tail_tol = 1e-8;
    int max_depth = 30;
};

namespace detail {

inline constexpr std::array<double, 8> kKronrodX{
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kKronrodW{
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kGaussW{
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

inline double size_of(double v) { return std::abs(v); }
template <class M>
double size_of(const M& m) { return m.cwiseAbs().maxCoeff(); }

template <class T, class F>
std::pair<T, double> gk15(const F& f, double a, double b) {
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    const T fc = f(c);
    T kron = fc * kKronrodW[7];
    T gauss = fc * kGaussW[3];
    for (int i = 0; i < 7; ++i) {
        const double dx = h * kKronrodX[static_cast<std::size_t>(i)];
        const T f1 = f(c - dx);
        const T f2 = f(c + dx);
        kron = kron + (f1 + f2) * kKronrodW[static_cast<std::size_t>(i)];
        if (i % 2 == 1) gauss = gauss + (f1 + f2) * kGaussW[static_cast<std::size_t>(i / 2)];
    }
    const T value = kron * h;
    const double err = size_of(T(value - gauss * h));
    return {value, err};
}

template <class T, class F>
T adaptive(const F& f, double a, double b, double tol, int depth, int max_depth) {
    auto [v, err] = gk15<T>(f, a, b);
    if (err <= tol || depth >= max_depth) return v;
    const double m = 0.5 * (a + b);
    return T(adaptive<T>(f, a, m, 0.5 * tol, depth + 1, max_depth) +
             adaptive<T>(f, m, b, 0.5 * tol, depth + 1, max_depth));
}

} // namespace detail

/// Adaptive Gauss–Kronrod (7,15) on [a,b]. T is double or an Eigen matrix.
/// The tolerance is max(abs_tol, rel_tol·|first estimate|).
template <class T, class F>
T integrate(const F& f, double a, double b, const QuadConfig& cfg = {}) {
    if (a == b) {
        T z = f(a);
        return T(z * 0.0);
    }
    auto [v0, e0] = detail::gk15<T>(f, a, b);
    const double tol = std::max(cfg.abs_tol, cfg.rel_tol * detail::size_of(v0));
    if (e0 <= tol) return v0;
    return detail::adaptive<T>(f, a, b, tol, 0, cfg.max_depth);
}

/// Integrand e^{ℓ(τ)} described by ℓ and ℓ'. Used to certify tails.
struct LogEnvelope {
    std::function<double(double)> log_value;
    std::function<double(double)> log_slope;
};

struct TailBound {
    bool convergent = false;
    double bound = std::numeric_limits<double>::infinity();
    std::string model; ///< "exponential" or "power"
};

/// Upper bound for ∫_R^∞ e^{ℓ(τ)}dτ from probes R, 2R, ..., 2^k R (and R+1, R+2, ...).
/// Uses ℓ' ≤ −κ (exponential model) or τℓ' ≤ −p with p > 1 (power model).
TailBound upper_tail(const LogEnvelope& env, double R);

/// Same for ∫_{−∞}^{R} e^{ℓ(τ)}dτ.
TailBound lower_tail(const LogEnvelope& env, double R);

/// Smallest R = start + step·2^j (j ≥ 0) whose upper tail is ≤ tol.
/// Throws NumericalError if the tail diverges.
double upper_cutoff(const LogEnvelope& env, double start, double tol);
double lower_cutoff(const LogEnvelope& env, double start, double tol);

struct CertifiedIntegral {
    double value = 0.0;      ///< finite part plus tail bound
    double finite_part = 0.0;
    double tail = 0.0;
    double cutoff = 0.0;
};

/// ∫_a^∞ f with f ≤ envelope on the tail. Panels of unit length and any
/// `breaks` are respected.
CertifiedIntegral integrate_upper(const std::function<double(double)>& f,
                                  const LogEnvelope& env, double a, const QuadConfig& cfg,
                                  const std::vector<double>& breaks = {});
CertifiedIntegral integrate_lower(const std::function<double(double)>& f,
                                  const LogEnvelope& env, double b, const QuadConfig& cfg,
                                  const std::vector<double>& breaks = {});

} // namespace gdich
