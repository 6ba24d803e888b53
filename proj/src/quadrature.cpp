#include "gdich/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gdich {

namespace {

std::vector<double> probe_points(double R) {
    const double scale = std::max(1.0, std::abs(R));
    std::vector<double> pts{R};
    for (double m = 0.25; m <= 1024.0; m *= 2.0) pts.push_back(R + m * scale);
    return pts;
}

} // namespace

TailBound upper_tail(const LogEnvelope& env, double R) {
    const auto pts = probe_points(R);
    const double l0 = env.log_value(R);
    TailBound out;

    double kappa = std::numeric_limits<double>::infinity();
    for (double p : pts) kappa = std::min(kappa, -env.log_slope(p));
    const double kappa0 = -env.log_slope(R);
    if (kappa > 0.0 && kappa >= 0.5 * kappa0) {
        out.convergent = true;
        out.bound = std::exp(l0) / kappa;
        out.model = "exponential";
    }
    if (R > 0.0) {
        double pw = std::numeric_limits<double>::infinity();
        for (double p : pts) pw = std::min(pw, -p * env.log_slope(p));
        const double pw0 = -R * env.log_slope(R);
        if (pw > 1.0 && pw >= 0.5 * pw0) {
            const double b = std::exp(l0) * R / (pw - 1.0);
            if (!out.convergent || b < out.bound) {
                out.convergent = true;
                out.bound = b;
                out.model = "power";
            }
        }
    }
    return out;
}

TailBound lower_tail(const LogEnvelope& env, double R) {
    LogEnvelope mirrored{[&env](double t) { return env.log_value(-t); },
                         [&env](double t) { return -env.log_slope(-t); }};
    return upper_tail(mirrored, -R);
}

double upper_cutoff(const LogEnvelope& env, double start, double tol) {
    double R = start;
    for (int j = 0; j < 64; ++j) {
        const TailBound tb = upper_tail(env, R);
        if (tb.convergent && tb.bound <= tol) return R;
        R = start + std::ldexp(1.0, j);
    }
    std::ostringstream os;
    os << "divergent or uncertifiable tail beyond t=" << start;
    throw NumericalError(os.str(), start);
}

double lower_cutoff(const LogEnvelope& env, double start, double tol) {
    LogEnvelope mirrored{[&env](double t) { return env.log_value(-t); },
                         [&env](double t) { return -env.log_slope(-t); }};
    return -upper_cutoff(mirrored, -start, tol);
}

namespace {

double panels(const std::function<double(double)>& f, double a, double b, const QuadConfig& cfg,
              const std::vector<double>& breaks) {
    std::vector<double> cuts{a};
    for (double x = std::floor(a) + 1.0; x < b; x += 1.0)
        if (x > a) cuts.push_back(x);
    for (double x : breaks)
        if (x > a && x < b) cuts.push_back(x);
    cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) sum += integrate<double>(f, cuts[i], cuts[i + 1], cfg);
    return sum;
}

} // namespace

CertifiedIntegral integrate_upper(const std::function<double(double)>& f, const LogEnvelope& env,
                                  double a, const QuadConfig& cfg,
                                  const std::vector<double>& breaks) {
    const double scale = std::exp(env.log_value(a));
    CertifiedIntegral out;
    out.cutoff = upper_cutoff(env, a, cfg.tail_tol * std::max(scale, 1e-300));
    out.tail = upper_tail(env, out.cutoff).bound;
    out.finite_part = panels(f, a, out.cutoff, cfg, breaks);
    out.value = out.finite_part + out.tail;
    return out;
}

CertifiedIntegral integrate_lower(const std::function<double(double)>& f, const LogEnvelope& env,
                                  double b, const QuadConfig& cfg,
                                  const std::vector<double>& breaks) {
    const double scale = std::exp(env.log_value(b));
    CertifiedIntegral out;
    out.cutoff = lower_cutoff(env, b, cfg.tail_tol * std::max(scale, 1e-300));
    out.tail = lower_tail(env, out.cutoff).bound;
    out.finite_part = panels(f, out.cutoff, b, cfg, breaks);
    out.value = out.finite_part + out.tail;
    return out;
}

} // namespace gdich
