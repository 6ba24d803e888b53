#pragma once

#include "gdich/core.hpp"

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace gdich {

struct NamedParam {
    std::string name;
    double value;
};

/// Growth rate u with u(0)=1, evaluated through log u and u'/u so that
/// ratios of large values never overflow.
class GrowthRate {
public:
    using Fn = std::function<double(double)>;

    GrowthRate(std::string name, Domain domain, Fn log_value, Fn log_deriv,
               std::vector<NamedParam> params = {});

    const std::string& name() const noexcept { return name_; }
    Domain domain() const noexcept { return domain_; }
    const std::vector<NamedParam>& params() const noexcept { return params_; }

    bool in_domain(double t) const noexcept;

    /// log u(t). Throws DomainError outside the domain or when u(t) is not positive.
    double log_eval(double t) const;
    /// u(t); may be +inf for very large arguments.
    double eval(double t) const;
    /// u'(t)/u(t).
    double dlog(double t) const;
    /// u'(t).
    double deriv(double t) const;

    /// Same formulas with a different domain tag. Used to probe formulas
    /// outside the range they were registered for.
    GrowthRate with_domain(Domain d) const;

private:
    std::string name_;
    Domain domain_;
    std::shared_ptr<const Fn> log_;
    std::shared_ptr<const Fn> dlog_;
    std::vector<NamedParam> params_;
};

/// Builtin rates: exp, poly, polysq, expabs, expsq. Optional param "rate" (> 0)
/// scales the argument. poly, polysq and expsq are half-line.
GrowthRate builtin(const std::string& name, const std::map<std::string, double>& params = {});

/// e^{rho(t)} with rho a monotone cubic interpolant of the samples.
/// Half-line when the first sample time is >= 0.
GrowthRate rho_exp(std::vector<double> t, std::vector<double> rho);
GrowthRate rho_exp_from_csv(const std::string& path);

/// Pointwise product u·v.
GrowthRate product(const GrowthRate& u, const GrowthRate& v);

struct RatioPower {
    double value;     ///< (u(t)/u(s))^p, clamped to [e^-700, +inf]
    double log_value; ///< p·(log u(t) − log u(s))
    bool saturated;   ///< |log_value| > 700
};

RatioPower ratio_power(const GrowthRate& rate, double t, double s, double p);

struct ValidationCheck {
    std::string name;
    bool pass;
    double worst;
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    bool pass = true;
};

struct ValidationOptions {
    double limit_probe = 1e3; ///< |T| used for the limit checks
    double limit_tol = 1e-2;
    double fd_step = 1e-5;
};

ValidationReport validate(const GrowthRate& rate, const std::vector<double>& probes,
                          const ValidationOptions& opts = {});

struct RateQuadruple {
    GrowthRate h;
    GrowthRate k;
    GrowthRate mu;
    GrowthRate nu;

    static RateQuadruple uniform(const GrowthRate& r) { return {r, r, r, r}; }
    /// HalfLine if any member is half-line.
    Domain domain() const;
};

} // namespace gdich
