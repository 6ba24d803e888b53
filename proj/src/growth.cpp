#include "gdich/growth.hpp"
#include "gdich/csv.hpp"

#include <cmath>

// pchip.hpp in Boost 1.74 calls isnan unqualified.
using std::isnan;
#include <boost/math/interpolators/pchip.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gdich {

GrowthRate::GrowthRate(std::string name, Domain domain, Fn log_value, Fn log_deriv,
                       std::vector<NamedParam> params)
    : name_(std::move(name)),
      domain_(domain),
      log_(std::make_shared<const Fn>(std::move(log_value))),
      dlog_(std::make_shared<const Fn>(std::move(log_deriv))),
      params_(std::move(params)) {}

bool GrowthRate::in_domain(double t) const noexcept {
    return domain_ == Domain::FullLine || t >= 0.0;
}

double GrowthRate::log_eval(double t) const {
    if (!in_domain(t)) {
        std::ostringstream os;
        os << "rate '" << name_ << "' is half-line; t=" << t << " outside domain";
        throw DomainError(os.str());
    }
    const double v = (*log_)(t);
    if (std::isnan(v) || v == -std::numeric_limits<double>::infinity()) {
        std::ostringstream os;
        os << "rate '" << name_ << "': u(" << t << ") is not positive";
        throw DomainError(os.str());
    }
    return v;
}

double GrowthRate::eval(double t) const { return std::exp(log_eval(t)); }

double GrowthRate::dlog(double t) const {
    if (!in_domain(t)) {
        std::ostringstream os;
        os << "rate '" << name_ << "' is half-line; t=" << t << " outside domain";
        throw DomainError(os.str());
    }
    return (*dlog_)(t);
}

double GrowthRate::deriv(double t) const { return eval(t) * dlog(t); }

GrowthRate GrowthRate::with_domain(Domain d) const {
    GrowthRate out = *this;
    out.domain_ = d;
    return out;
}

Domain RateQuadruple::domain() const {
    for (const auto* r : {&h, &k, &mu, &nu})
        if (r->domain() == Domain::HalfLine) return Domain::HalfLine;
    return Domain::FullLine;
}

GrowthRate builtin(const std::string& name, const std::map<std::string, double>& params) {
    double r = 1.0;
    for (const auto& [key, value] : params) {
        if (key != "rate") throw ConfigError("rate '" + name + "': unknown parameter '" + key + "'");
        if (!(value > 0.0) || !std::isfinite(value))
            throw ConfigError("rate '" + name + "': parameter 'rate' must be positive");
        r = value;
    }
    std::vector<NamedParam> ps{{"rate", r}};
    if (name == "exp")
        return {name, Domain::FullLine, [r](double t) { return r * t; },
                [r](double) { return r; }, ps};
    if (name == "expabs")
        return {name, Domain::FullLine, [r](double t) { return r * std::abs(t); },
                [r](double t) { return t > 0 ? r : (t < 0 ? -r : 0.0); }, ps};
    if (name == "poly")
        return {name, Domain::HalfLine, [r](double t) { return std::log1p(r * t); },
                [r](double t) { return r / (1.0 + r * t); }, ps};
    if (name == "polysq")
        return {name, Domain::HalfLine, [r](double t) { return std::log1p(r * t * t); },
                [r](double t) { return 2.0 * r * t / (1.0 + r * t * t); }, ps};
    if (name == "expsq")
        return {name, Domain::HalfLine, [r](double t) { return r * t * t; },
                [r](double t) { return 2.0 * r * t; }, ps};
    throw ConfigError("unknown growth rate '" + name + "'");
}

GrowthRate rho_exp(std::vector<double> t, std::vector<double> rho) {
    if (t.size() != rho.size() || t.size() < 4)
        throw ConfigError("rho_exp: need at least 4 samples with matching columns");
    for (std::size_t i = 1; i < t.size(); ++i)
        if (!(t[i] > t[i - 1])) throw ConfigError("rho_exp: sample times must be strictly increasing");
    if (t.front() > 0.0 || t.back() < 0.0)
        throw ConfigError("rho_exp: samples must cover t=0");
    const Domain dom = t.front() >= 0.0 ? Domain::HalfLine : Domain::FullLine;
    const double t0 = t.front(), t1 = t.back();
    using boost::math::interpolators::pchip;
    auto interp = std::make_shared<pchip<std::vector<double>>>(std::move(t), std::move(rho));
    const double r0 = (*interp)(t0), r1 = (*interp)(t1);
    const double d0 = interp->prime(t0), d1 = interp->prime(t1);
    auto value = [=](double x) {
        if (x < t0) return r0 + d0 * (x - t0);
        if (x > t1) return r1 + d1 * (x - t1);
        return (*interp)(x);
    };
    auto slope = [=](double x) {
        if (x < t0) return d0;
        if (x > t1) return d1;
        return interp->prime(x);
    };
    return {"rho_exp", dom, value, slope, {}};
}

GrowthRate rho_exp_from_csv(const std::string& path) {
    CsvTable table = read_csv(path);
    if (table.header.size() != 2) throw ConfigError(path + ": expected two columns t,rho");
    std::vector<double> t, rho;
    for (const auto& row : table.rows) {
        t.push_back(row[0]);
        rho.push_back(row[1]);
    }
    return rho_exp(std::move(t), std::move(rho));
}

GrowthRate product(const GrowthRate& u, const GrowthRate& v) {
    const Domain d = (u.domain() == Domain::HalfLine || v.domain() == Domain::HalfLine)
                         ? Domain::HalfLine
                         : Domain::FullLine;
    return {u.name() + "*" + v.name(), d,
            [u, v](double t) { return u.log_eval(t) + v.log_eval(t); },
            [u, v](double t) { return u.dlog(t) + v.dlog(t); }};
}

RatioPower ratio_power(const GrowthRate& rate, double t, double s, double p) {
    const double lv = p * (rate.log_eval(t) - rate.log_eval(s));
    constexpr double cap = 700.0;
    if (lv > cap) return {std::numeric_limits<double>::infinity(), lv, true};
    if (lv < -cap) return {std::exp(-cap), lv, true};
    return {std::exp(lv), lv, false};
}

ValidationReport validate(const GrowthRate& rate, const std::vector<double>& probes,
                          const ValidationOptions& opts) {
    if (probes.empty()) throw PreconditionError("validate: empty probe grid");
    ValidationReport rep;
    auto add = [&rep](ValidationCheck c) {
        rep.pass = rep.pass && c.pass;
        rep.checks.push_back(std::move(c));
    };

    std::vector<double> ts = probes;
    std::sort(ts.begin(), ts.end());

    // Evaluation on every probe.
    std::vector<double> logs(ts.size());
    {
        ValidationCheck c{"evaluation", true, 0.0, ""};
        for (std::size_t i = 0; i < ts.size(); ++i) {
            try {
                logs[i] = rate.log_eval(ts[i]);
            } catch (const DomainError& e) {
                if (c.pass) c.detail = std::string("evaluation error: ") + e.what();
                c.pass = false;
                logs[i] = std::numeric_limits<double>::quiet_NaN();
            }
        }
        add(std::move(c));
    }

    {
        ValidationCheck c{"unit_at_zero", true, 0.0, ""};
        try {
            c.worst = std::abs(rate.eval(0.0) - 1.0);
            c.pass = c.worst <= 1e-12;
        } catch (const DomainError& e) {
            c.pass = false;
            c.detail = e.what();
        }
        add(std::move(c));
    }

    {
        ValidationCheck c{"monotone", true, 0.0, ""};
        for (std::size_t i = 1; i < ts.size(); ++i) {
            if (std::isnan(logs[i]) || std::isnan(logs[i - 1])) continue;
            // u(t_{i+1}) >= u(t_i)(1 - 1e-12) in log form
            const double drop = logs[i - 1] - logs[i];
            if (drop > c.worst) c.worst = drop;
            if (drop > -std::log1p(-1e-12)) {
                if (c.pass) {
                    std::ostringstream os;
                    os << "decreasing between t=" << ts[i - 1] << " and t=" << ts[i];
                    c.detail = os.str();
                }
                c.pass = false;
            }
        }
        add(std::move(c));
    }

    {
        ValidationCheck c{"limits", true, 0.0, ""};
        const double big = std::log(1.0 / opts.limit_tol);
        try {
            const double up = rate.log_eval(opts.limit_probe);
            if (!(up > big)) {
                c.pass = false;
                c.detail = "u(T) does not exceed 1/tol";
            }
            if (rate.domain() == Domain::FullLine) {
                const double down = rate.log_eval(-opts.limit_probe);
                if (!(down < -big)) {
                    c.pass = false;
                    c.detail = "u(-T) is not below tol";
                }
            }
        } catch (const DomainError& e) {
            c.pass = false;
            c.detail = e.what();
        }
        add(std::move(c));
    }

    {
        ValidationCheck c{"derivative", true, 0.0, ""};
        for (std::size_t i = 0; i < ts.size(); ++i) {
            if (std::isnan(logs[i])) continue;
            const double t = ts[i];
            const double d = opts.fd_step * std::max(1.0, std::abs(t));
            double fd;
            if (rate.in_domain(t - d)) {
                fd = (rate.eval(t + d) - rate.eval(t - d)) / (2.0 * d);
            } else {
                // second-order one-sided difference at the half-line boundary
                fd = (-3.0 * rate.eval(t) + 4.0 * rate.eval(t + d) - rate.eval(t + 2.0 * d)) /
                     (2.0 * d);
            }
            const double an = rate.deriv(t);
            const double res = std::abs(an - fd) / std::max(1.0, std::abs(an));
            if (res > c.worst) {
                c.worst = res;
                std::ostringstream os;
                os << "worst at t=" << t;
                c.detail = os.str();
            }
        }
        c.pass = c.worst <= 1e-6;
        add(std::move(c));
    }
    return rep;
}

} // namespace gdich
