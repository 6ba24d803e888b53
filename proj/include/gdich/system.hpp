#pragma once

#include "gdich/core.hpp"
#include "gdich/growth.hpp"
#include "gdich/spec.hpp"

#include <string>
#include <vector>

namespace gdich {

struct CoefficientField {
    int dim = 0;
    std::function<Mat(double)> fn;
    Domain domain = Domain::FullLine;
    bool continuous = true;
    std::string name;
    /// Times where A may fail to be smooth; integrators stop there.
    std::vector<double> breakpoints;
    /// Data range of tabulated fields.
    double support_lo = -std::numeric_limits<double>::infinity();
    double support_hi = std::numeric_limits<double>::infinity();

    bool in_domain(double t) const noexcept;
    /// A(t); throws DomainError outside the domain or data range.
    Mat operator()(double t) const;
};

CoefficientField make_field(std::string name, int dim, std::function<Mat(double)> fn,
                            Domain domain = Domain::FullLine,
                            std::vector<double> breakpoints = {});
CoefficientField const_matrix(const Mat& a, std::string name = "const");
CoefficientField const_diag(const std::vector<double>& diag);
/// Linear interpolation of rows t, a11, a12, ..., ann.
CoefficientField tabulated_field(const std::vector<double>& t, const std::vector<Mat>& a);
CoefficientField tabulated_field_from_csv(const std::string& path);

/// t ↦ −A(t)ᵀ.
CoefficientField adjoint(const CoefficientField& field);
/// t ↦ A(t) + B(t).
CoefficientField add(const CoefficientField& field, std::function<Mat(double)> b,
                     std::string name = "");

struct BlockSystem {
    CoefficientField W1;
    CoefficientField W2;
    int split = 0;

    static BlockSystem make(CoefficientField w1, CoefficientField w2);
    /// diag(W1, W2).
    CoefficientField full() const;
    /// P = diag(I_l, 0).
    Mat block_projection() const;
};

using Param = Vec;

struct ParameterSpace {
    Vec lo;
    Vec hi;
    int dim() const { return static_cast<int>(lo.size()); }
    void validate() const;
    bool contains(const Param& p) const;
};

enum class LipschitzKind { Conjugacy, Manifold };

struct NonlinearTerm {
    int dim = 0;
    std::function<Vec(double, const Vec&, const Param&)> fn;
    LipschitzKind kind = LipschitzKind::Conjugacy;
    double alpha = 0.0; ///< conjugacy: sup bound
    double gamma = 0.0; ///< conjugacy: Lipschitz constant
    double chat = 0.0;  ///< manifold: ĉ
    double q = 1.0;     ///< manifold: power
    bool zero_at_origin = true;
    std::string name;

    Vec operator()(double t, const Vec& x, const Param& lambda) const { return fn(t, x, lambda); }
    bool is_zero() const noexcept { return name == "zero"; }

    static NonlinearTerm zero(int dim, LipschitzKind kind = LipschitzKind::Conjugacy);
};

/// Max ‖f(t,0,λ)‖ over the probes.
double origin_residual(const NonlinearTerm& f, const std::vector<double>& ts,
                       const std::vector<Param>& lambdas);

struct Example22Params {
    double eta1 = 1.0;
    double eta2 = 0.1;
    double eta3 = 1.0;
    RateQuadruple hats{builtin("exp"), builtin("exp"), builtin("expabs"), builtin("expabs")};
};

struct Example22 {
    CoefficientField field;
    std::function<Mat(double, double)> analytic;
    DichotomySpec spec;
};

/// The diagonal example with the oscillating nonuniform coefficients and its
/// closed-form evolution. When a nonuniform hat is expabs, the spec stores the
/// exp rate with the same values on |s|.
Example22 make_example22(const Example22Params& params,
                         Domain requested = Domain::FullLine);

} // namespace gdich
