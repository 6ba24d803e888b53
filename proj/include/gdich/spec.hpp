#pragma once

#include "gdich/core.hpp"
#include "gdich/growth.hpp"

namespace gdich {

/// t ↦ P(t), either constant or given by a callback; Q(t) = I − P(t).
class ProjectionFamily {
public:
    using Fn = std::function<Mat(double)>;

    /// Throws PreconditionError unless P² = P within 1e-10.
    static ProjectionFamily constant(const Mat& p);
    static ProjectionFamily analytic(Fn fn, int dim, int rank);

    Mat P(double t) const;
    Mat Q(double t) const;
    int dim() const noexcept { return dim_; }
    int rank() const noexcept { return rank_; }
    bool is_constant() const noexcept { return constant_; }

private:
    ProjectionFamily(Fn fn, int dim, int rank, bool constant)
        : fn_(std::move(fn)), dim_(dim), rank_(rank), constant_(constant) {}
    Fn fn_;
    int dim_;
    int rank_;
    bool constant_;
};

/// Projection family with the constants of the four-parameter bound.
struct DichotomySpec {
    ProjectionFamily P;
    RateQuadruple rates;
    double K;
    double a;
    double b;
    double eps;

    /// Throws PreconditionError unless a < 0 <= b, K > 0, eps >= 0.
    void validate() const;
};

} // namespace gdich
