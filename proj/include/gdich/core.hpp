#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gdich {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr int kMaxDim = 16;

enum class Domain { FullLine, HalfLine };

std::string to_string(Domain d);

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Integration or iteration failure. `time` is set when the failure is located in time.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what,
                            std::optional<double> time = std::nullopt)
        : Error(what), time_(time) {}
    std::optional<double> time() const noexcept { return time_; }

private:
    std::optional<double> time_;
};

/// Spectral norm (largest singular value).
double opnorm(const Mat& m);

/// Identity of size n.
inline Mat eye(Eigen::Index n) { return Mat::Identity(n, n); }

/// Smallest eigenvalue / largest eigenvalue of the symmetric part.
double min_sym_eig(const Mat& m);
double max_sym_eig(const Mat& m);

/// Orthonormal basis of the column range of m (numerical rank by tol).
Mat range_basis(const Mat& m, double tol = 1e-9);

/// Uniformly spaced values from lo to hi inclusive.
std::vector<double> linspace(double lo, double hi, std::size_t count);

/// Values lo, lo+step, ... up to hi (hi included when it falls on the lattice).
std::vector<double> arange(double lo, double hi, double step);

/// All (t,s) pairs from the product of two grids.
std::vector<std::pair<double, double>> product_grid(const std::vector<double>& ts,
                                                    const std::vector<double>& ss);

} // namespace gdich
