#include "gdich/core.hpp"
#include "gdich/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace gdich {

std::string to_string(Domain d) {
    return d == Domain::FullLine ? "full-line" : "half-line";
}

double opnorm(const Mat& m) {
    if (m.size() == 0) return 0.0;
    if (m.rows() == 1 || m.cols() == 1) return m.norm();
    Eigen::JacobiSVD<Mat> svd(m);
    return svd.singularValues()(0);
}

double min_sym_eig(const Mat& m) {
    Mat s = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(s, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

double max_sym_eig(const Mat& m) {
    Mat s = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(s, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

Mat range_basis(const Mat& m, double tol) {
    Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    Eigen::Index r = 0;
    const double scale = sv.size() > 0 ? std::max(1.0, sv(0)) : 1.0;
    while (r < sv.size() && sv(r) > tol * scale) ++r;
    return svd.matrixU().leftCols(r);
}

std::vector<double> linspace(double lo, double hi, std::size_t count) {
    std::vector<double> out;
    if (count == 0) return out;
    if (count == 1) return {lo};
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    out.back() = hi;
    return out;
}

std::vector<double> arange(double lo, double hi, double step) {
    if (!(step > 0)) throw PreconditionError("arange: step must be positive");
    std::vector<double> out;
    const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
    for (long i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
    return out;
}

std::vector<std::pair<double, double>> product_grid(const std::vector<double>& ts,
                                                    const std::vector<double>& ss) {
    std::vector<std::pair<double, double>> out;
    out.reserve(ts.size() * ss.size());
    for (double t : ts)
        for (double s : ss) out.emplace_back(t, s);
    return out;
}

namespace {
std::atomic<unsigned> g_max_threads{0};
}

void set_max_threads(unsigned n) { g_max_threads = n; }

unsigned max_threads() {
    unsigned n = g_max_threads.load();
    if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
    const unsigned workers = static_cast<unsigned>(
        std::min<std::size_t>(max_threads(), count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::size_t err_index = count;
    std::exception_ptr err;
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lk(err_mu);
                if (i < err_index) {
                    err_index = i;
                    err = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

} // namespace gdich
