#include "modlanet/linalg.hpp"

#include <cmath>
#include <cstdlib>
#include <numeric>

namespace modlanet::linalg {

bool ldlt_solve(const Mat& A, std::span<const double> b, std::span<double> x) {
    const std::size_t n = A.n;
    Mat L(n);
    Vec d(n, 0.0);

    double scale = 0.0;
    for (double v : A.a) scale = std::max(scale, std::abs(v));
    const double tiny = (scale > 0.0 ? scale : 1.0) * 1e-14;

    for (std::size_t j = 0; j < n; ++j) {
        double dj = A(j, j);
        for (std::size_t k = 0; k < j; ++k) dj -= L(j, k) * L(j, k) * d[k];
        if (!std::isfinite(dj) || std::abs(dj) < tiny) return false;
        d[j] = dj;
        L(j, j) = 1.0;
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = A(i, j);
            for (std::size_t k = 0; k < j; ++k) v -= L(i, k) * L(j, k) * d[k];
            L(i, j) = v / dj;
        }
    }

    // forward: L y = b, diagonal: z = y / d, backward: L^T x = z
    for (std::size_t i = 0; i < n; ++i) {
        double v = b[i];
        for (std::size_t k = 0; k < i; ++k) v -= L(i, k) * x[k];
        x[i] = v;
    }
    for (std::size_t i = 0; i < n; ++i) x[i] /= d[i];
    for (std::size_t ii = n; ii-- > 0;) {
        double v = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) v -= L(k, ii) * x[k];
        x[ii] = v;
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

bool full_pivot_solve(const Mat& A, std::span<const double> b, std::span<double> x) {
    const std::size_t n = A.n;
    Mat U = A;
    Vec rhs(b.begin(), b.end());
    std::vector<std::size_t> col(n);
    std::iota(col.begin(), col.end(), std::size_t{0});

    double scale = 0.0;
    for (double v : A.a) scale = std::max(scale, std::abs(v));
    const double tiny = (scale > 0.0 ? scale : 1.0) * 1e-300;

    for (std::size_t k = 0; k < n; ++k) {
        std::size_t pr = k, pc = k;
        double best = -1.0;
        for (std::size_t r = k; r < n; ++r)
            for (std::size_t c = k; c < n; ++c)
                if (std::abs(U(r, c)) > best) {
                    best = std::abs(U(r, c));
                    pr = r;
                    pc = c;
                }
        if (!(best > tiny) || !std::isfinite(best)) return false;
        if (pr != k)
            for (std::size_t c = 0; c < n; ++c) std::swap(U(k, c), U(pr, c));
        if (pr != k) std::swap(rhs[k], rhs[pr]);
        if (pc != k) {
            for (std::size_t r = 0; r < n; ++r) std::swap(U(r, k), U(r, pc));
            std::swap(col[k], col[pc]);
        }
        for (std::size_t r = k + 1; r < n; ++r) {
            const double f = U(r, k) / U(k, k);
            U(r, k) = 0.0;
            for (std::size_t c = k + 1; c < n; ++c) U(r, c) -= f * U(k, c);
            rhs[r] -= f * rhs[k];
        }
    }
    Vec y(n, 0.0);
    for (std::size_t ii = n; ii-- > 0;) {
        double v = rhs[ii];
        for (std::size_t c = ii + 1; c < n; ++c) v -= U(ii, c) * y[c];
        y[ii] = v / U(ii, ii);
    }
    for (std::size_t i = 0; i < n; ++i) x[col[i]] = y[i];
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

bool sym_solve(const Mat& A, std::span<const double> b, std::span<double> x) {
    if (ldlt_solve(A, b, x)) return true;
    return full_pivot_solve(A, b, x);
}

}  // namespace modlanet::linalg
