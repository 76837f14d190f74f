#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace modlanet::linalg {

using Vec = std::vector<double>;

/// Dense row-major square matrix, sized for the small systems handled here
/// (generalized-coordinate dimensions of at most a few dozen).
struct Mat {
    std::size_t n = 0;
    Vec a;

    Mat() = default;
    explicit Mat(std::size_t dim) : n(dim), a(dim * dim, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return a[r * n + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a[r * n + c]; }
};

/// Solve A x = b for symmetric A via LDL^T without pivoting.
/// Returns false when a pivot collapses (matrix indefinite or singular).
bool ldlt_solve(const Mat& A, std::span<const double> b, std::span<double> x);

/// Solve A x = b via LU with full pivoting; returns false only for a
/// numerically singular matrix.
bool full_pivot_solve(const Mat& A, std::span<const double> b, std::span<double> x);

/// Symmetric solve with the fallback chain used by the Euler-Lagrange path:
/// LDL^T first, full pivoting when the factorization fails.
bool sym_solve(const Mat& A, std::span<const double> b, std::span<double> x);

}  // namespace modlanet::linalg
