#pragma once

// Thin singular value decomposition via one-sided Jacobi rotations, plus the
// nuclear norm and its thresholded subgradient. Jacobi is chosen for
// reliability on the small, possibly rank-deficient feature matrices this
// library works with: every rotation is orthogonal, so factors stay
// numerically orthonormal without iterative refinement.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "ole/common.hpp"
#include "ole/matrix.hpp"

namespace ole {

/// Thin SVD of an m x n matrix: u is m x k, vt is k x n, k = min(m, n).
/// singular_values are sorted non-increasing and u/vt columns/rows follow
/// that order. Column signs are not canonicalized; only sign-invariant
/// quantities (sigma, u*vt products, subspaces) are stable across platforms.
struct SvdResult {
    Matrix u;
    std::vector<double> singular_values;
    Matrix vt;
};

namespace detail {

// One-sided Jacobi on a tall matrix (rows >= cols). Orthogonalizes the
// columns of a working copy W by plane rotations, accumulating the same
// rotations into V; on exit A = W * V^T with W having orthogonal columns,
// so sigma_j = |W_j| and U_j = W_j / sigma_j.
inline SvdResult jacobi_svd_tall(const Matrix& a) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    Matrix w = a;
    Matrix v = Matrix::identity(n);

    constexpr double kRelTol = 1e-14;
    // Columns this small relative to the whole matrix are rotation residue
    // (or genuinely negligible); snap them to exact zero. Without the snap,
    // a pair of numerically parallel columns never satisfies the relative
    // criterion: |gamma| equals sqrt(alpha*beta) for parallel columns no
    // matter how tiny the smaller one gets, and the sweep loop stalls.
    constexpr double kZeroTol = 1e-14;
    constexpr int kMaxSweeps = 100;

    const double anorm = frobenius_norm(a);

    bool converged = false;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = w(i, p);
                    const double wq = w(i, q);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if (std::sqrt(alpha) <= kZeroTol * anorm) {
                    for (std::size_t i = 0; i < m; ++i) w(i, p) = 0.0;
                    continue;
                }
                if (std::sqrt(beta) <= kZeroTol * anorm) {
                    for (std::size_t i = 0; i < m; ++i) w(i, q) = 0.0;
                    continue;
                }
                if (std::abs(gamma) <= kRelTol * std::sqrt(alpha * beta)) continue;
                converged = false;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;

                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = w(i, p);
                    const double wq = w(i, q);
                    w(i, p) = c * wp - s * wq;
                    w(i, q) = s * wp + c * wq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p);
                    const double vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
    }
    if (!converged) {
        throw DecompositionError("svd: Jacobi sweeps did not converge for a " +
                                 std::to_string(m) + "x" + std::to_string(n) + " matrix");
    }

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < m; ++i) sum += w(i, j) * w(i, j);
        sigma[j] = std::sqrt(sum);
    }

    // Non-increasing order; stable so equal values keep their relative order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

    SvdResult out;
    out.u = Matrix(m, n);
    out.vt = Matrix(n, n);
    out.singular_values.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.singular_values[j] = sigma[src];
        if (sigma[src] > 0.0) {
            const double inv = 1.0 / sigma[src];
            for (std::size_t i = 0; i < m; ++i) out.u(i, j) = w(i, src) * inv;
        }
        for (std::size_t i = 0; i < n; ++i) out.vt(j, i) = v(i, src);
    }

    // A zero singular value leaves a zero column in u; complete it to an
    // orthonormal basis by Gram-Schmidt over the canonical basis so u always
    // has orthonormal columns.
    for (std::size_t j = 0; j < n; ++j) {
        if (out.singular_values[j] > 0.0) continue;
        std::vector<double> cand(m, 0.0);
        bool placed = false;
        for (std::size_t e = 0; e < m && !placed; ++e) {
            std::fill(cand.begin(), cand.end(), 0.0);
            cand[e] = 1.0;
            for (std::size_t k = 0; k < n; ++k) {
                if (k == j) continue;
                // Zero columns after j have not been completed yet.
                if (out.singular_values[k] <= 0.0 && k > j) continue;
                double dot = 0.0;
                for (std::size_t i = 0; i < m; ++i) dot += cand[i] * out.u(i, k);
                for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * out.u(i, k);
            }
            double norm = 0.0;
            for (double x : cand) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 0.5) {
                for (std::size_t i = 0; i < m; ++i) out.u(i, j) = cand[i] / norm;
                placed = true;
            }
        }
        if (!placed) {
            throw DecompositionError("svd: failed to complete orthonormal basis for a " +
                                     std::to_string(m) + "x" + std::to_string(n) + " matrix");
        }
    }
    return out;
}

} // namespace detail

/// Thin SVD. Handles wide matrices (m < n) by decomposing the transpose.
inline SvdResult svd(const Matrix& a) {
    if (a.rows() == 0 || a.cols() == 0) {
        throw std::invalid_argument("svd: matrix must have at least one row and one column");
    }
    if (!a.all_finite()) {
        throw std::invalid_argument("svd: non-finite entries");
    }
    if (a.rows() >= a.cols()) {
        return detail::jacobi_svd_tall(a);
    }
    // A^T = U' S V'^T  =>  A = V' S U'^T.
    SvdResult t = detail::jacobi_svd_tall(transpose(a));
    SvdResult out;
    out.u = transpose(t.vt);
    out.singular_values = std::move(t.singular_values);
    out.vt = transpose(t.u);
    return out;
}

/// Rebuilds u * diag(sigma) * vt; intended for verifying factorizations.
inline Matrix reconstruct(const SvdResult& f) {
    const std::size_t k = f.singular_values.size();
    Matrix scaled = f.u;
    for (std::size_t i = 0; i < scaled.rows(); ++i)
        for (std::size_t j = 0; j < k; ++j) scaled(i, j) *= f.singular_values[j];
    return scaled * f.vt;
}

inline double nuclear_norm(const SvdResult& f) {
    return std::accumulate(f.singular_values.begin(), f.singular_values.end(), 0.0);
}

/// Sum of singular values.
inline double nuclear_norm(const Matrix& a) { return nuclear_norm(svd(a)); }

/// Subgradient of the nuclear norm at the decomposed point: U1 * V1^T over
/// the singular vectors whose sigma exceeds the threshold strictly. With no
/// sigma above threshold the subgradient is the zero matrix.
inline Matrix nuclear_subgradient(const SvdResult& f, double sv_threshold) {
    const std::size_t m = f.u.rows();
    const std::size_t n = f.vt.cols();
    const std::size_t k = f.singular_values.size();
    std::size_t r = 0;
    while (r < k && f.singular_values[r] > sv_threshold) ++r;
    Matrix g(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < r; ++l) {
            const double uil = f.u(i, l);
            for (std::size_t j = 0; j < n; ++j) g(i, j) += uil * f.vt(l, j);
        }
    }
    return g;
}

inline Matrix nuclear_subgradient(const Matrix& a, double sv_threshold) {
    return nuclear_subgradient(svd(a), sv_threshold);
}

} // namespace ole
