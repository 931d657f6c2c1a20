#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "hystar/errors.hpp"
#include "hystar/rng.hpp"
#include "hystar/tensor.hpp"

namespace hystar {

/// Thin singular value decomposition A = U diag(s) V^T with r = min(m, n).
struct Svd {
    Tensor<double> U; // m x r, orthonormal columns
    std::vector<double> s; // r values, non-increasing, >= 0
    Tensor<double> V; // n x r, orthonormal columns
    int sweeps = 0;
};

namespace detail {

// Extends the first `filled` orthonormal columns of Q (rows x cols) to a full
// orthonormal set by Gram-Schmidt against the standard basis.
inline void complete_orthonormal(RowMatrix<double>& Q, std::vector<bool> filled) {
    const auto rows = Q.rows();
    for (Eigen::Index j = 0; j < Q.cols(); ++j) {
        if (filled[static_cast<std::size_t>(j)]) continue;
        Eigen::VectorXd best;
        double best_norm = -1.0;
        for (Eigen::Index e = 0; e < rows; ++e) {
            Eigen::VectorXd v = Eigen::VectorXd::Unit(rows, e);
            for (int pass = 0; pass < 2; ++pass)
                for (Eigen::Index k = 0; k < Q.cols(); ++k)
                    if (filled[static_cast<std::size_t>(k)]) v -= Q.col(k).dot(v) * Q.col(k);
            const double nv = v.norm();
            if (nv > best_norm) {
                best_norm = nv;
                best = v;
            }
        }
        Q.col(j) = best / best_norm;
        filled[static_cast<std::size_t>(j)] = true;
    }
}

// One-sided (Hestenes) Jacobi on the columns of A, m >= n.
inline Svd jacobi_tall(const RowMatrix<double>& A, int max_sweeps) {
    const Eigen::Index m = A.rows(), n = A.cols();
    RowMatrix<double> G = A;
    RowMatrix<double> V = RowMatrix<double>::Identity(n, n);
    constexpr double tol = 1e-15;
    int sweep = 0;
    for (;; ++sweep) {
        if (sweep >= max_sweeps) throw NumericError("svd: Jacobi sweeps did not converge");
        bool rotated = false;
        for (Eigen::Index p = 0; p + 1 < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double alpha = G.col(p).squaredNorm();
                const double beta = G.col(q).squaredNorm();
                const double gamma = G.col(p).dot(G.col(q));
                if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
                const double c = 1.0 / std::hypot(1.0, t);
                const double s = c * t;
                for (Eigen::Index i = 0; i < m; ++i) {
                    const double gp = G(i, p), gq = G(i, q);
                    G(i, p) = c * gp - s * gq;
                    G(i, q) = s * gp + c * gq;
                }
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double vp = V(i, p), vq = V(i, q);
                    V(i, p) = c * vp - s * vq;
                    V(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> norms(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) norms[static_cast<std::size_t>(j)] = G.col(j).norm();
    std::vector<std::size_t> order(norms.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

    const double smax = norms.empty() ? 0.0 : norms[order[0]];
    const double floor = smax * 1e-13 * static_cast<double>(std::max(m, n));
    RowMatrix<double> U = RowMatrix<double>::Zero(m, n);
    RowMatrix<double> Vs(n, n);
    std::vector<bool> filled(static_cast<std::size_t>(n), false);
    Svd out;
    out.s.resize(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto j = static_cast<Eigen::Index>(order[static_cast<std::size_t>(k)]);
        const double sv = norms[static_cast<std::size_t>(j)];
        Vs.col(k) = V.col(j);
        if (sv > floor && sv > 0.0) {
            U.col(k) = G.col(j) / sv;
            filled[static_cast<std::size_t>(k)] = true;
            out.s[static_cast<std::size_t>(k)] = sv;
        } else {
            out.s[static_cast<std::size_t>(k)] = 0.0;
        }
    }
    complete_orthonormal(U, std::move(filled));

    out.U = Tensor<double>({static_cast<std::size_t>(m), static_cast<std::size_t>(n)});
    out.V = Tensor<double>({static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
    as_matrix(out.U) = U;
    as_matrix(out.V) = Vs;
    out.sweeps = sweep;
    return out;
}

} // namespace detail

/// Thin SVD by one-sided Jacobi rotations, computed in double precision.
inline Svd svd_jacobi(const Tensor<double>& A, int max_sweeps = 60) {
    if (A.rank() != 2) throw ShapeError("svd: expected a matrix, got " + shape_str(A.shape()));
    if (!A.all_finite()) throw NumericError("svd: non-finite input");
    if (A.rows() >= A.cols()) return detail::jacobi_tall(as_matrix(A), max_sweeps);
    RowMatrix<double> At = as_matrix(A).transpose();
    Svd t = detail::jacobi_tall(At, max_sweeps);
    return Svd{std::move(t.V), std::move(t.s), std::move(t.U), t.sweeps};
}

/// Largest singular value by power iteration on D^T D.
///
/// Stops once the eigen-residual is below `rel_tol` of the estimate or after
/// `max_iters`; ties between the top singular values do not slow the value
/// estimate, only the vector.
inline double spectral_norm_power(const Tensor<double>& D, std::uint64_t seed = 0,
                                  double rel_tol = 1e-13, int max_iters = 200000) {
    auto M = as_matrix(D);
    if (M.cwiseAbs().maxCoeff() == 0.0) return 0.0;
    Rng rng(seed);
    Eigen::VectorXd v(M.cols());
    for (auto& x : v) x = gaussian(rng);
    v.normalize();
    double lambda = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        Eigen::VectorXd w = M.transpose() * (M * v);
        lambda = v.dot(w);
        const double residual = (w - lambda * v).norm();
        if (residual <= rel_tol * lambda) break;
        v = w / w.norm();
    }
    return std::sqrt(std::max(lambda, 0.0));
}

/// max |Q^T Q - I| over all entries.
template <typename T>
double orthonormality_error(const Tensor<T>& Q) {
    auto M = as_matrix(Q).template cast<double>();
    RowMatrix<double> G = M.transpose() * M;
    return (G - RowMatrix<double>::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff();
}

} // namespace hystar
