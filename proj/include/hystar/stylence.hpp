#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "hystar/errors.hpp"
#include "hystar/graph.hpp"

namespace hystar {

struct LossConfig {
    double tau = 0.07;
    double gamma = 80.0;
    double lambda = 1.0;
    double epsilon = 1.0;
    int sinkhorn_iters = 50;
    double triplet_margin = 0.2;
    int hard_negatives = 0; // 0 selects ceil(N / 4)

    void validate() const {
        if (!(tau > 0)) throw ConfigError("loss.tau", "must be > 0");
        if (!(gamma >= 0)) throw ConfigError("loss.gamma", "must be >= 0");
        if (!(lambda > 0)) throw ConfigError("loss.lambda", "must be > 0");
        if (!(epsilon > 0)) throw ConfigError("loss.epsilon", "must be > 0");
        if (sinkhorn_iters < 1) throw ConfigError("loss.sinkhorn_iters", "must be >= 1");
        if (!(triplet_margin >= 0)) throw ConfigError("loss.triplet_margin", "must be >= 0");
        if (hard_negatives < 0) throw ConfigError("loss.hard_negatives", "must be >= 0");
    }
};

enum class LossKind { stylence, infonce, triplet, infonce_hard };

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "stylence") return LossKind::stylence;
    if (s == "infonce") return LossKind::infonce;
    if (s == "triplet") return LossKind::triplet;
    if (s == "infonce_hard") return LossKind::infonce_hard;
    throw ConfigError("train.loss", "unknown loss '" + s + "'");
}

inline std::string to_string(LossKind k) {
    switch (k) {
    case LossKind::stylence: return "stylence";
    case LossKind::infonce: return "infonce";
    case LossKind::triplet: return "triplet";
    case LossKind::infonce_hard: return "infonce_hard";
    }
    return "?";
}

/// Square N x N matrix of doubles, row-major.
struct SquareMatrix {
    std::size_t n = 0;
    std::vector<double> v;

    double operator()(std::size_t i, std::size_t j) const { return v[i * n + j]; }
    double& operator()(std::size_t i, std::size_t j) { return v[i * n + j]; }
};

/// Off-diagonal C_ij = exp((1 - S_ij) / lambda); the diagonal is +inf
/// (excluded from transport).
struct CostMatrix : SquareMatrix {};

/// Non-negative plan with zero diagonal and (approximately) unit marginals.
struct TransportPlan : SquareMatrix {
    /// max(|T 1 - 1|, |T^T 1 - 1|) after the last iteration.
    double marginal_deviation = 0.0;
    /// The same quantity after each iteration, in order.
    std::vector<double> deviation_history;
};

/// Cosine similarities S_ij = <q_i/|q_i|, p_j/|p_j|>; differentiable.
template <typename T>
Var similarity_matrix(Graph<T>& g, Var Q, Var P) {
    if (g.value(Q).cols() != g.value(P).cols())
        throw ShapeError("similarity_matrix: embedding widths differ");
    return g.matmul_nt(g.normalize_rows(Q), g.normalize_rows(P));
}

template <typename T>
CostMatrix cost_matrix(const Tensor<T>& S, double lambda) {
    if (!(lambda > 0)) throw ContractError("cost_matrix: lambda must be > 0");
    if (S.rows() != S.cols()) throw ShapeError("cost_matrix: similarity matrix is not square");
    CostMatrix C;
    C.n = S.rows();
    C.v.assign(C.n * C.n, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < C.n; ++i)
        for (std::size_t j = 0; j < C.n; ++j)
            if (i != j) C(i, j) = std::exp((1.0 - static_cast<double>(S(i, j))) / lambda);
    return C;
}

namespace detail {
inline double logsumexp(const double* x, std::size_t n, std::size_t stride) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) m = std::max(m, x[k * stride]);
    if (m == -std::numeric_limits<double>::infinity()) return m;
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += std::exp(x[k * stride] - m);
    return m + std::log(s);
}
} // namespace detail

/// Entropic transport plan between two uniform unit-mass marginals under
/// cost C, via log-domain Sinkhorn scaling with a fixed iteration count.
///
/// Kernel K_ij = exp(-C_ij / epsilon); infinite costs (the diagonal) give an
/// exact zero. Each iteration updates the row potentials then the column
/// potentials, so columns are balanced to rounding after every iteration and
/// the reported deviation is driven by the rows.
inline TransportPlan sinkhorn(const CostMatrix& C, double epsilon, int iters) {
    const std::size_t n = C.n;
    if (n < 2) throw ContractError("sinkhorn: need N >= 2 for a zero-diagonal doubly stochastic plan");
    if (!(epsilon > 0)) throw ContractError("sinkhorn: epsilon must be > 0");
    if (iters < 1) throw ContractError("sinkhorn: iteration count must be >= 1");
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();

    std::vector<double> logK(n * n);
    for (std::size_t k = 0; k < n * n; ++k) {
        const double c = C.v[k];
        if (std::isnan(c)) throw NumericError("sinkhorn: NaN cost");
        logK[k] = std::isinf(c) ? neg_inf : -c / epsilon;
    }
    for (std::size_t i = 0; i < n; ++i) {
        bool row_ok = false, col_ok = false;
        for (std::size_t j = 0; j < n; ++j) {
            row_ok = row_ok || logK[i * n + j] != neg_inf;
            col_ok = col_ok || logK[j * n + i] != neg_inf;
        }
        if (!row_ok || !col_ok)
            throw NumericError("sinkhorn: row or column " + std::to_string(i) + " is fully masked");
    }

    std::vector<double> f(n, 0.0), g(n, 0.0), buf(n * n);
    TransportPlan plan;
    plan.n = n;
    plan.v.assign(n * n, 0.0);
    plan.deviation_history.reserve(static_cast<std::size_t>(iters));

    auto materialize = [&] {
        double dev = 0.0;
        std::vector<double> col(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double lk = logK[i * n + j];
                const double t = (i == j || lk == neg_inf) ? 0.0 : std::exp((lk + f[i]) + g[j]);
                plan.v[i * n + j] = t;
                row += t;
                col[j] += t;
            }
            dev = std::max(dev, std::abs(row - 1.0));
        }
        for (double c : col) dev = std::max(dev, std::abs(c - 1.0));
        return dev;
    };

    for (int it = 0; it < iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) buf[j] = logK[i * n + j] + g[j];
            f[i] = -detail::logsumexp(buf.data(), n, 1);
        }
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < n; ++i) buf[i] = logK[i * n + j] + f[i];
            g[j] = -detail::logsumexp(buf.data(), n, 1);
        }
        plan.deviation_history.push_back(materialize());
    }
    plan.marginal_deviation = plan.deviation_history.back();
    for (double t : plan.v)
        if (!std::isfinite(t)) throw NumericError("sinkhorn: non-finite plan entry");
    return plan;
}

/// Mean over rows of -log softmax_i(S / tau)_ii.
template <typename T>
Var infonce(Graph<T>& g, Var S, double tau) {
    if (!(tau > 0)) throw ContractError("infonce: tau must be > 0");
    const auto& Sv = g.value(S);
    if (Sv.rows() != Sv.cols()) throw ShapeError("infonce: similarity matrix is not square");
    Var logits = g.scale(S, static_cast<T>(1.0 / tau));
    return g.mean(g.sub(g.logsumexp_rows(logits), g.diagonal(logits)));
}

/// StyleNCE with explicit negative weights omega (held constant).
///
/// Row i contributes -log(e_ii / (e_ii + gamma * sum_{j != i} omega_ij e_ij))
/// with e_ij = exp(S_ij / tau).
template <typename T>
Var stylence_weighted(Graph<T>& g, Var S, const SquareMatrix& omega, double gamma, double tau) {
    if (!(tau > 0)) throw ContractError("stylence: tau must be > 0");
    if (!(gamma >= 0)) throw ContractError("stylence: gamma must be >= 0");
    const auto& Sv = g.value(S);
    const std::size_t n = Sv.rows();
    if (Sv.cols() != n || omega.n != n) throw ShapeError("stylence: shape mismatch");
    Tensor<T> w({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            w(i, j) = i == j ? T{1} : static_cast<T>(gamma * omega(i, j));
    Var logits = g.scale(S, static_cast<T>(1.0 / tau));
    return g.mean(g.sub(g.weighted_logsumexp_rows(logits, std::move(w)), g.diagonal(logits)));
}

/// Transport plan used as StyleNCE negative weights for similarities S.
template <typename T>
TransportPlan stylence_weights(const Tensor<T>& S, const LossConfig& cfg) {
    return sinkhorn(cost_matrix(S, cfg.lambda), cfg.epsilon, cfg.sinkhorn_iters);
}

/// StyleNCE with omega = sinkhorn(cost_matrix(S)); omega is a constant for
/// differentiation.
template <typename T>
Var stylence(Graph<T>& g, Var S, const LossConfig& cfg) {
    const auto& Sv = g.value(S);
    if (Sv.rows() < 2) throw ContractError("stylence: need N >= 2");
    const TransportPlan plan = stylence_weights(Sv, cfg);
    return stylence_weighted(g, S, plan, cfg.gamma, cfg.tau);
}

/// Mean over rows of max(0, margin - S_ii + max_{j != i} S_ij).
template <typename T>
Var triplet_loss(Graph<T>& g, Var S, double margin) {
    Var gap = g.sub(g.max_offdiag_rows(S), g.diagonal(S));
    return g.mean(g.relu(g.shift(gap, static_cast<T>(margin))));
}

/// InfoNCE whose denominator keeps only the k most similar negatives of each
/// row (ties resolved toward the lower index).
template <typename T>
Var infonce_hard_negative(Graph<T>& g, Var S, double tau, std::size_t k) {
    const auto& Sv = g.value(S);
    const std::size_t n = Sv.rows();
    if (n < 2 || Sv.cols() != n) throw ContractError("infonce_hard_negative: need square N >= 2");
    if (k < 1 || k > n - 1) throw ContractError("infonce_hard_negative: k must be in [1, N-1]");
    Tensor<T> w({n, n});
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < n; ++i) {
        w(i, i) = T{1};
        cand.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) cand.push_back(j);
        std::stable_sort(cand.begin(), cand.end(),
                         [&](std::size_t a, std::size_t b) { return Sv(i, a) > Sv(i, b); });
        for (std::size_t t = 0; t < k; ++t) w(i, cand[t]) = T{1};
    }
    Var logits = g.scale(S, static_cast<T>(1.0 / tau));
    return g.mean(g.sub(g.weighted_logsumexp_rows(logits, std::move(w)), g.diagonal(logits)));
}

inline std::size_t default_hard_negatives(std::size_t n, int configured) {
    if (configured > 0) return std::min<std::size_t>(static_cast<std::size_t>(configured), n - 1);
    return std::max<std::size_t>(1, (n + 3) / 4);
}

/// Loss of the configured kind on a similarity matrix.
template <typename T>
Var contrastive_loss(Graph<T>& g, Var S, LossKind kind, const LossConfig& cfg) {
    switch (kind) {
    case LossKind::stylence: return stylence(g, S, cfg);
    case LossKind::infonce: return infonce(g, S, cfg.tau);
    case LossKind::triplet: return triplet_loss(g, S, cfg.triplet_margin);
    case LossKind::infonce_hard:
        return infonce_hard_negative(g, S, cfg.tau,
                                     default_hard_negatives(g.value(S).rows(), cfg.hard_negatives));
    }
    throw ContractError("contrastive_loss: unknown kind");
}

/// Row-major CSV with 9 significant digits; infinite entries print as "inf".
inline void write_matrix_csv(std::ostream& os, const SquareMatrix& m) {
    char buf[32];
    for (std::size_t i = 0; i < m.n; ++i) {
        for (std::size_t j = 0; j < m.n; ++j) {
            const double v = m(i, j);
            if (std::isinf(v))
                std::snprintf(buf, sizeof buf, "%s", v > 0 ? "inf" : "-inf");
            else
                std::snprintf(buf, sizeof buf, "%.9g", v);
            os << (j ? "," : "") << buf;
        }
        os << '\n';
    }
}

} // namespace hystar
