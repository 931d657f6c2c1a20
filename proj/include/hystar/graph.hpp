#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <unsupported/Eigen/SpecialFunctions>

#include "hystar/errors.hpp"
#include "hystar/tensor.hpp"

namespace hystar {

/// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;
    bool valid() const noexcept { return id != npos; }
};

namespace debug {
/// Test hook: when set, the matmul adjoint for the left operand is scaled by
/// 1.01, which gradient checks must detect.
inline bool corrupt_matmul_adjoint = false;
} // namespace debug

/// `disabled` records values only: leaves act as constants and no adjoint
/// closures are kept, for inference.
enum class GradMode { enabled, disabled };

/// Tape of executed operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and a reverse sweep visits consumers before producers. Leaves reference
/// caller-owned tensors; backward() adds into their gradient slot, so those
/// tensors must outlive the graph and must not move while it is in use.
template <typename T>
class Graph {
public:
    Graph() = default;
    explicit Graph(GradMode mode) : grad_enabled_(mode == GradMode::enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// A value that never receives gradient.
    Var constant(Tensor<T> value) { return push(std::move(value), false, {}, "constant"); }

    /// A caller-owned tensor; gradient flows into it iff it requires grad.
    Var leaf(Tensor<T>& param) {
        Tensor<T> copy(param.shape(), param.storage());
        const bool tracked = grad_enabled_ && param.requires_grad();
        Var v = push(std::move(copy), tracked, {}, "leaf");
        if (tracked) nodes_[v.id].leaf = &param;
        return v;
    }

    const Tensor<T>& value(Var v) const { return node(v).value; }
    bool requires_grad(Var v) const { return node(v).needs_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // ---- linear algebra -------------------------------------------------

    /// a[m x k] * b[k x n]
    Var matmul(Var a, Var b) {
        const auto& A = value(a);
        const auto& B = value(b);
        if (A.cols() != B.rows())
            throw ShapeError("matmul: inner dimensions differ " + shape_str(A.shape()) + " * " +
                             shape_str(B.shape()));
        Tensor<T> out({A.rows(), B.cols()});
        as_matrix(out).noalias() = as_matrix(A) * as_matrix(B);
        return record(std::move(out), {a, b}, "matmul", [this, a, b](std::size_t self) {
            auto dC = adj_map(self);
            if (needs(a)) {
                auto dA = adj_map(a.id);
                if (debug::corrupt_matmul_adjoint)
                    dA.noalias() += T(1.01) * dC * val_map(b).transpose();
                else
                    dA.noalias() += dC * val_map(b).transpose();
            }
            if (needs(b)) adj_map(b.id).noalias() += val_map(a).transpose() * dC;
        });
    }

    /// a[m x k] * b[n x k]^T
    Var matmul_nt(Var a, Var b) {
        const auto& A = value(a);
        const auto& B = value(b);
        if (A.cols() != B.cols())
            throw ShapeError("matmul_nt: inner dimensions differ " + shape_str(A.shape()) + " * " +
                             shape_str(B.shape()) + "^T");
        Tensor<T> out({A.rows(), B.rows()});
        as_matrix(out).noalias() = as_matrix(A) * as_matrix(B).transpose();
        return record(std::move(out), {a, b}, "matmul_nt", [this, a, b](std::size_t self) {
            auto dC = adj_map(self);
            if (needs(a)) {
                auto dA = adj_map(a.id);
                if (debug::corrupt_matmul_adjoint)
                    dA.noalias() += T(1.01) * dC * val_map(b);
                else
                    dA.noalias() += dC * val_map(b);
            }
            if (needs(b)) adj_map(b.id).noalias() += dC.transpose() * val_map(a);
        });
    }

    Var transpose(Var a) {
        Tensor<T> out = hystar::transpose(value(a));
        return record(std::move(out), {a}, "transpose", [this, a](std::size_t self) {
            adj_map(a.id) += adj_map(self).transpose();
        });
    }

    // ---- elementwise ----------------------------------------------------

    Var add(Var a, Var b) {
        return binary(a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
                      [](T, T) { return T{1}; });
    }
    Var sub(Var a, Var b) {
        return binary(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
                      [](T, T) { return T{-1}; });
    }
    Var mul(Var a, Var b) {
        return binary(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                      [](T x, T) { return x; });
    }

    Var scale(Var a, T factor) {
        return unary(a, "scale", [factor](T x) { return factor * x; },
                     [factor](T, T) { return factor; });
    }
    Var shift(Var a, T offset) {
        return unary(a, "shift", [offset](T x) { return x + offset; }, [](T, T) { return T{1}; });
    }
    Var relu(Var a) {
        return unary(a, "relu", [](T x) { return x > T{0} ? x : T{0}; },
                     [](T x, T) { return x > T{0} ? T{1} : T{0}; });
    }
    /// Exact GELU, x * Phi(x).
    Var gelu(Var a) {
        using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
        constexpr T rsqrt2 = T{1} / std::numbers::sqrt2_v<T>;
        const auto& A = value(a);
        auto x = Eigen::Map<const Arr>(A.data(), static_cast<Eigen::Index>(A.numel()));
        Tensor<T> out(A.shape());
        Eigen::Map<Arr>(out.data(), x.size()) = T(0.5) * x * (T{1} + (x * rsqrt2).erf());
        return record(std::move(out), {a}, "gelu", [this, a](std::size_t self) {
            constexpr T rsqrt2 = T{1} / std::numbers::sqrt2_v<T>;
            constexpr T pdf_scale = std::numbers::inv_sqrtpi_v<T> * (T{1} / std::numbers::sqrt2_v<T>);
            const auto& A = nodes_[a.id].value;
            auto x = Eigen::Map<const Arr>(A.data(), static_cast<Eigen::Index>(A.numel()));
            auto dY = Eigen::Map<const Arr>(adj(self).data(), x.size());
            auto dA = Eigen::Map<Arr>(adj(a.id).data(), x.size());
            dA += dY * (T(0.5) * (T{1} + (x * rsqrt2).erf()) + x * pdf_scale * (T(-0.5) * x.square()).exp());
        });
    }
    Var exp(Var a) {
        return unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
    }
    Var log(Var a) {
        for (T x : value(a).values())
            if (!(x > T{0})) throw DomainError("log of non-positive value");
        return unary(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
    }

    // ---- row-structured ops ---------------------------------------------

    /// Adds a row vector (1 x n or n) to every row of x[m x n].
    Var add_row(Var x, Var row) {
        const auto& X = value(x);
        const auto& R = value(row);
        if (R.numel() != X.cols())
            throw ShapeError("add_row: row of " + std::to_string(R.numel()) + " for " +
                             std::to_string(X.cols()) + " columns");
        Tensor<T> out = X;
        out.clear_grad();
        as_matrix(out).rowwise() += as_matrix(R.data(), 1, R.numel()).row(0);
        return record(std::move(out), {x, row}, "add_row", [this, x, row](std::size_t self) {
            auto dY = adj_map(self);
            if (needs(x)) adj_map(x.id) += dY;
            if (needs(row)) {
                auto& dr = adj(row.id);
                as_matrix(dr.data(), 1, dr.size()).row(0) += dY.colwise().sum();
            }
        });
    }

    /// Multiplies row i of x[(G*L) x n] elementwise by row floor(i / L) of
    /// scales[G x n]; a single scale row applies to every row.
    Var scale_row_groups(Var x, Var scales) {
        const auto& X = value(x);
        const auto& S = value(scales);
        if (S.cols() != X.cols() || X.rows() % S.rows() != 0)
            throw ShapeError("scale_row_groups: " + shape_str(X.shape()) + " by " +
                             shape_str(S.shape()));
        const std::size_t group = X.rows() / S.rows();
        Tensor<T> out({X.rows(), X.cols()});
        {
            auto Y = as_matrix(out);
            auto Xm = as_matrix(X);
            auto Sm = as_matrix(S);
            for (std::size_t i = 0; i < X.rows(); ++i)
                Y.row(i) = Xm.row(i).cwiseProduct(Sm.row(i / group));
        }
        return record(std::move(out), {x, scales}, "scale_row_groups",
                      [this, x, scales, group](std::size_t self) {
                          auto dY = adj_map(self);
                          const auto rows = static_cast<std::size_t>(dY.rows());
                          if (needs(x)) {
                              auto dX = adj_map(x.id);
                              auto Sm = val_map(scales);
                              for (std::size_t i = 0; i < rows; ++i)
                                  dX.row(i) += dY.row(i).cwiseProduct(Sm.row(i / group));
                          }
                          if (needs(scales)) {
                              auto dS = adj_map(scales.id);
                              auto Xm = val_map(x);
                              for (std::size_t i = 0; i < rows; ++i)
                                  dS.row(i / group) += dY.row(i).cwiseProduct(Xm.row(i));
                          }
                      });
    }

    /// Rows of x at the given indices, in order.
    Var gather_rows(Var x, std::vector<std::size_t> indices) {
        const auto& X = value(x);
        if (indices.empty()) throw ShapeError("gather_rows: no indices");
        Tensor<T> out({indices.size(), X.cols()});
        for (std::size_t r = 0; r < indices.size(); ++r) {
            if (indices[r] >= X.rows()) throw ShapeError("gather_rows: index out of range");
            as_matrix(out).row(r) = as_matrix(X).row(indices[r]);
        }
        return record(std::move(out), {x}, "gather_rows",
                      [this, x, idx = std::move(indices)](std::size_t self) {
                          auto dY = adj_map(self);
                          auto dX = adj_map(x.id);
                          for (std::size_t r = 0; r < idx.size(); ++r) dX.row(idx[r]) += dY.row(r);
                      });
    }

    /// Row-wise softmax with max subtraction.
    Var softmax_rows(Var x) {
        const auto& X = value(x);
        Tensor<T> out({X.rows(), X.cols()});
        for (std::size_t i = 0; i < X.rows(); ++i)
            softmax_row(&X.data()[i * X.cols()], &out.data()[i * X.cols()], X.cols());
        return record(std::move(out), {x}, "softmax_rows", [this, x](std::size_t self) {
            auto dY = adj_map(self);
            auto Y = val_map(Var{self});
            auto dX = adj_map(x.id);
            for (Eigen::Index i = 0; i < dY.rows(); ++i) {
                const T dot = dY.row(i).dot(Y.row(i));
                dX.row(i).array() += Y.row(i).array() * (dY.row(i).array() - dot);
            }
        });
    }

    /// Per-row log(sum_j exp(x_ij)), stabilised; result is m x 1.
    Var logsumexp_rows(Var x) {
        const auto& X = value(x);
        const std::size_t n = X.cols();
        Tensor<T> out({X.rows(), 1});
        for (std::size_t i = 0; i < X.rows(); ++i) {
            const T* row = &X.data()[i * n];
            T m = *std::max_element(row, row + n);
            T s{0};
            for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - m);
            out[i] = m + std::log(s);
        }
        return record(std::move(out), {x}, "logsumexp_rows", [this, x](std::size_t self) {
            auto dY = adj_map(self);
            auto X = val_map(x);
            auto Y = val_map(Var{self});
            auto dX = adj_map(x.id);
            for (Eigen::Index i = 0; i < X.rows(); ++i)
                dX.row(i).array() += dY(i, 0) * (X.row(i).array() - Y(i, 0)).exp();
        });
    }

    /// Per-row log(sum_j w_ij exp(x_ij)) for constant non-negative weights;
    /// zero-weight entries are excluded exactly. Result is m x 1.
    Var weighted_logsumexp_rows(Var x, Tensor<T> weights) {
        const auto& X = value(x);
        if (weights.numel() != X.numel())
            throw ShapeError("weighted_logsumexp_rows: weight shape mismatch");
        const std::size_t n = X.cols();
        Tensor<T> out({X.rows(), 1});
        for (std::size_t i = 0; i < X.rows(); ++i) {
            T m = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                const T w = weights[i * n + j];
                if (w < T{0} || !std::isfinite(w))
                    throw DomainError("weighted_logsumexp_rows: weights must be finite and >= 0");
                if (w > T{0}) m = std::max(m, X[i * n + j]);
            }
            if (!std::isfinite(m)) throw NumericError("weighted_logsumexp_rows: row has no weight");
            T s{0};
            for (std::size_t j = 0; j < n; ++j) {
                const T w = weights[i * n + j];
                if (w > T{0}) s += w * std::exp(X[i * n + j] - m);
            }
            out[i] = m + std::log(s);
        }
        return record(std::move(out), {x}, "weighted_logsumexp_rows",
                      [this, x, w = std::move(weights), n](std::size_t self) {
                          auto dY = adj_map(self);
                          const auto& X = value(x);
                          const auto& Y = nodes_[self].value;
                          auto& dX = adj(x.id);
                          for (std::size_t i = 0; i < X.rows(); ++i)
                              for (std::size_t j = 0; j < n; ++j)
                                  if (w[i * n + j] > T{0})
                                      dX[i * n + j] +=
                                          dY(i, 0) * w[i * n + j] * std::exp(X[i * n + j] - Y[i]);
                      });
    }

    /// Diagonal of a square matrix as an n x 1 column.
    Var diagonal(Var x) {
        const auto& X = value(x);
        if (X.rows() != X.cols()) throw ShapeError("diagonal: matrix is not square");
        Tensor<T> out({X.rows(), 1});
        for (std::size_t i = 0; i < X.rows(); ++i) out[i] = X(i, i);
        return record(std::move(out), {x}, "diagonal", [this, x](std::size_t self) {
            auto& dY = adj(self);
            auto& dX = adj(x.id);
            const std::size_t n = dY.size();
            for (std::size_t i = 0; i < n; ++i) dX[i * n + i] += dY[i];
        });
    }

    /// max_{j != i} x_ij as an n x 1 column; ties resolve to the lowest j.
    Var max_offdiag_rows(Var x) {
        const auto& X = value(x);
        const std::size_t n = X.rows();
        if (n != X.cols() || n < 2) throw ShapeError("max_offdiag_rows: need square n >= 2");
        Tensor<T> out({n, 1});
        std::vector<std::size_t> arg(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = i == 0 ? 1 : 0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i && X(i, j) > X(i, best)) best = j;
            arg[i] = best;
            out[i] = X(i, best);
        }
        return record(std::move(out), {x}, "max_offdiag_rows",
                      [this, x, arg = std::move(arg)](std::size_t self) {
                          auto& dY = adj(self);
                          auto& dX = adj(x.id);
                          const std::size_t n = dY.size();
                          for (std::size_t i = 0; i < n; ++i) dX[i * n + arg[i]] += dY[i];
                      });
    }

    /// Rows scaled to unit Euclidean norm.
    Var normalize_rows(Var x) {
        const auto& X = value(x);
        Tensor<T> out({X.rows(), X.cols()});
        AlignedVector<T> norms(X.rows());
        for (std::size_t i = 0; i < X.rows(); ++i) {
            norms[i] = as_matrix(X).row(i).norm();
            if (!(norms[i] > T{0})) throw NumericError("normalize_rows: zero-norm row");
            as_matrix(out).row(i) = as_matrix(X).row(i) / norms[i];
        }
        return record(std::move(out), {x}, "normalize_rows",
                      [this, x, norms = std::move(norms)](std::size_t self) {
                          auto dY = adj_map(self);
                          auto Y = val_map(Var{self});
                          auto dX = adj_map(x.id);
                          for (Eigen::Index i = 0; i < dY.rows(); ++i) {
                              const T dot = dY.row(i).dot(Y.row(i));
                              dX.row(i) += (dY.row(i) - dot * Y.row(i)) / norms[i];
                          }
                      });
    }

    /// Per-row standardisation (zero mean, unit variance), no affine part.
    Var layer_norm_rows(Var x, T eps = T(1e-5)) {
        const auto& X = value(x);
        const auto n = static_cast<T>(X.cols());
        Tensor<T> out({X.rows(), X.cols()});
        AlignedVector<T> inv_std(X.rows());
        for (std::size_t i = 0; i < X.rows(); ++i) {
            auto row = as_matrix(X).row(i).array();
            const T mean = row.sum() / n;
            const T var = (row - mean).square().sum() / n;
            inv_std[i] = T{1} / std::sqrt(var + eps);
            as_matrix(out).row(i).array() = (row - mean) * inv_std[i];
        }
        return record(std::move(out), {x}, "layer_norm_rows",
                      [this, x, inv = std::move(inv_std), n](std::size_t self) {
                          auto dY = adj_map(self);
                          auto Y = val_map(Var{self});
                          auto dX = adj_map(x.id);
                          for (Eigen::Index i = 0; i < dY.rows(); ++i) {
                              const T mean_dy = dY.row(i).sum() / n;
                              const T mean_dyy = dY.row(i).dot(Y.row(i)) / n;
                              dX.row(i).array() += inv[i] * (dY.row(i).array() - mean_dy -
                                                             Y.row(i).array() * mean_dyy);
                          }
                      });
    }

    /// Multi-head scaled dot-product attention over independent sequences.
    ///
    /// q, k, v are (B*L) x (H*dh) with the B sequences stacked by rows and the
    /// H heads laid out as contiguous column blocks.
    Var attention(Var q, Var k, Var v, std::size_t seq_len, std::size_t heads) {
        const auto& Q = value(q);
        const auto& K = value(k);
        const auto& V = value(v);
        if (Q.shape() != K.shape() || Q.shape() != V.shape())
            throw ShapeError("attention: q, k, v shapes differ");
        if (seq_len == 0 || Q.rows() % seq_len != 0 || heads == 0 || Q.cols() % heads != 0)
            throw ShapeError("attention: bad sequence/head split");
        const std::size_t B = Q.rows() / seq_len;
        const std::size_t dh = Q.cols() / heads;
        const T scale = T{1} / std::sqrt(static_cast<T>(dh));
        const auto L = static_cast<Eigen::Index>(seq_len);
        const auto D = static_cast<Eigen::Index>(dh);

        Tensor<T> out({Q.rows(), Q.cols()});
        AlignedVector<T> probs(B * heads * seq_len * seq_len);
        auto Qm = as_matrix(Q), Km = as_matrix(K), Vm = as_matrix(V);
        auto Om = as_matrix(out);
        RowMatrix<T> scores(L, L);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
                const auto r0 = static_cast<Eigen::Index>(b * seq_len);
                const auto c0 = static_cast<Eigen::Index>(h * dh);
                scores.noalias() =
                    scale * Qm.block(r0, c0, L, D) * Km.block(r0, c0, L, D).transpose();
                T* P = &probs[(b * heads + h) * seq_len * seq_len];
                for (Eigen::Index i = 0; i < L; ++i)
                    softmax_row(scores.row(i).data(), P + i * L, seq_len);
                auto Pm = as_matrix(static_cast<const T*>(P), seq_len, seq_len);
                Om.block(r0, c0, L, D).noalias() = Pm * Vm.block(r0, c0, L, D);
            }
        }
        return record(
            std::move(out), {q, k, v}, "attention",
            [this, q, k, v, B, heads, seq_len, dh, scale, probs = std::move(probs)](std::size_t self) {
                const auto L = static_cast<Eigen::Index>(seq_len);
                const auto D = static_cast<Eigen::Index>(dh);
                auto dO = adj_map(self);
                auto Qm = val_map(q), Km = val_map(k), Vm = val_map(v);
                auto dQ = adj_map(q.id), dK = adj_map(k.id), dV = adj_map(v.id);
                RowMatrix<T> dP(L, L);
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t h = 0; h < heads; ++h) {
                        const auto r0 = static_cast<Eigen::Index>(b * seq_len);
                        const auto c0 = static_cast<Eigen::Index>(h * dh);
                        auto Pm = as_matrix(&probs[(b * heads + h) * seq_len * seq_len], seq_len,
                                            seq_len);
                        auto dOb = dO.block(r0, c0, L, D);
                        if (needs(v)) dV.block(r0, c0, L, D).noalias() += Pm.transpose() * dOb;
                        dP.noalias() = dOb * Vm.block(r0, c0, L, D).transpose();
                        for (Eigen::Index i = 0; i < L; ++i) {
                            const T dot = dP.row(i).dot(Pm.row(i));
                            dP.row(i).array() = Pm.row(i).array() * (dP.row(i).array() - dot);
                        }
                        if (needs(q))
                            dQ.block(r0, c0, L, D).noalias() +=
                                scale * dP * Km.block(r0, c0, L, D);
                        if (needs(k))
                            dK.block(r0, c0, L, D).noalias() +=
                                scale * dP.transpose() * Qm.block(r0, c0, L, D);
                    }
                }
            });
    }

    // ---- reductions -------------------------------------------------------

    Var sum(Var x) {
        T s{0};
        for (T v : value(x).values()) s += v;
        return record(Tensor<T>::scalar(s), {x}, "sum", [this, x](std::size_t self) {
            const T g = adj(self)[0];
            for (auto& d : adj(x.id)) d += g;
        });
    }

    Var mean(Var x) { return scale(sum(x), T{1} / static_cast<T>(value(x).numel())); }

    // ---- differentiation --------------------------------------------------

    /// Populates the gradient slot of every requires-grad leaf reachable from
    /// `loss` with d(loss)/d(leaf), adding to whatever is already there.
    void backward(Var loss) {
        const auto& L = value(loss);
        if (L.numel() != 1)
            throw ContractError("backward: loss must be a scalar, got " + shape_str(L.shape()));
        for (auto& n : nodes_) n.adjoint.clear();
        if (!nodes_[loss.id].needs_grad) return;
        adj(loss.id)[0] = T{1};
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.needs_grad || n.adjoint.empty()) continue;
            if (n.backprop) n.backprop(i);
            if (n.leaf) n.leaf->accumulate_grad(n.adjoint);
        }
    }

private:
    struct Node {
        Tensor<T> value;
        AlignedVector<T> adjoint;
        std::function<void(std::size_t)> backprop;
        Tensor<T>* leaf = nullptr;
        bool needs_grad = false;
    };

    const Node& node(Var v) const {
        if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
        return nodes_[v.id];
    }
    bool needs(Var v) const { return nodes_[v.id].needs_grad; }

    AlignedVector<T>& adj(std::size_t id) {
        auto& n = nodes_[id];
        if (n.adjoint.empty()) n.adjoint.assign(n.value.numel(), T{0});
        return n.adjoint;
    }
    Eigen::Map<RowMatrix<T>> adj_map(std::size_t id) {
        auto& a = adj(id);
        return as_matrix(a.data(), nodes_[id].value.rows(), nodes_[id].value.cols());
    }
    Eigen::Map<const RowMatrix<T>> val_map(Var v) const { return as_matrix(nodes_[v.id].value); }

    Var push(Tensor<T> value, bool needs_grad, std::function<void(std::size_t)> backprop,
             const char* op) {
        if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite result");
        nodes_.push_back(Node{std::move(value), {}, std::move(backprop), nullptr, needs_grad});
        return Var{nodes_.size() - 1};
    }

    template <typename F>
    Var record(Tensor<T> value, std::initializer_list<Var> inputs, const char* op, F&& backprop) {
        bool ng = false;
        for (Var in : inputs) ng = ng || node(in).needs_grad;
        return push(std::move(value), ng,
                    ng ? std::function<void(std::size_t)>(std::forward<F>(backprop)) : nullptr, op);
    }

    template <typename F, typename DF>
    Var unary(Var a, const char* op, F f, DF df) {
        const auto& A = value(a);
        Tensor<T> out(A.shape());
        for (std::size_t i = 0; i < A.numel(); ++i) out[i] = f(A[i]);
        return record(std::move(out), {a}, op, [this, a, df](std::size_t self) {
            const auto& A = nodes_[a.id].value;
            const auto& Y = nodes_[self].value;
            auto& dY = adj(self);
            auto& dA = adj(a.id);
            for (std::size_t i = 0; i < dA.size(); ++i) dA[i] += dY[i] * df(A[i], Y[i]);
        });
    }

    // Same shape, or either side holding a single element (scalar broadcast).
    template <typename F, typename DFA, typename DFB>
    Var binary(Var a, Var b, const char* op, F f, DFA dfa, DFB dfb) {
        const auto& A = value(a);
        const auto& B = value(b);
        const bool a_scalar = A.numel() == 1 && B.numel() != 1;
        const bool b_scalar = B.numel() == 1 && A.numel() != 1;
        if (!a_scalar && !b_scalar && A.shape() != B.shape())
            throw ShapeError(std::string(op) + ": shapes differ " + shape_str(A.shape()) + " vs " +
                             shape_str(B.shape()));
        const Shape& shape = a_scalar ? B.shape() : A.shape();
        Tensor<T> out(shape);
        for (std::size_t i = 0; i < out.numel(); ++i)
            out[i] = f(A[a_scalar ? 0 : i], B[b_scalar ? 0 : i]);
        return record(std::move(out), {a, b}, op,
                      [this, a, b, a_scalar, b_scalar, dfa, dfb](std::size_t self) {
                          const auto& A = nodes_[a.id].value;
                          const auto& B = nodes_[b.id].value;
                          const T* dY = adj(self).data();
                          const std::size_t n = nodes_[self].value.numel();
                          T* dA = needs(a) ? adj(a.id).data() : nullptr;
                          T* dB = needs(b) ? adj(b.id).data() : nullptr;
                          const std::size_t sa = a_scalar ? 0 : 1, sb = b_scalar ? 0 : 1;
                          for (std::size_t i = 0; i < n; ++i) {
                              const T x = A[i * sa], y = B[i * sb];
                              if (dA) dA[i * sa] += dY[i] * dfa(x, y);
                              if (dB) dB[i * sb] += dY[i] * dfb(x, y);
                          }
                      });
    }

    static void softmax_row(const T* in, T* out, std::size_t n) {
        using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
        auto x = Eigen::Map<const Arr>(in, static_cast<Eigen::Index>(n));
        auto y = Eigen::Map<Arr>(out, static_cast<Eigen::Index>(n));
        y = (x - x.maxCoeff()).exp();
        y /= y.sum();
    }

    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
};

/// Free-function spelling of Graph::backward.
template <typename T>
void backward(Var loss, Graph<T>& graph) {
    graph.backward(loss);
}

} // namespace hystar
