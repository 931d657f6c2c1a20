#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>

#include "hystar/graph.hpp"
#include "hystar/linalg.hpp"
#include "hystar/tensor.hpp"

namespace hystar {

/// A frozen weight W0 = U diag(s) V^T whose singular values can be offset.
///
/// The effective map is W = U diag(s + ds_static + ds_dynamic) V^T. U, s and V
/// are fixed at construction; only the static offsets are a trainable tensor.
/// Dynamic offsets are supplied per forward call, one row per sample.
template <typename T>
class SpectralLayer {
public:
    SpectralLayer() = default;

    /// Factorizes W0 (d1 x d2, maps R^d2 -> R^d1). Static offsets start at zero.
    static SpectralLayer factorize(const Tensor<T>& W0) {
        if (W0.rank() != 2) throw ShapeError("factorize: weight must be a matrix");
        if (!W0.all_finite()) throw NumericError("factorize: non-finite weight");
        const Svd svd = svd_jacobi(W0.template cast<double>());
        SpectralLayer layer;
        layer.base_ = W0;
        layer.base_.set_requires_grad(false);
        layer.U_ = svd.U.template cast<T>();
        layer.V_ = svd.V.template cast<T>();
        layer.s_ = Tensor<T>({svd.s.size()});
        for (std::size_t i = 0; i < svd.s.size(); ++i) layer.s_[i] = static_cast<T>(svd.s[i]);
        layer.delta_static_ = Tensor<T>({svd.s.size()});
        return layer;
    }

    std::size_t out_dim() const noexcept { return U_.rows(); }
    std::size_t in_dim() const noexcept { return V_.rows(); }
    std::size_t rank() const noexcept { return s_.numel(); }

    const Tensor<T>& base() const noexcept { return base_; }
    const Tensor<T>& U() const noexcept { return U_; }
    const Tensor<T>& s() const noexcept { return s_; }
    const Tensor<T>& V() const noexcept { return V_; }

    Tensor<T>& delta_static() noexcept { return delta_static_; }
    const Tensor<T>& delta_static() const noexcept { return delta_static_; }

    bool static_trainable() const noexcept { return delta_static_.requires_grad(); }
    void set_static_trainable(bool on) noexcept { delta_static_.set_requires_grad(on); }

    bool dynamic_enabled() const noexcept { return dynamic_enabled_; }
    void set_dynamic_enabled(bool on) noexcept { dynamic_enabled_ = on; }

    /// y = x W^T with W = U diag(s + ds) V^T.
    ///
    /// `x` is (G*L) x d2; `delta_dyn`, required iff dynamic offsets are
    /// enabled, is G x r and row g modulates rows [g*L, (g+1)*L) of x. With
    /// per-sample offsets the product is factored as ((x V) * eff) U^T;
    /// otherwise W is formed once on the tape and applied densely.
    Var forward(Graph<T>& g, Var x, std::optional<Var> delta_dyn = std::nullopt) {
        if (delta_dyn.has_value() != dynamic_enabled_)
            throw ContractError(dynamic_enabled_ ? "spectral layer expects dynamic offsets"
                                                 : "spectral layer does not accept dynamic offsets");
        if (g.value(x).cols() != in_dim())
            throw ShapeError("modulated_forward: input width " + std::to_string(g.value(x).cols()) +
                             " for layer of input dim " + std::to_string(in_dim()));
        Var eff;
        if (static_trainable()) {
            eff = g.add(g.constant(s_), g.leaf(delta_static_));
        } else {
            Tensor<T> sv = s_;
            for (std::size_t i = 0; i < sv.numel(); ++i) sv[i] += delta_static_[i];
            eff = g.constant(std::move(sv));
        }
        if (!delta_dyn) {
            Var W = g.matmul_nt(g.scale_row_groups(g.constant(U_), eff), g.constant(V_));
            return g.matmul_nt(x, W);
        }
        if (g.value(*delta_dyn).cols() != rank())
            throw ShapeError("modulated_forward: dynamic offsets of width " +
                             std::to_string(g.value(*delta_dyn).cols()) + ", rank is " +
                             std::to_string(rank()));
        eff = g.add_row(*delta_dyn, eff);
        Var h = g.matmul(x, g.constant(V_));
        h = g.scale_row_groups(h, eff);
        return g.matmul_nt(h, g.constant(U_));
    }

    /// Dense U diag(s + ds_static + ds_dyn) V^T.
    Tensor<T> merge(std::span<const T> delta_dyn = {}) const {
        if (!delta_dyn.empty() && delta_dyn.size() != rank())
            throw ShapeError("merge: dynamic offsets length differs from rank");
        Tensor<T> eff = s_;
        for (std::size_t i = 0; i < rank(); ++i)
            eff[i] += delta_static_[i] + (delta_dyn.empty() ? T{0} : delta_dyn[i]);
        Tensor<T> W({out_dim(), in_dim()});
        auto Um = as_matrix(U_);
        auto Vm = as_matrix(V_);
        as_matrix(W).noalias() =
            Um * as_matrix(eff.data(), 1, rank()).row(0).asDiagonal() * Vm.transpose();
        return W;
    }

private:
    Tensor<T> base_;
    Tensor<T> U_;
    Tensor<T> s_;
    Tensor<T> V_;
    Tensor<T> delta_static_;
    bool dynamic_enabled_ = false;
};

template <typename T>
SpectralLayer<T> svd_factorize(const Tensor<T>& W0) {
    return SpectralLayer<T>::factorize(W0);
}

template <typename T>
Var modulated_forward(Graph<T>& g, SpectralLayer<T>& layer, Var x,
                      std::optional<Var> delta_dyn = std::nullopt) {
    return layer.forward(g, x, delta_dyn);
}

template <typename T>
Tensor<T> merge(const SpectralLayer<T>& layer, std::span<const T> delta_dyn = {}) {
    return layer.merge(delta_dyn);
}

/// ||W - W0||_2 for a singular-value offset, which is max_i |ds_i|.
template <typename T>
T spectral_delta_norm(const SpectralLayer<T>& layer, std::span<const T> delta_s) {
    if (delta_s.size() != layer.rank()) throw ShapeError("spectral_delta_norm: length differs from rank");
    T m{0};
    for (T d : delta_s) m = std::max(m, std::abs(d));
    return m;
}

} // namespace hystar
