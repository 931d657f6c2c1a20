#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hystar/errors.hpp"
#include "hystar/graph.hpp"
#include "hystar/rng.hpp"

namespace hystar {

enum class Activation { relu, gelu };

inline Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    throw ConfigError("hypernet.activation", "unknown activation '" + s + "'");
}

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }

/// Hidden-layer widths for a hypernetwork producing r outputs.
///
/// "r", "2r", "4r": one hidden layer of that width (the width study).
/// "depth1", "depth2", "depth3": 0, 1 or 2 hidden layers of width 2r (the
/// depth study). "2r" and "depth2" are the same default shape.
inline std::vector<std::size_t> hypernet_layout(const std::string& spec, std::size_t r) {
    if (spec == "r") return {r};
    if (spec == "2r" || spec == "depth2") return {2 * r};
    if (spec == "4r") return {4 * r};
    if (spec == "depth1") return {};
    if (spec == "depth3") return {2 * r, 2 * r};
    throw ConfigError("hypernet.layout", "unsupported layout '" + spec + "'");
}

/// Perceptron mapping a style vector z to singular-value offsets:
/// H(z) = W_last sigma(... sigma(W_1 z + b_1) ...) + b_last.
///
/// The output layer starts at zero so H(z) = 0 for every z until trained.
template <typename T>
class HyperNet {
public:
    struct Dense {
        Tensor<T> weight; // out x in
        Tensor<T> bias;   // out
    };

    HyperNet() = default;

    HyperNet(std::size_t d_style, std::size_t r_out, const std::vector<std::size_t>& hidden,
             Activation act, Rng& rng)
        : d_style_(d_style), r_out_(r_out), act_(act) {
        if (d_style == 0 || r_out == 0) throw ConfigError("hypernet", "dimensions must be positive");
        std::size_t in = d_style;
        for (std::size_t width : hidden) {
            if (width == 0) throw ConfigError("hypernet", "hidden width must be positive");
            const double stddev = std::sqrt(2.0 / static_cast<double>(in));
            layers_.push_back({gaussian_tensor<T>({width, in}, rng, stddev), Tensor<T>({width})});
            in = width;
        }
        layers_.push_back({Tensor<T>({r_out, in}), Tensor<T>({r_out})});
        set_trainable(true);
    }

    std::size_t input_dim() const noexcept { return d_style_; }
    std::size_t output_dim() const noexcept { return r_out_; }
    Activation activation() const noexcept { return act_; }
    std::size_t depth() const noexcept { return layers_.size(); }
    const std::vector<Dense>& layers() const noexcept { return layers_; }
    std::vector<Dense>& layers() noexcept { return layers_; }

    std::vector<std::size_t> widths() const {
        std::vector<std::size_t> w{d_style_};
        for (const auto& l : layers_) w.push_back(l.weight.rows());
        return w;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l.weight.numel() + l.bias.numel();
        return n;
    }

    /// Tensors in a fixed order: weight_0, bias_0, weight_1, bias_1, ...
    std::vector<Tensor<T>*> parameters() {
        std::vector<Tensor<T>*> out;
        for (auto& l : layers_) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
        return out;
    }

    void set_trainable(bool on) {
        for (auto* p : parameters()) p->set_requires_grad(on);
    }

    /// z is batch x d_style; result is batch x r_out.
    Var forward(Graph<T>& g, Var z) {
        if (g.value(z).cols() != d_style_)
            throw ShapeError("hypernet_forward: style width " + std::to_string(g.value(z).cols()) +
                             ", expected " + std::to_string(d_style_));
        Var h = z;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = g.add_row(g.matmul_nt(h, g.leaf(layers_[i].weight)), g.leaf(layers_[i].bias));
            if (i + 1 < layers_.size()) h = act_ == Activation::relu ? g.relu(h) : g.gelu(h);
        }
        return h;
    }

private:
    std::size_t d_style_ = 0;
    std::size_t r_out_ = 0;
    Activation act_ = Activation::relu;
    std::vector<Dense> layers_;
};

template <typename T>
Var hypernet_forward(Graph<T>& g, HyperNet<T>& net, Var z) {
    return net.forward(g, z);
}

/// Hypernetwork for square d_model projections (r = d_model).
template <typename T>
HyperNet<T> hypernet_shape_for(std::size_t d_model, std::size_t d_style, const std::string& layout,
                               Rng& rng, Activation act = Activation::relu) {
    if (d_model == 0 || d_style == 0) throw ConfigError("hypernet", "dimensions must be positive");
    return HyperNet<T>(d_style, d_model, hypernet_layout(layout, d_model), act, rng);
}

} // namespace hystar
