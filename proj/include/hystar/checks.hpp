#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "hystar/encoder.hpp"
#include "hystar/gradcheck.hpp"
#include "hystar/hypernet.hpp"
#include "hystar/spectral.hpp"
#include "hystar/stylence.hpp"

namespace hystar {

enum class GradScope { loss, layer, end2end };

inline GradScope parse_grad_scope(const std::string& s) {
    if (s == "loss") return GradScope::loss;
    if (s == "layer") return GradScope::layer;
    if (s == "end2end") return GradScope::end2end;
    throw ConfigError("gradcheck.scope", "unknown scope '" + s + "' (loss, layer, end2end)");
}

inline std::string to_string(GradScope s) {
    switch (s) {
    case GradScope::loss: return "loss";
    case GradScope::layer: return "layer";
    case GradScope::end2end: return "end2end";
    }
    return "?";
}

/// Largest admissible relative error for a scope.
inline double grad_threshold(GradScope s) { return s == GradScope::end2end ? 1e-4 : 1e-5; }

/// Gradients of every contrastive loss with respect to both embedding blocks.
/// StyleNCE weights are computed once and then held fixed.
inline std::vector<GradCheckEntry> gradcheck_loss(std::uint64_t seed = 0) {
    Rng rng = make_rng(seed, "gradcheck", 0);
    const std::size_t n = 6, d = 5;
    auto Q = uniform_tensor<double>({n, d}, rng, -2, 2);
    auto P = uniform_tensor<double>({n, d}, rng, -2, 2);
    LossConfig cfg;
    cfg.tau = 0.5;
    cfg.gamma = 3.0;
    cfg.triplet_margin = 0.5;
    std::vector<GradCheckEntry> out;
    auto similarity = [&](Graph<double>& g) {
        return similarity_matrix(g, g.normalize_rows(g.leaf(Q)), g.normalize_rows(g.leaf(P)));
    };
    Tensor<double> S0;
    {
        Graph<double> g(GradMode::disabled);
        S0 = g.value(similarity(g));
    }
    const SquareMatrix omega = stylence_weights(S0, cfg);
    const std::vector<std::pair<std::string, LossBuilder>> losses = {
        {"infonce", [&](Graph<double>& g) { return infonce(g, similarity(g), cfg.tau); }},
        {"stylence", [&](Graph<double>& g) { return stylence_weighted(g, similarity(g), omega, cfg.gamma, cfg.tau); }},
        {"triplet", [&](Graph<double>& g) { return triplet_loss(g, similarity(g), cfg.triplet_margin); }},
        {"infonce_hard", [&](Graph<double>& g) { return infonce_hard_negative(g, similarity(g), cfg.tau, 2); }},
    };
    for (const auto& [name, build] : losses)
        for (auto& e : check_gradients(build, {{name + ".queries", &Q}, {name + ".positives", &P}}))
            out.push_back(e);
    return out;
}

/// Gradients through one modulated linear map and one hypernetwork.
inline std::vector<GradCheckEntry> gradcheck_layer(std::uint64_t seed = 0) {
    Rng rng = make_rng(seed, "gradcheck", 1);
    auto layer = svd_factorize(uniform_tensor<double>({6, 5}, rng, -1, 1));
    layer.set_static_trainable(true);
    layer.set_dynamic_enabled(true);
    layer.delta_static() = uniform_tensor<double>({layer.rank()}, rng, -0.5, 0.5);
    auto x = uniform_tensor<double>({4, 5}, rng, -2, 2);
    auto dyn = uniform_tensor<double>({4, layer.rank()}, rng, -0.5, 0.5);
    auto R = uniform_tensor<double>({4, 6}, rng, -1, 1);
    auto out = check_gradients(
        [&](Graph<double>& g) {
            Var y = layer.forward(g, g.leaf(x), g.leaf(dyn));
            return g.sum(g.mul(y, g.constant(R)));
        },
        {{"spectral.input", &x}, {"spectral.delta_static", &layer.delta_static()}, {"spectral.delta_dynamic", &dyn}});

    for (Activation act : {Activation::relu, Activation::gelu}) {
        HyperNet<double> net(4, 5, {7}, act, rng);
        for (auto* p : net.parameters()) *p = uniform_tensor<double>(p->shape(), rng, -1, 1);
        auto z = uniform_tensor<double>({3, 4}, rng, -2, 2);
        auto Rh = uniform_tensor<double>({3, 5}, rng, -1, 1);
        std::vector<NamedParam> params{{"hypernet." + to_string(act) + ".z", &z}};
        for (std::size_t i = 0; i < net.layers().size(); ++i) {
            params.push_back({"hypernet." + to_string(act) + "." + std::to_string(i) + ".weight", &net.layers()[i].weight});
            params.push_back({"hypernet." + to_string(act) + "." + std::to_string(i) + ".bias", &net.layers()[i].bias});
        }
        for (auto& e : check_gradients(
                 [&](Graph<double>& g) { return g.sum(g.mul(net.forward(g, g.leaf(z)), g.constant(Rh))); }, params))
            out.push_back(e);
    }
    return out;
}

/// Tiny encoder configuration used by the end-to-end check.
inline EncoderConfig gradcheck_encoder_config() {
    EncoderConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_layers = 2;
    c.mlp_ratio = 2;
    c.injected_layers = {2};
    c.embed_dim = 4;
    c.d_style = 4;
    c.style_channels = 2;
    return c;
}

/// StyleNCE through a 2-layer encoder with respect to every trainable tensor.
/// Offsets and hypernetwork output layers are randomized first so that no
/// pathway sits at its zero initialization.
inline std::vector<GradCheckEntry> gradcheck_end2end(std::uint64_t seed = 0, AblationMode mode = AblationMode::hybrid) {
    const EncoderConfig cfg = gradcheck_encoder_config();
    Encoder<double> enc(cfg, seed);
    StyleExtractor<double> ex(cfg, seed);
    Rng rng = make_rng(seed, "gradcheck", 2);
    for (auto& b : enc.blocks())
        for (auto* s : {&b.q, &b.k, &b.v, &b.o, &b.fc1, &b.fc2})
            s->delta_static() = uniform_tensor<double>({s->rank()}, rng, -0.3, 0.3);
    for (auto* nets : {&enc.attention_hypernets(), &enc.mlp_hypernets()})
        for (auto& h : *nets) {
            auto& last = h.layers().back();
            last.weight = uniform_tensor<double>(last.weight.shape(), rng, -0.3, 0.3);
            last.bias = uniform_tensor<double>(last.bias.shape(), rng, -0.3, 0.3);
        }
    enc.set_ablation_mode(mode); // after the assignments above, which reset trainability
    const std::size_t n = 3;
    auto images = uniform_tensor<double>({2 * n, cfg.pixels()}, rng, 0, 1);
    const Tensor<double> tokens = enc.embed_tokens(images);
    const Tensor<double> z = ex.extract(images);
    std::vector<std::size_t> qi(n), pi(n);
    for (std::size_t i = 0; i < n; ++i) {
        qi[i] = i;
        pi[i] = n + i;
    }
    LossConfig lc;
    lc.tau = 0.5;
    lc.gamma = 3.0;
    auto similarity = [&](Graph<double>& g) {
        Var e = enc.forward(g, tokens, z);
        return similarity_matrix(g, g.gather_rows(e, qi), g.gather_rows(e, pi));
    };
    Tensor<double> S0;
    {
        Graph<double> g(GradMode::disabled);
        S0 = g.value(similarity(g));
    }
    const SquareMatrix omega = stylence_weights(S0, lc);

    std::vector<NamedParam> params;
    const auto stat = enc.static_group();
    const auto hyper = enc.hyper_group();
    for (const auto& t : enc.named_tensors()) {
        if (!t.writable) continue;
        const bool live = std::find(stat.begin(), stat.end(), t.writable) != stat.end() ||
                          std::find(hyper.begin(), hyper.end(), t.writable) != hyper.end();
        if (live) params.push_back({t.name, t.writable});
    }
    return check_gradients(
        [&](Graph<double>& g) { return stylence_weighted(g, similarity(g), omega, lc.gamma, lc.tau); }, params);
}

inline std::vector<GradCheckEntry> run_gradcheck(GradScope scope, std::uint64_t seed = 0) {
    switch (scope) {
    case GradScope::loss: return gradcheck_loss(seed);
    case GradScope::layer: return gradcheck_layer(seed);
    case GradScope::end2end: return gradcheck_end2end(seed);
    }
    return {};
}

} // namespace hystar
