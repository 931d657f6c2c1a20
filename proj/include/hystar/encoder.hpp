#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hystar/errors.hpp"
#include "hystar/graph.hpp"
#include "hystar/hypernet.hpp"
#include "hystar/rng.hpp"
#include "hystar/spectral.hpp"

namespace hystar {

struct EncoderConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 4;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 8;
    std::size_t mlp_ratio = 4;
    std::vector<std::size_t> injected_layers{2, 4, 6}; // 1-based
    std::size_t embed_dim = 64;
    std::size_t d_style = 32;
    std::string hypernet_layout = "2r";
    Activation hypernet_activation = Activation::relu;
    std::size_t style_channels = 8;
    bool style_bias = false;

    void validate() const {
        if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0)
            throw ConfigError("encoder.patch_size", "must divide encoder.image_size");
        if (d_model == 0) throw ConfigError("encoder.d_model", "must be positive");
        if (n_heads == 0 || d_model % n_heads != 0)
            throw ConfigError("encoder.n_heads", "must divide encoder.d_model");
        if (n_layers == 0) throw ConfigError("encoder.n_layers", "must be positive");
        if (mlp_ratio == 0) throw ConfigError("encoder.mlp_ratio", "must be positive");
        for (std::size_t l : injected_layers)
            if (l < 1 || l > n_layers)
                throw ConfigError("encoder.injected_layers",
                                  "layer " + std::to_string(l) + " outside [1, " + std::to_string(n_layers) + "]");
        if (embed_dim == 0) throw ConfigError("encoder.embed_dim", "must be positive");
        if (d_style == 0) throw ConfigError("encoder.d_style", "must be positive");
        if (style_channels == 0) throw ConfigError("encoder.style_channels", "must be positive");
        (void)hystar::hypernet_layout(hypernet_layout, d_model);
    }

    std::size_t grid() const noexcept { return image_size / patch_size; }
    std::size_t n_patches() const noexcept { return grid() * grid(); }
    std::size_t seq_len() const noexcept { return n_patches() + 1; }
    std::size_t pixels() const noexcept { return image_size * image_size; }
    std::size_t hidden() const noexcept { return d_model * mlp_ratio; }

    bool injected(std::size_t layer) const {
        return std::find(injected_layers.begin(), injected_layers.end(), layer) != injected_layers.end();
    }
};

enum class AblationMode { frozen, static_only, hyper_only, hybrid, reversed, dynamic_all };

inline AblationMode parse_ablation_mode(const std::string& s) {
    if (s == "frozen") return AblationMode::frozen;
    if (s == "static_only") return AblationMode::static_only;
    if (s == "hyper_only") return AblationMode::hyper_only;
    if (s == "hybrid") return AblationMode::hybrid;
    if (s == "reversed") return AblationMode::reversed;
    if (s == "dynamic_all") return AblationMode::dynamic_all;
    throw ConfigError("train.mode", "unknown ablation mode '" + s + "'");
}

inline std::string to_string(AblationMode m) {
    switch (m) {
    case AblationMode::frozen: return "frozen";
    case AblationMode::static_only: return "static_only";
    case AblationMode::hyper_only: return "hyper_only";
    case AblationMode::hybrid: return "hybrid";
    case AblationMode::reversed: return "reversed";
    case AblationMode::dynamic_all: return "dynamic_all";
    }
    return "?";
}

/// A model tensor under a stable name. `writable` is null for frozen tensors.
template <typename T>
struct NamedTensor {
    std::string name;
    const Tensor<T>* value;
    Tensor<T>* writable;
};

/// Frozen random convolutional style encoder:
/// conv3x3/2 -> ReLU -> conv3x3/2 -> ReLU -> global average pool.
template <typename T>
class StyleExtractor {
public:
    StyleExtractor() = default;

    StyleExtractor(const EncoderConfig& cfg, std::uint64_t seed)
        : size_(cfg.image_size), c1_(cfg.style_channels), c2_(cfg.d_style) {
        Rng rng = make_rng(seed, "style");
        w1_ = gaussian_tensor<T>({c1_, 9}, rng, std::sqrt(2.0 / 9.0));
        w2_ = gaussian_tensor<T>({c2_, c1_ * 9}, rng, std::sqrt(2.0 / (9.0 * static_cast<double>(c1_))));
        b1_ = Tensor<T>({c1_});
        b2_ = Tensor<T>({c2_});
        if (cfg.style_bias) {
            b1_ = gaussian_tensor<T>({c1_}, rng, 0.1);
            b2_ = gaussian_tensor<T>({c2_}, rng, 0.1);
        }
    }

    std::size_t output_dim() const noexcept { return c2_; }

    /// images: B x (size*size) in [0, 1]; result B x d_style.
    Tensor<T> extract(const Tensor<T>& images) const {
        if (images.rank() != 2 || images.cols() != size_ * size_)
            throw ShapeError("extract_style: expected B x " + std::to_string(size_ * size_) + " images, got " +
                             shape_str(images.shape()));
        const std::size_t B = images.rows();
        const std::size_t s1 = (size_ + 1) / 2, s2 = (s1 + 1) / 2;
        Tensor<T> z({B, c2_});
        AlignedVector<T> f1(c1_ * s1 * s1);
        for (std::size_t b = 0; b < B; ++b) {
            conv(images.data() + b * size_ * size_, 1, size_, w1_, b1_, c1_, s1, f1.data());
            AlignedVector<T> f2(c2_ * s2 * s2);
            conv(f1.data(), c1_, s1, w2_, b2_, c2_, s2, f2.data());
            for (std::size_t c = 0; c < c2_; ++c) {
                T acc{0};
                for (std::size_t i = 0; i < s2 * s2; ++i) acc += f2[c * s2 * s2 + i];
                z(b, c) = acc / static_cast<T>(s2 * s2);
            }
        }
        return z;
    }

    std::vector<NamedTensor<T>> named_tensors() const {
        return {{"style.conv1.weight", &w1_, nullptr},
                {"style.conv1.bias", &b1_, nullptr},
                {"style.conv2.weight", &w2_, nullptr},
                {"style.conv2.bias", &b2_, nullptr}};
    }

private:
    // 3x3, stride 2, zero padding 1, ReLU; channel-major planes.
    static void conv(const T* in, std::size_t cin, std::size_t n, const Tensor<T>& w, const Tensor<T>& bias,
                     std::size_t cout, std::size_t nout, T* out) {
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t oy = 0; oy < nout; ++oy)
                for (std::size_t ox = 0; ox < nout; ++ox) {
                    T acc = bias[co];
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t ky = 0; ky < 3; ++ky) {
                            const auto y = static_cast<std::ptrdiff_t>(2 * oy + ky) - 1;
                            if (y < 0 || y >= static_cast<std::ptrdiff_t>(n)) continue;
                            for (std::size_t kx = 0; kx < 3; ++kx) {
                                const auto x = static_cast<std::ptrdiff_t>(2 * ox + kx) - 1;
                                if (x < 0 || x >= static_cast<std::ptrdiff_t>(n)) continue;
                                acc += w(co, ci * 9 + ky * 3 + kx) *
                                       in[ci * n * n + static_cast<std::size_t>(y) * n + static_cast<std::size_t>(x)];
                            }
                        }
                    out[co * nout * nout + oy * nout + ox] = std::max(acc, T{0});
                }
    }

    std::size_t size_ = 0, c1_ = 0, c2_ = 0;
    Tensor<T> w1_, b1_, w2_, b2_;
};

template <typename T>
Tensor<T> extract_style(const StyleExtractor<T>& ex, const Tensor<T>& images) {
    return ex.extract(images);
}

/// Pre-LN toy vision transformer over a frozen random backbone.
///
/// Every projection is a SpectralLayer. Which offsets are live is decided by
/// the ablation mode; the frozen backbone, the hypernetworks (one for the
/// attention projections and one for the MLP of each injected layer) and the
/// output head are initialized identically for every mode.
template <typename T>
class Encoder {
public:
    struct Block {
        SpectralLayer<T> q, k, v, o, fc1, fc2;
    };

    Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng = make_rng(seed, "init");
        const std::size_t d = cfg_.d_model, hid = cfg_.hidden(), pp = cfg_.patch_size * cfg_.patch_size;
        const double sd = 1.0 / std::sqrt(static_cast<double>(d));
        patch_embed_ = gaussian_tensor<T>({d, pp}, rng, 1.0 / std::sqrt(static_cast<double>(pp)));
        cls_ = gaussian_tensor<T>({d}, rng, 0.02); // small, so patch content dominates the class token
        pos_ = gaussian_tensor<T>({cfg_.seq_len(), d}, rng, 0.1);
        for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
            Block b;
            b.q = svd_factorize(gaussian_tensor<T>({d, d}, rng, sd));
            b.k = svd_factorize(gaussian_tensor<T>({d, d}, rng, sd));
            b.v = svd_factorize(gaussian_tensor<T>({d, d}, rng, sd));
            b.o = svd_factorize(gaussian_tensor<T>({d, d}, rng, sd));
            b.fc1 = svd_factorize(gaussian_tensor<T>({hid, d}, rng, sd));
            b.fc2 = svd_factorize(gaussian_tensor<T>({d, hid}, rng, 1.0 / std::sqrt(static_cast<double>(hid))));
            blocks_.push_back(std::move(b));
        }
        for (std::size_t i = 0; i < cfg_.injected_layers.size(); ++i)
            hyper_attn_.push_back(make_hypernet(rng));
        for (std::size_t i = 0; i < cfg_.injected_layers.size(); ++i)
            hyper_mlp_.push_back(make_hypernet(rng));
        proj_ = gaussian_tensor<T>({cfg_.embed_dim, d}, rng, sd);
        set_ablation_mode(AblationMode::hybrid);
    }

    Encoder(const Encoder&) = delete;
    Encoder& operator=(const Encoder&) = delete;
    Encoder(Encoder&&) = default;
    Encoder& operator=(Encoder&&) = default;

    const EncoderConfig& config() const noexcept { return cfg_; }
    AblationMode mode() const noexcept { return mode_; }
    std::vector<Block>& blocks() noexcept { return blocks_; }
    const std::vector<Block>& blocks() const noexcept { return blocks_; }
    std::vector<HyperNet<T>>& attention_hypernets() noexcept { return hyper_attn_; }
    std::vector<HyperNet<T>>& mlp_hypernets() noexcept { return hyper_mlp_; }
    Tensor<T>& projection() noexcept { return proj_; }

    /// Selects the live offset pathways. Static offsets that are not trainable
    /// in the new mode keep their values and still apply.
    void set_ablation_mode(AblationMode mode) {
        mode_ = mode;
        const bool attn_dyn = mode == AblationMode::hyper_only || mode == AblationMode::hybrid ||
                              mode == AblationMode::dynamic_all;
        const bool mlp_static = mode == AblationMode::static_only || mode == AblationMode::hybrid ||
                                mode == AblationMode::dynamic_all;
        const bool attn_static = mode == AblationMode::reversed;
        for (std::size_t l = 0; l < blocks_.size(); ++l) {
            auto& b = blocks_[l];
            const bool inj = cfg_.injected(l + 1);
            for (auto* s : {&b.q, &b.k, &b.v, &b.o}) {
                s->set_dynamic_enabled(inj && attn_dyn);
                s->set_static_trainable(attn_static);
            }
            b.fc1.set_dynamic_enabled(inj && (mode == AblationMode::reversed || mode == AblationMode::dynamic_all));
            b.fc2.set_dynamic_enabled(inj && mode == AblationMode::dynamic_all);
            b.fc1.set_static_trainable(mlp_static);
            b.fc2.set_static_trainable(mlp_static);
        }
        for (auto& h : hyper_attn_) h.set_trainable(attn_dyn);
        for (auto& h : hyper_mlp_) h.set_trainable(mode == AblationMode::reversed || mode == AblationMode::dynamic_all);
        proj_.set_requires_grad(true);
    }

    /// Frozen token embedding: B x pixels -> (B * seq_len) x d_model, the class
    /// token first in each sequence.
    Tensor<T> embed_tokens(const Tensor<T>& images) const {
        if (images.rank() != 2 || images.cols() != cfg_.pixels())
            throw ShapeError("encode: expected B x " + std::to_string(cfg_.pixels()) + " images, got " +
                             shape_str(images.shape()));
        const std::size_t B = images.rows(), L = cfg_.seq_len(), P = cfg_.patch_size, G = cfg_.grid();
        const std::size_t S = cfg_.image_size;
        RowMatrix<T> patches(static_cast<Eigen::Index>(B * cfg_.n_patches()), static_cast<Eigen::Index>(P * P));
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t pr = 0; pr < G; ++pr)
                for (std::size_t pc = 0; pc < G; ++pc) {
                    const auto row = static_cast<Eigen::Index>(b * cfg_.n_patches() + pr * G + pc);
                    for (std::size_t i = 0; i < P; ++i)
                        for (std::size_t j = 0; j < P; ++j)
                            patches(row, static_cast<Eigen::Index>(i * P + j)) =
                                images(b, (pr * P + i) * S + pc * P + j);
                }
        // Per-image standardization: mostly dark images would otherwise
        // collapse to near-identical token sequences.
        const auto np = static_cast<Eigen::Index>(cfg_.n_patches());
        for (std::size_t b = 0; b < B; ++b) {
            auto blk = patches.middleRows(static_cast<Eigen::Index>(b) * np, np);
            const T mu = blk.mean();
            const T sd = std::sqrt((blk.array() - mu).square().mean()) + T(1e-3);
            blk.array() = (blk.array() - mu) / sd;
        }
        RowMatrix<T> emb = patches * as_matrix(patch_embed_).transpose();
        Tensor<T> out({B * L, cfg_.d_model});
        auto O = as_matrix(out);
        auto pos = as_matrix(pos_);
        for (std::size_t b = 0; b < B; ++b) {
            const auto r0 = static_cast<Eigen::Index>(b * L);
            O.row(r0) = as_matrix(cls_.data(), 1, cfg_.d_model).row(0) + pos.row(0);
            O.block(r0 + 1, 0, static_cast<Eigen::Index>(cfg_.n_patches()), O.cols()) =
                emb.block(static_cast<Eigen::Index>(b * cfg_.n_patches()), 0,
                          static_cast<Eigen::Index>(cfg_.n_patches()), emb.cols()) +
                pos.bottomRows(static_cast<Eigen::Index>(cfg_.n_patches()));
        }
        return out;
    }

    /// Unit-norm embeddings (B x embed_dim) from frozen tokens and style vectors.
    Var forward(Graph<T>& g, const Tensor<T>& tokens, const Tensor<T>& z) {
        const std::size_t L = cfg_.seq_len();
        if (tokens.rank() != 2 || tokens.cols() != cfg_.d_model || tokens.rows() % L != 0)
            throw ShapeError("encode: token block " + shape_str(tokens.shape()));
        const std::size_t B = tokens.rows() / L;
        if (z.rank() != 2 || z.rows() != B || z.cols() != cfg_.d_style)
            throw ShapeError("encode: style block " + shape_str(z.shape()) + " for batch " + std::to_string(B));
        Var x = g.constant(tokens);
        Var zv = g.constant(z);
        std::size_t slot = 0;
        for (std::size_t l = 0; l < blocks_.size(); ++l) {
            auto& b = blocks_[l];
            std::optional<Var> dyn_attn, dyn_mlp;
            if (cfg_.injected(l + 1)) {
                if (b.q.dynamic_enabled()) dyn_attn = hyper_attn_[slot].forward(g, zv);
                if (b.fc1.dynamic_enabled() || b.fc2.dynamic_enabled()) dyn_mlp = hyper_mlp_[slot].forward(g, zv);
                ++slot;
            }
            auto port = [](const SpectralLayer<T>& s, const std::optional<Var>& d) {
                return s.dynamic_enabled() ? d : std::nullopt;
            };
            Var h = g.layer_norm_rows(x);
            Var a = g.attention(b.q.forward(g, h, port(b.q, dyn_attn)), b.k.forward(g, h, port(b.k, dyn_attn)),
                                b.v.forward(g, h, port(b.v, dyn_attn)), L, cfg_.n_heads);
            x = g.add(x, b.o.forward(g, a, port(b.o, dyn_attn)));
            h = g.layer_norm_rows(x);
            h = g.gelu(b.fc1.forward(g, h, port(b.fc1, dyn_mlp)));
            x = g.add(x, b.fc2.forward(g, h, port(b.fc2, dyn_mlp)));
        }
        std::vector<std::size_t> cls_rows(B);
        for (std::size_t i = 0; i < B; ++i) cls_rows[i] = i * L;
        Var c = g.layer_norm_rows(g.gather_rows(x, std::move(cls_rows)));
        return g.normalize_rows(g.matmul_nt(c, g.leaf(proj_)));
    }

    /// Dynamic offsets of the attention projections at one injected layer.
    Tensor<T> dynamic_offsets(std::size_t injected_slot, const Tensor<T>& z) {
        Graph<T> g(GradMode::disabled);
        return g.value(hyper_attn_.at(injected_slot).forward(g, g.constant(z)));
    }

    std::vector<NamedTensor<T>> named_tensors() {
        std::vector<NamedTensor<T>> out{{"backbone.patch_embed", &patch_embed_, nullptr},
                                        {"backbone.cls", &cls_, nullptr},
                                        {"backbone.pos", &pos_, nullptr}};
        static constexpr const char* names[] = {"q", "k", "v", "o", "fc1", "fc2"};
        for (std::size_t l = 0; l < blocks_.size(); ++l) {
            auto& b = blocks_[l];
            SpectralLayer<T>* layers[] = {&b.q, &b.k, &b.v, &b.o, &b.fc1, &b.fc2};
            for (std::size_t i = 0; i < 6; ++i) {
                const std::string prefix = "layer" + std::to_string(l + 1) + "." + names[i];
                out.push_back({prefix + ".weight", &layers[i]->base(), nullptr});
                out.push_back({prefix + ".delta_static", &layers[i]->delta_static(), &layers[i]->delta_static()});
            }
        }
        auto add_hyper = [&](std::vector<HyperNet<T>>& nets, const char* kind) {
            for (std::size_t i = 0; i < nets.size(); ++i) {
                auto& layers = nets[i].layers();
                for (std::size_t j = 0; j < layers.size(); ++j) {
                    const std::string prefix = std::string("hyper.") + kind + std::to_string(cfg_.injected_layers[i]) +
                                               "." + std::to_string(j);
                    out.push_back({prefix + ".weight", &layers[j].weight, &layers[j].weight});
                    out.push_back({prefix + ".bias", &layers[j].bias, &layers[j].bias});
                }
            }
        };
        add_hyper(hyper_attn_, "attn");
        add_hyper(hyper_mlp_, "mlp");
        out.push_back({"head.proj", &proj_, &proj_});
        return out;
    }

    /// Trainable static offsets and the output head (the static rate group).
    std::vector<Tensor<T>*> static_group() {
        std::vector<Tensor<T>*> out;
        for (auto& b : blocks_)
            for (auto* s : {&b.q, &b.k, &b.v, &b.o, &b.fc1, &b.fc2})
                if (s->static_trainable()) out.push_back(&s->delta_static());
        out.push_back(&proj_);
        return out;
    }

    /// Trainable hypernetwork tensors (the hypernetwork rate group).
    std::vector<Tensor<T>*> hyper_group() {
        std::vector<Tensor<T>*> out;
        for (auto* nets : {&hyper_attn_, &hyper_mlp_})
            for (auto& h : *nets)
                for (auto* p : h.parameters())
                    if (p->requires_grad()) out.push_back(p);
        return out;
    }

    std::size_t trainable_parameter_count(bool include_head = true) {
        std::size_t n = 0;
        for (auto* p : static_group())
            if (include_head || p != &proj_) n += p->numel();
        for (auto* p : hyper_group()) n += p->numel();
        return n;
    }

private:
    HyperNet<T> make_hypernet(Rng& rng) {
        return HyperNet<T>(cfg_.d_style, cfg_.d_model, hypernet_layout(cfg_.hypernet_layout, cfg_.d_model),
                           cfg_.hypernet_activation, rng);
    }

    EncoderConfig cfg_;
    AblationMode mode_ = AblationMode::hybrid;
    Tensor<T> patch_embed_, cls_, pos_;
    std::vector<Block> blocks_;
    std::vector<HyperNet<T>> hyper_attn_, hyper_mlp_;
    Tensor<T> proj_;
};

/// Embeds images (B x pixels) in chunks without recording gradients.
template <typename T>
Tensor<T> encode(Encoder<T>& enc, const StyleExtractor<T>& ex, const Tensor<T>& images, std::size_t chunk = 64) {
    if (images.rank() != 2 || images.cols() != enc.config().pixels())
        throw ShapeError("encode: expected B x " + std::to_string(enc.config().pixels()) + " images, got " +
                         shape_str(images.shape()));
    const std::size_t B = images.rows(), P = images.cols();
    Tensor<T> out({B, enc.config().embed_dim});
    for (std::size_t b0 = 0; b0 < B; b0 += chunk) {
        const std::size_t n = std::min(chunk, B - b0);
        Tensor<T> part({n, P}, std::vector<T>(images.data() + b0 * P, images.data() + (b0 + n) * P));
        Graph<T> g(GradMode::disabled);
        const auto& e = g.value(enc.forward(g, enc.embed_tokens(part), ex.extract(part)));
        std::copy(e.values().begin(), e.values().end(), out.data() + b0 * out.cols());
    }
    return out;
}

} // namespace hystar
