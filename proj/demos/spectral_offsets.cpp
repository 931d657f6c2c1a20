// Shows that a singular-value offset moves a layer by exactly max|ds| in
// spectral norm, and what a transport plan over a small batch looks like.

#include <cstdio>
#include <vector>

#include "hystar/hystar.hpp"

using namespace hystar;

int main() {
    Rng rng = make_rng(7, "demo");
    const auto W0 = gaussian_tensor<double>({12, 9}, rng, 1.0 / 3.0);
    auto layer = svd_factorize(W0);
    std::printf("rank %zu, singular values:", layer.rank());
    for (double s : layer.s().values()) std::printf(" %.3f", s);
    std::printf("\n");

    for (double scale : {0.01, 0.1, 0.5}) {
        layer.delta_static() = uniform_tensor<double>({layer.rank()}, rng, -scale, scale);
        const auto W = merge(layer);
        Tensor<double> D(W.shape());
        for (std::size_t i = 0; i < D.numel(); ++i) D.values()[i] = W.values()[i] - W0.values()[i];
        std::printf("offset scale %-5g  ||W - W0||_2 = %.12f  max|ds| = %.12f\n", scale, spectral_norm_power(D),
                    spectral_delta_norm(layer, std::span<const double>(layer.delta_static().values())));
    }

    const std::size_t n = 5;
    auto Q = gaussian_tensor<double>({n, 6}, rng, 1.0);
    auto P = Q;
    for (auto& v : P.values()) v += 0.3 * gaussian(rng);
    Graph<double> g(GradMode::disabled);
    const auto S = g.value(similarity_matrix(g, g.constant(Q), g.constant(P)));
    LossConfig lc;
    const auto plan = sinkhorn(cost_matrix(S, lc.lambda), lc.epsilon, lc.sinkhorn_iters);
    std::printf("\ntransport plan (rows: queries, columns: negatives), deviation %.2e\n", plan.marginal_deviation);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) std::printf(" %.3f", plan(i, j));
        std::printf("   sim:");
        for (std::size_t j = 0; j < n; ++j) std::printf(" %+.2f", S(i, j));
        std::printf("\n");
    }
}
