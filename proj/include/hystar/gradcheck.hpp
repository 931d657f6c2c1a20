#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hystar/graph.hpp"
#include "hystar/rng.hpp"

namespace hystar {

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

/// Builds the scalar loss on a fresh graph from the current parameter values.
using LossBuilder = std::function<Var(Graph<double>&)>;

using NamedParam = std::pair<std::string, Tensor<double>*>;

/// Compares reverse-mode gradients with central differences.
///
/// For each tensor the error is max_i |analytic_i - numeric_i| divided by the
/// largest magnitude among both gradient vectors of that tensor, so entries
/// that are zero in both count as exact. At most `max_entries` coordinates
/// per tensor are probed (a seeded sample when the tensor is larger).
inline std::vector<GradCheckEntry> check_gradients(const LossBuilder& build,
                                                   const std::vector<NamedParam>& params,
                                                   double h = 1e-4, std::size_t max_entries = 256,
                                                   std::uint64_t seed = 0) {
    for (auto& [name, p] : params) {
        p->set_requires_grad(true);
        p->clear_grad();
    }
    {
        Graph<double> g;
        Var loss = build(g);
        g.backward(loss);
    }
    auto eval = [&] {
        Graph<double> g;
        return g.value(build(g))[0];
    };

    std::vector<GradCheckEntry> out;
    Rng rng(seed);
    for (auto& [name, p] : params) {
        std::vector<double> analytic(p->numel(), 0.0);
        if (p->has_grad()) std::copy(p->grad().begin(), p->grad().end(), analytic.begin());

        std::vector<std::size_t> idx(p->numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (idx.size() > max_entries) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(max_entries);
            std::sort(idx.begin(), idx.end());
        }
        double worst = 0.0, scale = 0.0;
        for (std::size_t i : idx) {
            const double saved = (*p)[i];
            (*p)[i] = saved + h;
            const double up = eval();
            (*p)[i] = saved - h;
            const double down = eval();
            (*p)[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            worst = std::max(worst, std::abs(numeric - analytic[i]));
            scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
        }
        out.push_back({name, scale > 0.0 ? worst / scale : 0.0, idx.size()});
    }
    return out;
}

inline double max_error(const std::vector<GradCheckEntry>& entries) {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
}

} // namespace hystar
