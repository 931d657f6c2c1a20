#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "hystar/errors.hpp"
#include "hystar/tensor.hpp"

namespace hystar {

/// Adam with per-group learning rates. Moments are keyed by tensor address,
/// so registered tensors must stay in place for the optimizer's lifetime.
template <typename T>
class Adam {
public:
    struct Group {
        std::vector<Tensor<T>*> params;
        double lr = 0.0;
    };

    explicit Adam(std::vector<Group> groups, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& g : groups_) {
            if (!(g.lr >= 0.0)) throw ConfigError("train.lr", "learning rates must be >= 0");
            for (auto* p : g.params) {
                if (state_.count(p)) throw ContractError("Adam: tensor registered in two groups");
                state_[p] = {std::vector<double>(p->numel(), 0.0), std::vector<double>(p->numel(), 0.0)};
            }
        }
    }

    const std::vector<Group>& groups() const noexcept { return groups_; }
    long steps() const noexcept { return t_; }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Tensors without a gradient are left untouched.
    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto& g : groups_)
            for (auto* p : g.params) {
                if (!p->has_grad()) continue;
                auto& st = state_.at(p);
                auto grad = p->grad();
                for (std::size_t i = 0; i < p->numel(); ++i) {
                    const double gi = grad[i];
                    st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * gi;
                    st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * gi * gi;
                    (*p)[i] -= static_cast<T>(g.lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps_));
                }
                p->zero_grad();
            }
    }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    std::vector<Group> groups_;
    std::map<const Tensor<T>*, Moments> state_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

} // namespace hystar
