#include "dmad/core/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dmad {

template <typename T>
void AdamW<T>::step(const ParameterList<T>& params, double lr) {
    for (const auto& p : params) {
        if (!p.var.has_grad()) continue;
        const Tensor<T>& g = p.var.node()->grad;
        const bool finite = std::all_of(g.vec().begin(), g.vec().end(), [](T v) { return std::isfinite(v); });
        if (!finite) {
            ++skipped_;
            continue;
        }
        Slot& s = state_[p.name];
        if (s.m.size() != g.size() || s.m.shape() != g.shape()) {
            s.m = Tensor<T>(g.shape());
            s.v = Tensor<T>(g.shape());
            s.step = 0;
        }
        ++s.step;
        const double b1 = options_.beta1, b2 = options_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
        const double decay = 1.0 - lr * options_.weight_decay;
        Var<T> target = p.var;
        Tensor<T>& w = target.mutable_value();
        for (size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            const double m = b1 * s.m[i] + (1.0 - b1) * gi;
            const double v = b2 * s.v[i] + (1.0 - b2) * gi * gi;
            s.m[i] = static_cast<T>(m);
            s.v[i] = static_cast<T>(v);
            const double update = (m / c1) / (std::sqrt(v / c2) + options_.eps);
            w[i] = static_cast<T>(static_cast<double>(w[i]) * decay - lr * update);
        }
    }
}

double cosine_lr(double base, int64_t step, int64_t horizon, double floor) {
    if (horizon <= 0) return base;
    const double t = std::clamp(static_cast<double>(step) / static_cast<double>(horizon), 0.0, 1.0);
    return floor + (base - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace dmad
