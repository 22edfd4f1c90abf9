#pragma once

#include <string>
#include <vector>

#include "dmad/model/model.hpp"

namespace dmad::scoring {

struct LossWeights {
    double beta = 0.25;
    double gamma1 = 1.0;
    double gamma2 = 0.25;
    double gamma3 = 1.0;
    double lambda_grad = 1.0;
    deform::DeformationLossWeights deformation;
};

struct LossBreakdown {
    double rec = 0.0;
    double com = 0.0;
    double df = 0.0;  // L_df, or L_df⁺ in ppdm mode
    double cyc = 0.0;
    double total = 0.0;
    bool has_cyc = false;

    // Component whose value is not finite, or empty.
    std::string first_non_finite() const;
};

template <typename T>
struct LossTerms {
    Var<T> rec, com, df, cyc, total;
    LossBreakdown breakdown;
};

// mean (x - x̂)^2 + λ_g · mean |∇x - ∇x̂|, gradients as forward differences
// with a zero trailing column / row (means over the full HxW).
template <typename T>
Var<T> sample_distance(const Var<T>& x, const Var<T>& reconstruction, double lambda_grad);

// Σ_k Dis(x, x̂_k)
template <typename T>
Var<T> rec_loss(const Var<T>& x, const std::vector<Var<T>>& reconstructions, double lambda_grad);

// L_rec + γ1 L_com + γ2 L_df
template <typename T>
Var<T> total_loss(const Var<T>& rec, const Var<T>& com, const Var<T>& df, double gamma1, double gamma2);

// L_rec + γ1 L_com + γ2 L_df⁺ + γ3 L_cyc
template <typename T>
Var<T> total_loss_plus(const Var<T>& rec, const Var<T>& com, const Var<T>& df_plus, const Var<T>& cyc,
                       double gamma1, double gamma2, double gamma3);

// Every term for one forward pass; absent components (ablations) are zero
// constants. `x` is the untouched input (cycle loss in ppdm mode).
template <typename T>
LossTerms<T> compute_losses(const Var<T>& x, const model::ForwardOutputs<T>& out, const LossWeights& weights);

}  // namespace dmad::scoring
