#include "dmad/scoring/losses.hpp"

#include <cmath>

namespace dmad::scoring {

std::string LossBreakdown::first_non_finite() const {
    if (!std::isfinite(rec)) return "rec";
    if (!std::isfinite(com)) return "com";
    if (!std::isfinite(df)) return "df";
    if (has_cyc && !std::isfinite(cyc)) return "cyc";
    if (!std::isfinite(total)) return "total";
    return {};
}

template <typename T>
Var<T> sample_distance(const Var<T>& x, const Var<T>& reconstruction, double lambda_grad) {
    if (x.shape() != reconstruction.shape()) {
        throw ShapeError("reconstruction " + shape_str(reconstruction.shape()) + " does not match input " +
                         shape_str(x.shape()));
    }
    auto d = ops::mse(x, reconstruction);
    if (lambda_grad == 0.0) return d;
    auto [gx, gy] = ops::spatial_gradient(ops::sub(x, reconstruction));
    auto grad_term = ops::add(ops::mean(ops::abs(gx)), ops::mean(ops::abs(gy)));
    return ops::add(d, ops::scale(grad_term, static_cast<T>(lambda_grad)));
}

template <typename T>
Var<T> rec_loss(const Var<T>& x, const std::vector<Var<T>>& reconstructions, double lambda_grad) {
    if (reconstructions.empty()) throw std::invalid_argument("rec_loss: no reconstructions");
    Var<T> total = sample_distance(x, reconstructions[0], lambda_grad);
    for (size_t k = 1; k < reconstructions.size(); ++k)
        total = ops::add(total, sample_distance(x, reconstructions[k], lambda_grad));
    return total;
}

template <typename T>
Var<T> total_loss(const Var<T>& rec, const Var<T>& com, const Var<T>& df, double gamma1, double gamma2) {
    return ops::add(ops::add(rec, ops::scale(com, static_cast<T>(gamma1))), ops::scale(df, static_cast<T>(gamma2)));
}

template <typename T>
Var<T> total_loss_plus(const Var<T>& rec, const Var<T>& com, const Var<T>& df_plus, const Var<T>& cyc,
                       double gamma1, double gamma2, double gamma3) {
    return ops::add(total_loss(rec, com, df_plus, gamma1, gamma2), ops::scale(cyc, static_cast<T>(gamma3)));
}

template <typename T>
LossTerms<T> compute_losses(const Var<T>& x, const model::ForwardOutputs<T>& out, const LossWeights& weights) {
    LossTerms<T> t;
    const auto zero = Var<T>::constant(Tensor<T>::scalar(T{0}));
    t.rec = rec_loss(out.target, out.reconstructions, weights.lambda_grad);
    t.com = out.quantized ? compression::compression_loss(out.quantized->z_e, out.quantized->z_q,
                                                          static_cast<T>(weights.beta))
                          : zero;
    const bool deformed = out.pyramid.levels() > 0;
    if (out.mode == model::Mode::PDM) {
        t.df = deformed ? deform::deformation_loss(out.pyramid, weights.deformation) : zero;
        t.cyc = zero;
        t.total = total_loss(t.rec, t.com, t.df, weights.gamma1, weights.gamma2);
    } else {
        t.df = deformed ? deform::deformation_loss_plus(out.pyramid, weights.deformation) : zero;
        t.cyc = deformed ? deform::cycle_loss(x, out.pyramid) : zero;
        t.total = total_loss_plus(t.rec, t.com, t.df, t.cyc, weights.gamma1, weights.gamma2, weights.gamma3);
        t.breakdown.has_cyc = true;
    }
    t.breakdown.rec = static_cast<double>(t.rec.item());
    t.breakdown.com = static_cast<double>(t.com.item());
    t.breakdown.df = static_cast<double>(t.df.item());
    t.breakdown.cyc = static_cast<double>(t.cyc.item());
    t.breakdown.total = static_cast<double>(t.total.item());
    return t;
}

#define DMAD_INSTANTIATE_LOSSES(T)                                                                            \
    template Var<T> sample_distance<T>(const Var<T>&, const Var<T>&, double);                                 \
    template Var<T> rec_loss<T>(const Var<T>&, const std::vector<Var<T>>&, double);                           \
    template Var<T> total_loss<T>(const Var<T>&, const Var<T>&, const Var<T>&, double, double);               \
    template Var<T> total_loss_plus<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, double,    \
                                       double, double);                                                       \
    template LossTerms<T> compute_losses<T>(const Var<T>&, const model::ForwardOutputs<T>&, const LossWeights&);

DMAD_INSTANTIATE_LOSSES(float)
DMAD_INSTANTIATE_LOSSES(double)

}  // namespace dmad::scoring
