#include "dmad/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace dmad {

double GradCheckReport::max_rel_error() const {
    double worst = 0.0;
    for (const auto& e : entries) worst = std::max(worst, e.rel_error);
    return worst;
}

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    for (const auto& e : entries) {
        os << e.name << ": rel_err=" << e.rel_error << " |analytic|=" << e.analytic_norm
           << " |numeric|=" << e.numeric_norm << " probes=" << e.probes << '\n';
    }
    return os.str();
}

double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
    if (diff == 0.0) return 0.0;
    return std::sqrt(diff) / denom;
}

namespace {

std::vector<size_t> probe_indices(size_t n, const GradCheckOptions& options, uint64_t salt) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    if (options.max_probes == 0 || options.max_probes >= n) return idx;
    std::mt19937_64 rng(options.seed + salt);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(options.max_probes);
    std::sort(idx.begin(), idx.end());
    return idx;
}

GradCheckEntry compare(const std::string& name, Tensor<double>& value, const Tensor<double>& analytic,
                       const std::function<double()>& eval, const GradCheckOptions& options, uint64_t salt) {
    GradCheckEntry entry;
    entry.name = name;
    const auto idx = probe_indices(value.size(), options, salt);
    std::vector<double> a, n;
    for (size_t i : idx) {
        const double saved = value[i];
        value[i] = saved + options.step;
        const double up = eval();
        value[i] = saved - options.step;
        const double down = eval();
        value[i] = saved;
        n.push_back((up - down) / (2.0 * options.step));
        a.push_back(analytic[i]);
    }
    entry.rel_error = relative_error(a, n);
    entry.analytic_norm = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
    entry.numeric_norm = std::sqrt(std::inner_product(n.begin(), n.end(), n.begin(), 0.0));
    entry.probes = idx.size();
    return entry;
}

}  // namespace

GradCheckReport check_gradients(
    const std::function<Var<double>(const std::vector<Var<double>>&)>& loss_fn,
    const std::vector<Tensor<double>>& inputs, const GradCheckOptions& options) {
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(Var<double>::parameter(t));
    backward(loss_fn(leaves));

    GradCheckReport report;
    for (size_t k = 0; k < leaves.size(); ++k) {
        const Tensor<double> analytic = leaves[k].grad();
        std::vector<Tensor<double>> values = inputs;
        auto eval = [&]() {
            NoGradGuard guard;
            std::vector<Var<double>> consts;
            for (const auto& t : values) consts.push_back(Var<double>::constant(t));
            return loss_fn(consts).item();
        };
        report.entries.push_back(
            compare("input" + std::to_string(k), values[k], analytic, eval, options, k));
    }
    return report;
}

GradCheckReport check_parameter_gradients(const std::function<Var<double>()>& loss_fn,
                                          const ParameterList<double>& params,
                                          const GradCheckOptions& options) {
    zero_grads(params);
    backward(loss_fn());
    GradCheckReport report;
    uint64_t salt = 0;
    for (const auto& p : params) {
        const Tensor<double> analytic = p.var.grad();
        Var<double> handle = p.var;
        auto eval = [&]() {
            NoGradGuard guard;
            return loss_fn().item();
        };
        report.entries.push_back(compare(p.name, handle.mutable_value(), analytic, eval, options, salt++));
    }
    zero_grads(params);
    return report;
}

}  // namespace dmad
