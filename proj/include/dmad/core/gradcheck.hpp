#pragma once

// Central finite-difference checks for the autograd engine.
//
// The reported error is norm-wise per tensor:
//     ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, tiny)
// which stays meaningful when individual entries are near zero.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dmad/core/autograd.hpp"
#include "dmad/core/optim.hpp"

namespace dmad {

struct GradCheckEntry {
    std::string name;
    double rel_error = 0.0;
    double analytic_norm = 0.0;
    double numeric_norm = 0.0;
    size_t probes = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    double max_rel_error() const;
    std::string summary() const;
};

double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

struct GradCheckOptions {
    double step = 1e-5;
    // Entries probed per tensor; 0 probes every entry. Probed indices are a
    // seeded random subset otherwise.
    size_t max_probes = 0;
    uint64_t seed = 7;
};

// Builds fresh leaf variables from `inputs`, differentiates `loss_fn` with
// respect to each, and compares against central differences.
GradCheckReport check_gradients(
    const std::function<Var<double>(const std::vector<Var<double>>&)>& loss_fn,
    const std::vector<Tensor<double>>& inputs, const GradCheckOptions& options = {});

// Same check against parameters already wired into `loss_fn`; values are
// perturbed in place and restored.
GradCheckReport check_parameter_gradients(const std::function<Var<double>()>& loss_fn,
                                          const ParameterList<double>& params,
                                          const GradCheckOptions& options = {});

}  // namespace dmad
