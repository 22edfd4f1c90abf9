#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmad/core/autograd.hpp"

namespace dmad {

template <typename T>
struct Parameter {
    std::string name;
    Var<T> var;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>>;

template <typename T>
void zero_grads(const ParameterList<T>& params) {
    for (auto p : params) p.var.zero_grad();
}

struct AdamWOptions {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

// Adam with decoupled weight decay. State is keyed by parameter name.
template <typename T>
class AdamW {
public:
    struct Slot {
        Tensor<T> m, v;
        int64_t step = 0;
    };

    explicit AdamW(AdamWOptions options = {}) : options_(options) {}

    // Applies one update at learning rate `lr` to every parameter holding a
    // gradient. A tensor whose gradient has a non-finite entry is left
    // untouched and counted in skipped().
    void step(const ParameterList<T>& params, double lr);

    size_t skipped() const { return skipped_; }
    const AdamWOptions& options() const { return options_; }
    std::map<std::string, Slot>& state() { return state_; }
    const std::map<std::string, Slot>& state() const { return state_; }

private:
    AdamWOptions options_;
    std::map<std::string, Slot> state_;
    size_t skipped_ = 0;
};

// Cosine annealing from `base` at step 0 to `floor` at `horizon`.
double cosine_lr(double base, int64_t step, int64_t horizon, double floor = 0.0);

}  // namespace dmad
