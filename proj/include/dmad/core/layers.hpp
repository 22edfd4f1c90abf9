#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "dmad/core/ops.hpp"
#include "dmad/core/optim.hpp"

namespace dmad {

// Convolution with bias. Weights use a He-uniform bound sqrt(6 / fan_in)
// scaled by `gain`; biases start at zero.
template <typename T>
struct Conv2d {
    Var<T> weight;  // [out, in, k, k]
    Var<T> bias;    // [out]
    int64_t stride = 1;
    int64_t padding = 0;

    Conv2d() = default;
    Conv2d(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding, std::mt19937_64& rng,
           double gain = 1.0);

    Var<T> operator()(const Var<T>& x) const {
        return ops::add_bias(ops::conv2d(x, weight, stride, padding), bias);
    }

    void collect(ParameterList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

// Transposed convolution with bias, weight [in, out, k, k].
template <typename T>
struct ConvTranspose2d {
    Var<T> weight;
    Var<T> bias;
    int64_t stride = 1;
    int64_t padding = 0;

    ConvTranspose2d() = default;
    ConvTranspose2d(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding, std::mt19937_64& rng,
                    double gain = 1.0);

    Var<T> operator()(const Var<T>& x) const {
        return ops::add_bias(ops::conv_transpose2d(x, weight, stride, padding), bias);
    }

    void collect(ParameterList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

}  // namespace dmad
