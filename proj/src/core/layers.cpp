#include "dmad/core/layers.hpp"

#include <algorithm>
#include <cmath>

namespace dmad {

namespace {

template <typename T>
Tensor<T> he_uniform(Shape shape, int64_t fan_in, std::mt19937_64& rng, double gain) {
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(std::max<int64_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
    return t;
}

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(int64_t in, int64_t out, int64_t kernel, int64_t stride_, int64_t padding_, std::mt19937_64& rng,
                  double gain)
    : weight(Var<T>::parameter(he_uniform<T>({out, in, kernel, kernel}, in * kernel * kernel, rng, gain))),
      bias(Var<T>::parameter(Tensor<T>({out}))),
      stride(stride_),
      padding(padding_) {}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(int64_t in, int64_t out, int64_t kernel, int64_t stride_, int64_t padding_,
                                    std::mt19937_64& rng, double gain)
    // Each output location receives about in * (kernel / stride)^2 terms.
    : weight(Var<T>::parameter(
          he_uniform<T>({in, out, kernel, kernel}, in * (kernel / stride_) * (kernel / stride_), rng, gain))),
      bias(Var<T>::parameter(Tensor<T>({out}))),
      stride(stride_),
      padding(padding_) {}

template struct Conv2d<float>;
template struct Conv2d<double>;
template struct ConvTranspose2d<float>;
template struct ConvTranspose2d<double>;

}  // namespace dmad
