#pragma once

#include <cmath>
#include <limits>

namespace dmad::kernels {

template <typename T>
inline T unnormalize_clamped(T coord, int64_t extent, bool& inside) {
    inside = true;
    if (extent <= 1) {
        inside = false;
        return T{0};
    }
    const T hi = static_cast<T>(extent - 1);
    T pix = (coord + T{1}) * hi / T{2};
    // Snap coordinates that are integral up to rounding so that the identity
    // grid reproduces its input bit-exactly at every resolution.
    const T nearest = std::nearbyint(pix);
    if (std::abs(pix - nearest) <= T{8} * std::numeric_limits<T>::epsilon() * (hi + T{1})) {
        pix = nearest;
    }
    if (pix < T{0}) {
        inside = false;
        return T{0};
    }
    if (pix > hi) {
        inside = false;
        return hi;
    }
    return pix;
}

}  // namespace dmad::kernels
