#pragma once

#include "normalcast/tensor.hpp"

namespace ncast {

// Public tensors are frames-height-width-channels; the conv stack runs on
// frames-channels-height-width. These two are the only layout bridges.
inline Tensor fhwc_to_fchw(const Tensor& t) {
    if (t.rank() != 4) throw ShapeError("fhwc_to_fchw: expects rank 4");
    int F = t.dim(0), H = t.dim(1), W = t.dim(2), C = t.dim(3);
    Tensor out({F, C, H, W});
    for (int f = 0; f < F; ++f)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < C; ++c)
                    out[(((long long)f * C + c) * H + y) * W + x] = t[(((long long)f * H + y) * W + x) * C + c];
    return out;
}

inline Tensor fchw_to_fhwc(const Tensor& t) {
    if (t.rank() != 4) throw ShapeError("fchw_to_fhwc: expects rank 4");
    int F = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
    Tensor out({F, H, W, C});
    for (int f = 0; f < F; ++f)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    out[(((long long)f * H + y) * W + x) * C + c] = t[(((long long)f * C + c) * H + y) * W + x];
    return out;
}

inline Tensor rgb01_to_pm1(const Tensor& t) {
    Tensor out = t;
    for (long long i = 0; i < out.size(); ++i) out[i] = 2.0f * out[i] - 1.0f;
    return out;
}

inline Tensor pm1_to_rgb01(const Tensor& t) {
    Tensor out = t;
    for (long long i = 0; i < out.size(); ++i) out[i] = 0.5f * (out[i] + 1.0f);
    return out;
}

}  // namespace ncast
