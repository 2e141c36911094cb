#pragma once

#include "normalcast/autodiff.hpp"
#include "normalcast/tensor.hpp"

namespace ncast {

constexpr float kDotClamp = 1.0f - 1e-7f;

// Mean arccos(pred·gt) in radians over valid pixels; both sides renormalized,
// dots clamped to +-(1-1e-7) before arccos. pred is [...,3] on the tape, gt is
// a constant of the same shape.
inline Var angular_loss_graph(Tape& t, Var pred, const Tensor& gt, const Mask& valid) {
    Var pn = normalize_lastdim(pred);
    Tensor gn = gt;
    int K = gn.dim(gn.rank() - 1);
    for (long long r = 0; r < gn.size() / K; ++r) {
        float* v = gn.data() + r * K;
        double s = 0.0;
        for (int i = 0; i < K; ++i) s += (double)v[i] * v[i];
        double n = std::sqrt(s);
        if (n > 1e-12)
            for (int i = 0; i < K; ++i) v[i] = (float)(v[i] / n);
    }
    Var dots = reduce_lastdim_sum(mul_const(pn, gn));
    Var ang = acos_op(clamp_op(dots, -kDotClamp, kDotClamp));
    return masked_mean(ang, valid);
}

// Double-precision evaluation path for metrics.
double angular_loss_rad(const Tensor& pred, const Tensor& gt, const Mask& valid);
inline double rad_to_deg(double r) { return r * 57.29577951308232; }

// PSNR over the [-1,1] range (peak 2), capped at 99 dB.
double psnr_pm1(const Tensor& x, const Tensor& xhat);

}  // namespace ncast
