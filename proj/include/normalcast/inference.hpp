#pragma once

#include <functional>

#include "normalcast/diffusion.hpp"
#include "normalcast/vae.hpp"

namespace ncast {

struct InferenceConfig {
    int window = 14;   // T
    int overlap = 4;   // O, 1 <= O < T
    int steps = 1;
    float sigma_star = 700.0f;
    void validate() const;
};

struct WindowSpan {
    int start = 0, end = 0;
};

// Covers [0,F) with stride T-O; the final window is right-aligned so every
// frame is produced exactly once per contributing window.
std::vector<WindowSpan> window_schedule(int F, int T, int O);

// Overlapped frames mix with a linear ramp (weight (i+1)/(L+1) for the
// newer window across an overlap of length L); weights sum to 1 per frame.
LatentSequence blend_windows(const std::vector<LatentSequence>& window_latents,
                             const std::vector<WindowSpan>& schedule);

// Denoiser abstraction: maps condition latents [f,C,h,w] to predicted
// normal latents of the same shape. Lets tests drive the window machinery
// with a stub.
using LatentPredictFn = std::function<Tensor(const Tensor& z_c_fchw)>;

NormalSequence estimate_normals_with(const Vae& vae, const LatentPredictFn& predict, const VideoClip& video,
                                     const InferenceConfig& cfg);

// Full path: encode RGB, predict per window (single-step by default, Euler
// ladder otherwise; eps = 0 so repeated runs are bit-identical), blend,
// decode, renormalize to unit vectors.
NormalSequence estimate_normals(const Vae& vae, const DenoiserUnet& unet, const VideoClip& video,
                                const InferenceConfig& cfg, const Preconditioner& pre);

}  // namespace ncast
