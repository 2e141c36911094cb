#include "normalcast/inference.hpp"

#include <cmath>

#include "normalcast/layout.hpp"

namespace ncast {

void InferenceConfig::validate() const {
    if (window < 2 || overlap < 1 || overlap >= window)
        throw ConfigError("inference: need 1 <= overlap < window");
    if (steps < 1) throw ConfigError("inference: steps must be >= 1");
}

std::vector<WindowSpan> window_schedule(int F, int T, int O) {
    if (F < 1) throw ShapeError("window_schedule: F must be >= 1");
    std::vector<WindowSpan> out;
    if (F <= T) {
        out.push_back({0, F});
        return out;
    }
    int start = 0;
    while (true) {
        if (start + T >= F) {
            out.push_back({F - T, F});
            break;
        }
        out.push_back({start, start + T});
        start += T - O;
    }
    return out;
}

LatentSequence blend_windows(const std::vector<LatentSequence>& window_latents,
                             const std::vector<WindowSpan>& schedule) {
    if (window_latents.empty() || window_latents.size() != schedule.size())
        throw ConfigError("blend_windows: schedule/latent count mismatch");
    int F = schedule.back().end;
    const Tensor& first = window_latents[0].latents;
    int h = first.dim(1), w = first.dim(2), C = first.dim(3);
    long long fs = (long long)h * w * C;

    LatentSequence out;
    out.latents = Tensor({F, h, w, C});
    out.downsample = window_latents[0].downsample;
    out.channels = window_latents[0].channels;

    int filled = 0;
    for (size_t i = 0; i < schedule.size(); ++i) {
        const WindowSpan& s = schedule[i];
        const Tensor& z = window_latents[i].latents;
        if (z.dim(0) != s.end - s.start) throw ShapeError("blend_windows: window length mismatch");
        if (i == 0) {
            if (s.start != 0) throw ConfigError("blend_windows: first window must start at 0");
        } else if (s.start >= filled) {
            throw ConfigError("blend_windows: windows do not overlap");
        }
        int L = filled - s.start;  // overlap with everything already filled
        for (int f = s.start; f < s.end; ++f) {
            const float* src = z.data() + (long long)(f - s.start) * fs;
            float* dst = out.latents.data() + (long long)f * fs;
            if (f < filled) {
                float wgt = (float)(f - s.start + 1) / (float)(L + 1);
                for (long long k = 0; k < fs; ++k) dst[k] = (1.0f - wgt) * dst[k] + wgt * src[k];
            } else {
                std::copy(src, src + fs, dst);
            }
        }
        filled = std::max(filled, s.end);
    }
    return out;
}

NormalSequence estimate_normals_with(const Vae& vae, const LatentPredictFn& predict, const VideoClip& video,
                                     const InferenceConfig& cfg) {
    cfg.validate();
    if (video.frames.rank() != 4 || video.frames.dim(0) < 1) throw ShapeError("estimate_normals: empty video");
    int F = video.frames.dim(0), H = video.frames.dim(1), W = video.frames.dim(2);
    if (H % vae.cfg.downsample != 0 || W % vae.cfg.downsample != 0)
        throw ShapeError("estimate_normals: H,W must be divisible by the VAE factor");

    LatentSequence z_rgb = vae.encode(rgb01_to_pm1(video.frames));
    int h = z_rgb.latents.dim(1), w = z_rgb.latents.dim(2), C = z_rgb.latents.dim(3);
    long long fs = (long long)h * w * C;

    auto schedule = window_schedule(F, cfg.window, cfg.overlap);
    std::vector<LatentSequence> preds;
    for (const WindowSpan& s : schedule) {
        Tensor zc_fhwc({s.end - s.start, h, w, C});
        std::copy(z_rgb.latents.data() + (long long)s.start * fs, z_rgb.latents.data() + (long long)s.end * fs,
                  zc_fhwc.data());
        Tensor pred_fchw = predict(fhwc_to_fchw(zc_fhwc));
        LatentSequence lp;
        lp.latents = fchw_to_fhwc(pred_fchw);
        lp.downsample = z_rgb.downsample;
        lp.channels = z_rgb.channels;
        preds.push_back(std::move(lp));
    }
    LatentSequence blended = blend_windows(preds, schedule);
    Tensor decoded = vae.decode(blended);  // [F,H,W,3] in (-1,1)

    NormalSequence out;
    out.normals = Tensor({F, H, W, 3});
    out.valid = Mask({F, H, W}, true);
    for (long long p = 0; p < (long long)F * H * W; ++p) {
        const float* v = decoded.data() + p * 3;
        double n = std::sqrt((double)v[0] * v[0] + (double)v[1] * v[1] + (double)v[2] * v[2]);
        if (n < 1e-12) n = 1.0;
        for (int c = 0; c < 3; ++c) out.normals[p * 3 + c] = (float)(v[c] / n);
    }
    return out;
}

NormalSequence estimate_normals(const Vae& vae, const DenoiserUnet& unet, const VideoClip& video,
                                const InferenceConfig& cfg, const Preconditioner& pre) {
    LatentPredictFn predict = [&](const Tensor& z_c) {
        if (cfg.steps == 1) return one_step_predict(unet, z_c, cfg.sigma_star, nullptr, pre);
        Tensor eps(z_c.shape());  // zeros: deterministic multi-step start
        return euler_sample(unet, z_c, cfg.steps, cfg.sigma_star, eps, pre);
    };
    return estimate_normals_with(vae, predict, video, cfg);
}

}  // namespace ncast
