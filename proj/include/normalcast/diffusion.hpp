#pragma once

#include <optional>

#include "normalcast/rng.hpp"
#include "normalcast/unet.hpp"
#include "normalcast/vae.hpp"

namespace ncast {

// Hybrid noise-level distribution: a point mass at `fixed_value` with
// probability `fixed_prob`, otherwise sigma = exp(Normal(loc, scale^2)).
struct NoiseSamplerConfig {
    float fixed_value = 700.0f;
    float fixed_prob = 0.5f;
    float lognormal_loc = 0.7f;
    float lognormal_scale = 1.6f;
};

float sample_sigma(const NoiseSamplerConfig& cfg, Rng& rng);

// lambda(sigma) = (1 + sigma^2) / sigma^2, evaluated in double
double lambda_weight(double sigma);

struct Preconditioner {
    float sigma_data = 0.5f;
    PrecondCoeffs coeffs(float sigma) const;
};

// z_t = z0 + sigma * eps. eps must be shaped like z0.
Tensor add_noise(const Tensor& z0, float sigma, const Tensor& eps);

// Decreasing rho-spaced ladder of `steps` nonzero levels plus a final 0.
std::vector<float> sigma_ladder(int steps, float sigma_max, float sigma_min = 0.002f, float rho = 7.0f);

// ---- preconditioned denoiser ----
// D(z_t; sigma; z_c) = c_skip*z_t + c_out*net(c_in*[z_t||z_c], c_noise).
// Latents here are NCHW [F,C,h,w].
struct DenoiseGraph {
    Var denoised;
    Var tap;  // invalid unless requested
};
DenoiseGraph denoiser_forward_graph(const DenoiserUnet& unet, Tape& t, Var z_t, float sigma, Var z_c,
                                    const Preconditioner& pre, std::optional<BlockId> tap = {});

// Public tensor-level forward on [F,h,w,C] latent sequences.
struct DenoiseOutput {
    LatentSequence denoised;
    Tensor tapped;  // [F,hl,wl,Cl] when a tap was requested, empty otherwise
};
DenoiseOutput denoiser_forward(const DenoiserUnet& unet, const LatentSequence& z_t, float sigma,
                               const LatentSequence& z_c, const Preconditioner& pre,
                               std::optional<BlockId> tap = {});

// lambda(sigma) * mean((denoised - z0)^2): the objective given any
// denoiser output, so oracle denoisers can drive it directly.
Var dsm_loss_from_denoised(Tape& t, Var denoised, const Tensor& z0, float sigma);
// Same with the real preconditioned denoiser; exposes the tap for SFR.
Var dsm_loss_graph(const DenoiserUnet& unet, Tape& t, const Tensor& z0, const Tensor& z_c, float sigma,
                   const Tensor& eps, const Preconditioner& pre, std::optional<BlockId> tap = {},
                   Var* tap_out = nullptr);
float dsm_loss(const DenoiserUnet& unet, const Tensor& z0, const Tensor& z_c, float sigma, const Tensor& eps,
               const Preconditioner& pre);

// Deterministic Euler ODE sampler over the rho-7 ladder, starting from
// sigma_max * eps and ending at sigma = 0.
using DenoiseFn = std::function<Tensor(const Tensor& x, float sigma)>;
Tensor euler_sample_with(const DenoiseFn& denoise, const Tensor& start_eps, int steps, float sigma_max);
Tensor euler_sample(const DenoiserUnet& unet, const Tensor& z_c, int steps, float sigma_max, const Tensor& eps,
                    const Preconditioner& pre);
Tensor euler_sample(const DenoiserUnet& unet, const Tensor& z_c, int steps, float sigma_max, Rng& rng,
                    const Preconditioner& pre);

// Single-step prediction from start = sigma_star * eps (eps = zeros when
// null): returns D(start; sigma_star; z_c).
Tensor one_step_predict(const DenoiserUnet& unet, const Tensor& z_c, float sigma_star, const Tensor* eps,
                        const Preconditioner& pre);
DenoiseGraph one_step_predict_graph(const DenoiserUnet& unet, Tape& t, const Tensor& z_c, float sigma_star,
                                    const Tensor* eps, const Preconditioner& pre, std::optional<BlockId> tap = {});

}  // namespace ncast
