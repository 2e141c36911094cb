#include "normalcast/diffusion.hpp"

#include <cmath>

#include "normalcast/layout.hpp"

namespace ncast {

float sample_sigma(const NoiseSamplerConfig& cfg, Rng& rng) {
    if (cfg.fixed_prob < 0.0f || cfg.fixed_prob > 1.0f) throw ConfigError("sigma fixed_prob outside [0,1]");
    if (rng.bernoulli(cfg.fixed_prob)) return cfg.fixed_value;
    return std::exp((float)rng.normal(cfg.lognormal_loc, cfg.lognormal_scale));
}

double lambda_weight(double sigma) {
    if (sigma <= 0.0) throw ConfigError("lambda_weight: sigma must be positive");
    return (1.0 + sigma * sigma) / (sigma * sigma);
}

PrecondCoeffs Preconditioner::coeffs(float sigma) const {
    if (sigma <= 0.0f) throw ConfigError("preconditioner: sigma must be positive");
    float sd2 = sigma_data * sigma_data;
    float s2 = sigma * sigma;
    PrecondCoeffs c;
    c.c_skip = sd2 / (s2 + sd2);
    c.c_out = sigma * sigma_data / std::sqrt(s2 + sd2);
    c.c_in = 1.0f / std::sqrt(s2 + sd2);
    c.c_noise = 0.25f * std::log(sigma);
    return c;
}

Tensor add_noise(const Tensor& z0, float sigma, const Tensor& eps) {
    if (sigma <= 0.0f) throw ConfigError("add_noise: sigma must be positive");
    if (z0.shape() != eps.shape()) throw ShapeError("add_noise: eps shape mismatch");
    Tensor out = z0;
    for (long long i = 0; i < out.size(); ++i) out[i] += sigma * eps[i];
    return out;
}

std::vector<float> sigma_ladder(int steps, float sigma_max, float sigma_min, float rho) {
    if (steps < 1) throw ConfigError("sigma_ladder: steps must be >= 1");
    std::vector<float> out;
    if (steps == 1) {
        out = {sigma_max, 0.0f};
        return out;
    }
    double a = std::pow((double)sigma_max, 1.0 / rho);
    double b = std::pow((double)sigma_min, 1.0 / rho);
    out.push_back(sigma_max);
    for (int i = 1; i < steps; ++i)
        out.push_back((float)std::pow(a + (b - a) * (double)i / (double)(steps - 1), (double)rho));
    out.push_back(0.0f);
    return out;
}

DenoiseGraph denoiser_forward_graph(const DenoiserUnet& unet, Tape& t, Var z_t, float sigma, Var z_c,
                                    const Preconditioner& pre, std::optional<BlockId> tap) {
    const Tensor& a = t.val(z_t);
    const Tensor& b = t.val(z_c);
    if (a.shape() != b.shape()) throw ShapeError("denoiser: z_t and z_c shapes differ");
    PrecondCoeffs c = pre.coeffs(sigma);
    Var x = scale(concat(z_t, z_c, 1), c.c_in);
    auto raw = unet.raw_forward(t, x, c.c_noise, tap);
    Var out = add(scale(z_t, c.c_skip), scale(raw.out, c.c_out));
    return DenoiseGraph{out, raw.tap};
}

DenoiseOutput denoiser_forward(const DenoiserUnet& unet, const LatentSequence& z_t, float sigma,
                               const LatentSequence& z_c, const Preconditioner& pre, std::optional<BlockId> tap) {
    Tape t;
    Var zt = make_constant(t, fhwc_to_fchw(z_t.latents));
    Var zc = make_constant(t, fhwc_to_fchw(z_c.latents));
    DenoiseGraph g = denoiser_forward_graph(unet, t, zt, sigma, zc, pre, tap);
    DenoiseOutput out;
    out.denoised.latents = fchw_to_fhwc(t.val(g.denoised));
    out.denoised.downsample = z_t.downsample;
    out.denoised.channels = z_t.channels;
    if (g.tap.valid()) out.tapped = fchw_to_fhwc(t.val(g.tap));
    return out;
}

Var dsm_loss_from_denoised(Tape& t, Var denoised, const Tensor& z0, float sigma) {
    Var err = mean_all(square(sub(denoised, make_constant(t, z0))));
    return scale(err, (float)lambda_weight(sigma));
}

Var dsm_loss_graph(const DenoiserUnet& unet, Tape& t, const Tensor& z0, const Tensor& z_c, float sigma,
                   const Tensor& eps, const Preconditioner& pre, std::optional<BlockId> tap, Var* tap_out) {
    Tensor z_t = add_noise(z0, sigma, eps);
    Var ztv = make_constant(t, z_t);
    Var zcv = make_constant(t, z_c);
    DenoiseGraph g = denoiser_forward_graph(unet, t, ztv, sigma, zcv, pre, tap);
    if (tap_out) *tap_out = g.tap;
    return dsm_loss_from_denoised(t, g.denoised, z0, sigma);
}

float dsm_loss(const DenoiserUnet& unet, const Tensor& z0, const Tensor& z_c, float sigma, const Tensor& eps,
               const Preconditioner& pre) {
    Tape t;
    Var l = dsm_loss_graph(unet, t, z0, z_c, sigma, eps, pre);
    return t.val(l)[0];
}

namespace {

Tensor denoise_once(const DenoiserUnet& unet, const Tensor& x, float sigma, const Tensor& z_c,
                    const Preconditioner& pre) {
    Tape t;
    DenoiseGraph g = denoiser_forward_graph(unet, t, make_constant(t, x), sigma, make_constant(t, z_c), pre, {});
    return t.val(g.denoised);
}

}  // namespace

Tensor euler_sample_with(const DenoiseFn& denoise, const Tensor& start_eps, int steps, float sigma_max) {
    std::vector<float> sig = sigma_ladder(steps, sigma_max);
    Tensor x = start_eps;
    for (long long i = 0; i < x.size(); ++i) x[i] *= sigma_max;
    for (int i = 0; i < steps; ++i) {
        float s = sig[(size_t)i], s_next = sig[(size_t)i + 1];
        Tensor d0 = denoise(x, s);
        float r = s_next / s;
        // x_{i+1} = x + (s_next - s) * (x - D)/s = r*x + (1-r)*D
        for (long long k = 0; k < x.size(); ++k) x[k] = r * x[k] + (1.0f - r) * d0[k];
    }
    return x;
}

Tensor euler_sample(const DenoiserUnet& unet, const Tensor& z_c, int steps, float sigma_max, const Tensor& eps,
                    const Preconditioner& pre) {
    DenoiseFn fn = [&](const Tensor& x, float s) { return denoise_once(unet, x, s, z_c, pre); };
    return euler_sample_with(fn, eps, steps, sigma_max);
}

Tensor euler_sample(const DenoiserUnet& unet, const Tensor& z_c, int steps, float sigma_max, Rng& rng,
                    const Preconditioner& pre) {
    Tensor eps(z_c.shape());
    for (long long i = 0; i < eps.size(); ++i) eps[i] = (float)rng.normal();
    return euler_sample(unet, z_c, steps, sigma_max, eps, pre);
}

Tensor one_step_predict(const DenoiserUnet& unet, const Tensor& z_c, float sigma_star, const Tensor* eps,
                        const Preconditioner& pre) {
    Tensor start(z_c.shape());
    if (eps) {
        if (eps->shape() != z_c.shape()) throw ShapeError("one_step_predict: eps shape mismatch");
        for (long long i = 0; i < start.size(); ++i) start[i] = sigma_star * (*eps)[i];
    }
    return denoise_once(unet, start, sigma_star, z_c, pre);
}

DenoiseGraph one_step_predict_graph(const DenoiserUnet& unet, Tape& t, const Tensor& z_c, float sigma_star,
                                    const Tensor* eps, const Preconditioner& pre, std::optional<BlockId> tap) {
    Tensor start(z_c.shape());
    if (eps) {
        if (eps->shape() != z_c.shape()) throw ShapeError("one_step_predict: eps shape mismatch");
        for (long long i = 0; i < start.size(); ++i) start[i] = sigma_star * (*eps)[i];
    }
    return denoiser_forward_graph(unet, t, make_constant(t, start), sigma_star, make_constant(t, z_c), pre, tap);
}

}  // namespace ncast
