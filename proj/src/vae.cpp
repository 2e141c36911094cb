#include "normalcast/vae.hpp"

#include <cmath>

#include "normalcast/layout.hpp"
#include "normalcast/losses.hpp"

namespace ncast {

double angular_loss_rad(const Tensor& pred, const Tensor& gt, const Mask& valid) {
    if (pred.shape() != gt.shape()) throw ShapeError("angular_loss: shape mismatch");
    long long cnt = 0;
    double sum = 0.0;
    int K = pred.dim(pred.rank() - 1);
    for (long long p = 0; p < valid.size(); ++p) {
        if (!valid.get(p)) continue;
        const float* a = pred.data() + p * K;
        const float* b = gt.data() + p * K;
        double na = 0, nb = 0, d = 0;
        for (int i = 0; i < K; ++i) {
            na += (double)a[i] * a[i];
            nb += (double)b[i] * b[i];
            d += (double)a[i] * b[i];
        }
        if (na <= 0 || nb <= 0) continue;
        double c = d / (std::sqrt(na) * std::sqrt(nb));
        c = std::min(1.0, std::max(-1.0, c));
        sum += std::acos(c);
        ++cnt;
    }
    if (cnt == 0) throw MetricError("angular_loss: empty valid mask");
    return sum / (double)cnt;
}

double psnr_pm1(const Tensor& x, const Tensor& xhat) {
    if (x.shape() != xhat.shape()) throw ShapeError("psnr: shape mismatch");
    double mse = 0.0;
    for (long long i = 0; i < x.size(); ++i) {
        double d = (double)x[i] - xhat[i];
        mse += d * d;
    }
    mse /= (double)x.size();
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(4.0 / mse));
}

Vae::Vae(VaeConfig c, uint64_t seed) : cfg(c) {
    Rng rng(seed);
    const int b = cfg.base;
    const int C = cfg.latent_channels;
    const int g = cfg.gn_groups;
    const ParamTag S = ParamTag::Spatial;
    e_stem_ = make_conv(params, "enc.stem", 3, b, 3, 1, 1, S, rng);
    e_n0_ = make_norm(params, "enc.n0", b, g, S);
    e_down1_ = make_conv(params, "enc.down1", b, 2 * b, 3, 2, 1, S, rng);
    e_n1_ = make_norm(params, "enc.n1", 2 * b, g, S);
    e_down2_ = make_conv(params, "enc.down2", 2 * b, 4 * b, 3, 2, 1, S, rng);
    e_n2_ = make_norm(params, "enc.n2", 4 * b, g, S);
    e_down3_ = make_conv(params, "enc.down3", 4 * b, 4 * b, 3, 2, 1, S, rng);
    e_n3_ = make_norm(params, "enc.n3", 4 * b, g, S);
    e_out_ = make_conv(params, "enc.out", 4 * b, 2 * C, 3, 1, 1, S, rng);

    d_in_ = make_conv(params, "dec.in", C, 4 * b, 3, 1, 1, S, rng);
    d_n0_ = make_norm(params, "dec.n0", 4 * b, g, S);
    d_up1_ = make_conv(params, "dec.up1", 4 * b, 4 * b, 3, 1, 1, S, rng);
    d_n1_ = make_norm(params, "dec.n1", 4 * b, g, S);
    d_up2_ = make_conv(params, "dec.up2", 4 * b, 2 * b, 3, 1, 1, S, rng);
    d_n2_ = make_norm(params, "dec.n2", 2 * b, g, S);
    d_up3_ = make_conv(params, "dec.up3", 2 * b, b, 3, 1, 1, S, rng);
    d_n3_ = make_norm(params, "dec.n3", b, g, S);
    d_out_ = make_conv(params, "dec.out", b, 3, 3, 1, 1, S, rng);
}

Var Vae::encode_moments_graph(Tape& t, Var x) const {
    const Tensor& xv = t.val(x);
    if (xv.dim(2) % cfg.downsample != 0 || xv.dim(3) % cfg.downsample != 0)
        throw ShapeError("encode: H,W must be divisible by " + std::to_string(cfg.downsample));
    Var h = silu(apply_group_norm(t, e_n0_, e_stem_(t, x)));
    h = silu(apply_group_norm(t, e_n1_, e_down1_(t, h)));
    h = silu(apply_group_norm(t, e_n2_, e_down2_(t, h)));
    h = silu(apply_group_norm(t, e_n3_, e_down3_(t, h)));
    return e_out_(t, h);
}

Var Vae::encode_graph(Tape& t, Var x) const {
    Var m = encode_moments_graph(t, x);
    return slice(m, 1, 0, cfg.latent_channels);
}

Var Vae::decode_graph(Tape& t, Var z) const {
    if (t.val(z).dim(1) != cfg.latent_channels)
        throw ShapeError("decode: expected " + std::to_string(cfg.latent_channels) + " latent channels, got " +
                         std::to_string(t.val(z).dim(1)));
    Var h = silu(apply_group_norm(t, d_n0_, d_in_(t, z)));
    h = silu(apply_group_norm(t, d_n1_, d_up1_(t, upsample_nearest2x(h))));
    h = silu(apply_group_norm(t, d_n2_, d_up2_(t, upsample_nearest2x(h))));
    h = silu(apply_group_norm(t, d_n3_, d_up3_(t, upsample_nearest2x(h))));
    return tanh_act(d_out_(t, h));
}

LatentSequence Vae::encode(const Tensor& fhwc) const {
    Tape t;
    Var x = make_constant(t, fhwc_to_fchw(fhwc));
    Var z = encode_graph(t, x);
    LatentSequence out;
    out.latents = fchw_to_fhwc(t.val(z));
    out.downsample = cfg.downsample;
    out.channels = cfg.latent_channels;
    return out;
}

Tensor Vae::decode(const LatentSequence& z) const {
    Tape t;
    Var zv = make_constant(t, fhwc_to_fchw(z.latents));
    Var x = decode_graph(t, zv);
    return fchw_to_fhwc(t.val(x));
}

std::vector<Param*> Vae::encoder_params() {
    std::vector<Param*> out;
    for (Param* p : params.all())
        if (p->name.rfind("enc.", 0) == 0) out.push_back(p);
    return out;
}

std::vector<Param*> Vae::decoder_params() {
    std::vector<Param*> out;
    for (Param* p : params.all())
        if (p->name.rfind("dec.", 0) == 0) out.push_back(p);
    return out;
}

void Vae::save(const std::string& dir, const nlohmann::json& extra_meta) const {
    nlohmann::json meta = extra_meta;
    meta["kind"] = "vae";
    meta["base"] = cfg.base;
    meta["latent_channels"] = cfg.latent_channels;
    meta["downsample"] = cfg.downsample;
    meta["gn_groups"] = cfg.gn_groups;
    save_params(params, dir, meta);
}

Vae Vae::load(const std::string& dir) {
    nlohmann::json meta = read_checkpoint_meta(dir);
    VaeConfig c;
    c.base = meta.at("base").get<int>();
    c.latent_channels = meta.at("latent_channels").get<int>();
    c.downsample = meta.at("downsample").get<int>();
    c.gn_groups = meta.at("gn_groups").get<int>();
    Vae v(c, 0);
    load_params(v.params, dir);
    return v;
}

namespace {

Tensor stack_frames(const std::vector<Tensor>& frames) {
    int B = (int)frames.size();
    int C = frames[0].dim(0), H = frames[0].dim(1), W = frames[0].dim(2);
    Tensor out({B, C, H, W});
    for (int i = 0; i < B; ++i)
        std::copy(frames[(size_t)i].data(), frames[(size_t)i].data() + frames[(size_t)i].size(),
                  out.data() + (long long)i * C * H * W);
    return out;
}

}  // namespace

std::vector<float> train_vae(Vae& vae, const FrameSampler& sample, const VaeTrainConfig& cfg) {
    if (!sample) throw ConfigError("train_vae: empty dataset");
    Rng rng(cfg.seed);
    AdamW opt;
    vae.params.reset_moments();
    vae.params.set_requires_grad(true);
    auto all = vae.params.all();
    const int C = vae.cfg.latent_channels;
    std::vector<float> log;
    for (long long step = 0; step < cfg.steps; ++step) {
        std::vector<Tensor> batch;
        for (int i = 0; i < cfg.batch_frames; ++i) batch.push_back(sample(rng).chw);
        Tensor x = stack_frames(batch);
        Tensor eps(Shape{x.dim(0), C, x.dim(2) / vae.cfg.downsample, x.dim(3) / vae.cfg.downsample});
        for (long long i = 0; i < eps.size(); ++i) eps[i] = (float)rng.normal();

        Tape t;
        Var xv = make_constant(t, x);
        Var moments = vae.encode_moments_graph(t, xv);
        Var mu = slice(moments, 1, 0, C);
        Var logvar = clamp_op(slice(moments, 1, C, 2 * C), -30.0f, 20.0f);
        Var z = add(mu, mul_const(exp_act(scale(logvar, 0.5f)), eps));
        Var xhat = vae.decode_graph(t, z);
        Var recon = mean_all(square(sub(xhat, xv)));
        // KL(N(mu,sigma) || N(0,1)) averaged per element
        Var kl = scale(mean_all(sub(exp_act(logvar), add_scalar(sub(logvar, square(mu)), 1.0f))), 0.5f);
        Var loss = add(recon, scale(kl, cfg.kl_weight));

        float lv = t.val(loss)[0];
        if (!std::isfinite(lv)) throw TrainingError("vae loss is not finite", step);
        log.push_back(lv);

        vae.params.zero_grad();
        t.backward(loss);
        clip_global_norm(all, cfg.grad_clip);
        opt.step(all, lr_at(cfg.schedule, step + 1));
    }
    return log;
}

std::vector<float> finetune_decoder(Vae& vae, const FrameSampler& sample_normals, const VaeTrainConfig& cfg) {
    if (!sample_normals) throw ConfigError("finetune_decoder: empty dataset");
    Rng rng(cfg.seed);
    AdamW opt;
    vae.params.reset_moments();
    vae.params.set_requires_grad(true);
    for (Param* p : vae.encoder_params()) p->requires_grad = false;  // freeze contract
    auto dec = vae.decoder_params();
    std::vector<float> log;
    for (long long step = 0; step < cfg.steps; ++step) {
        std::vector<Tensor> batch;
        std::vector<Mask> masks;
        for (int i = 0; i < cfg.batch_frames; ++i) {
            TrainFrame f = sample_normals(rng);
            batch.push_back(std::move(f.chw));
            masks.push_back(std::move(f.valid));
        }
        Tensor x = stack_frames(batch);
        int H = x.dim(2), W = x.dim(3);
        Mask valid({(int)masks.size(), H, W});
        for (size_t i = 0; i < masks.size(); ++i)
            for (long long p = 0; p < (long long)H * W; ++p) valid.set((long long)i * H * W + p, masks[i].get(p));

        // encoder is frozen: latents can be computed off-tape
        Tape enc_t;
        Var ev = vae.encode_graph(enc_t, make_constant(enc_t, x));
        Tensor z = enc_t.val(ev);

        Tape t;
        Var xhat = vae.decode_graph(t, make_constant(t, z));
        // angular loss wants channels-last vectors
        int B = x.dim(0);
        Var pred = permute(xhat, {0, 2, 3, 1});
        Tensor gt_fhwc = fchw_to_fhwc(x.reshaped({B, 3, H, W}));
        Var ang = angular_loss_graph(t, pred, gt_fhwc, valid);
        Var l2 = mean_all(square(sub(xhat, make_constant(t, x))));
        Var loss = add(ang, scale(l2, 0.1f));

        float lv = t.val(loss)[0];
        if (!std::isfinite(lv)) throw TrainingError("decoder finetune loss is not finite", step);
        log.push_back(lv);

        vae.params.zero_grad();
        t.backward(loss);
        clip_global_norm(dec, cfg.grad_clip);
        opt.step(dec, lr_at(cfg.schedule, step + 1));
    }
    vae.params.set_requires_grad(true);
    return log;
}

ReconMetrics reconstruction_metrics(const Tensor& x, const Tensor& xhat, const Mask& valid) {
    ReconMetrics m;
    m.mean_angular_deg = rad_to_deg(angular_loss_rad(xhat, x, valid));
    m.psnr_db = psnr_pm1(x, xhat);
    return m;
}

}  // namespace ncast
