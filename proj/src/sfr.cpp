#include "normalcast/sfr.hpp"

#include <cmath>

#include "normalcast/image.hpp"
#include "normalcast/layout.hpp"

namespace ncast {

SemanticEncoder::SemanticEncoder(SemanticEncoderConfig c, uint64_t seed) : cfg(c) {
    if (cfg.patch != 8) throw ConfigError("semantic encoder supports patch size 8");
    Rng rng(seed);
    const ParamTag S = ParamTag::Spatial;
    c1_ = make_conv(params, "sem.c1", 3, cfg.base, 3, 2, 1, S, rng);
    n1_ = make_norm(params, "sem.n1", cfg.base, cfg.gn_groups, S);
    c2_ = make_conv(params, "sem.c2", cfg.base, 2 * cfg.base, 3, 2, 1, S, rng);
    n2_ = make_norm(params, "sem.n2", 2 * cfg.base, cfg.gn_groups, S);
    c3_ = make_conv(params, "sem.c3", 2 * cfg.base, cfg.dim, 3, 2, 1, S, rng);
}

Var SemanticEncoder::encode_graph(Tape& t, Var x) const {
    Var h = silu(apply_group_norm(t, n1_, c1_(t, x)));
    h = silu(apply_group_norm(t, n2_, c2_(t, h)));
    return c3_(t, h);
}

Tensor SemanticEncoder::encode(const Tensor& frames_fchw) const {
    Tape t;
    Var h = encode_graph(t, make_constant(t, frames_fchw));
    const Tensor& f = t.val(h);  // [F,D,gh,gw]
    int F = f.dim(0), D = f.dim(1), gh = f.dim(2), gw = f.dim(3);
    Tensor out({F, gh * gw, D});
    for (int fr = 0; fr < F; ++fr)
        for (int d = 0; d < D; ++d)
            for (int p = 0; p < gh * gw; ++p)
                out[((long long)fr * gh * gw + p) * D + d] = f[((long long)fr * D + d) * gh * gw + p];
    return out;
}

void SemanticEncoder::save(const std::string& dir, const nlohmann::json& extra) const {
    nlohmann::json meta = extra;
    meta["kind"] = "semantic_encoder";
    meta["patch"] = cfg.patch;
    meta["dim"] = cfg.dim;
    meta["base"] = cfg.base;
    meta["gn_groups"] = cfg.gn_groups;
    save_params(params, dir, meta);
}

SemanticEncoder SemanticEncoder::load(const std::string& dir) {
    nlohmann::json meta = read_checkpoint_meta(dir);
    SemanticEncoderConfig c;
    c.patch = meta.at("patch").get<int>();
    c.dim = meta.at("dim").get<int>();
    c.base = meta.at("base").get<int>();
    c.gn_groups = meta.at("gn_groups").get<int>();
    SemanticEncoder e(c, 0);
    load_params(e.params, dir);
    return e;
}

std::vector<float> pretrain_semantic_encoder(SemanticEncoder& enc,
                                             const std::function<Tensor(Rng&)>& sample_frame_chw,
                                             const SemanticPretrainConfig& cfg) {
    if (!sample_frame_chw) throw ConfigError("semantic pretraining: empty dataset");
    Rng rng(cfg.seed);
    // throwaway reconstruction head
    ParamStore dec;
    Rng drng(cfg.seed ^ 0x5eedULL);
    const int b = enc.cfg.base, D = enc.cfg.dim, g = enc.cfg.gn_groups;
    Conv2dLayer d1 = make_conv(dec, "d1", D, 2 * b, 3, 1, 1, ParamTag::Spatial, drng);
    NormLayer dn1 = make_norm(dec, "dn1", 2 * b, g, ParamTag::Spatial);
    Conv2dLayer d2 = make_conv(dec, "d2", 2 * b, b, 3, 1, 1, ParamTag::Spatial, drng);
    NormLayer dn2 = make_norm(dec, "dn2", b, g, ParamTag::Spatial);
    Conv2dLayer d3 = make_conv(dec, "d3", b, 3, 3, 1, 1, ParamTag::Spatial, drng);

    AdamW opt;
    enc.params.set_requires_grad(true);
    std::vector<Param*> trainable = enc.params.all();
    for (Param* p : dec.all()) trainable.push_back(p);
    std::vector<float> log;
    const int P = enc.cfg.patch;

    for (long long step = 0; step < cfg.steps; ++step) {
        // build batch with random patch masks
        std::vector<Tensor> frames;
        for (int i = 0; i < cfg.batch_frames; ++i) frames.push_back(sample_frame_chw(rng));
        int C = frames[0].dim(0), H = frames[0].dim(1), W = frames[0].dim(2);
        int gh = H / P, gw = W / P;
        Tensor x({cfg.batch_frames, C, H, W}), target({cfg.batch_frames, C, H, W});
        Mask masked({cfg.batch_frames, C, H, W});
        for (int i = 0; i < cfg.batch_frames; ++i) {
            std::copy(frames[(size_t)i].data(), frames[(size_t)i].data() + frames[(size_t)i].size(),
                      target.data() + (long long)i * C * H * W);
            std::copy(frames[(size_t)i].data(), frames[(size_t)i].data() + frames[(size_t)i].size(),
                      x.data() + (long long)i * C * H * W);
            for (int py = 0; py < gh; ++py)
                for (int px = 0; px < gw; ++px) {
                    if (!rng.bernoulli(cfg.mask_fraction)) continue;
                    for (int c = 0; c < C; ++c)
                        for (int y = py * P; y < (py + 1) * P; ++y)
                            for (int xx = px * P; xx < (px + 1) * P; ++xx) {
                                long long idx = (((long long)i * C + c) * H + y) * W + xx;
                                x[idx] = 0.0f;
                                masked.set(idx, true);
                            }
                }
        }
        if (masked.count() == 0) continue;  // nothing masked this draw

        Tape t;
        Var feats = enc.encode_graph(t, make_constant(t, x));  // [B,D,gh,gw]
        Var h = silu(apply_group_norm(t, dn1, d1(t, upsample_nearest2x(feats))));
        h = silu(apply_group_norm(t, dn2, d2(t, upsample_nearest2x(h))));
        Var recon = d3(t, upsample_nearest2x(h));
        Var loss = masked_mean(square(sub(recon, make_constant(t, target))), masked);

        float lv = t.val(loss)[0];
        if (!std::isfinite(lv)) throw TrainingError("semantic pretraining loss is not finite", step);
        log.push_back(lv);

        for (Param* p : trainable) p->grad.fill(0.0f);
        t.backward(loss);
        clip_global_norm(trainable, cfg.grad_clip);
        opt.step(trainable, lr_at(cfg.schedule, step + 1));
    }
    return log;
}

PatchFeatures encode_semantic(const SemanticEncoder& enc, const Tensor& frames_fhwc, int gh, int gw) {
    if (frames_fhwc.rank() != 4 || frames_fhwc.dim(3) != 3) throw ShapeError("encode_semantic: expects [F,H,W,3]");
    int F = frames_fhwc.dim(0);
    int th = gh * enc.cfg.patch, tw = gw * enc.cfg.patch;
    Tensor resized({F, th, tw, 3});
    for (int f = 0; f < F; ++f) {
        Tensor frame({frames_fhwc.dim(1), frames_fhwc.dim(2), 3});
        std::copy(frames_fhwc.data() + (long long)f * frame.size(),
                  frames_fhwc.data() + (long long)(f + 1) * frame.size(), frame.data());
        Tensor r = resize_bilinear(frame, th, tw);
        std::copy(r.data(), r.data() + r.size(), resized.data() + (long long)f * r.size());
    }
    PatchFeatures out;
    out.feats = enc.encode(fhwc_to_fchw(rgb01_to_pm1(resized)));
    if (out.feats.dim(1) != gh * gw) throw ConfigError("encode_semantic: patch grid does not match tap size");
    out.gh = gh;
    out.gw = gw;
    return out;
}

Projector::Projector(int in_dim_, int hidden_, int out_dim_, uint64_t seed)
    : in_dim(in_dim_), hidden(hidden_), out_dim(out_dim_) {
    if (hidden < out_dim) throw ConfigError("projector hidden width must be >= output dim");
    Rng rng(seed);
    mlp = make_mlp(params, "proj", {in_dim, hidden, hidden, out_dim}, ParamTag::Spatial, rng);
}

Var Projector::project_graph(Tape& t, Var tapped) const {
    const Tensor& v = t.val(tapped);
    if (v.rank() != 4 || v.dim(1) != in_dim)
        throw ShapeError("projector: expected [F," + std::to_string(in_dim) + ",h,w], got " + shape_str(v.shape()));
    int F = v.dim(0), Cl = v.dim(1), hl = v.dim(2), wl = v.dim(3);
    Var tok = permute(reshape(tapped, {F, Cl, hl * wl}), {0, 2, 1});  // [F,N,Cl]
    return mlp(t, tok);                                              // [F,N,D]
}

PatchFeatures Projector::project(const Tensor& tapped_fhwc) const {
    Tape t;
    Var x = make_constant(t, fhwc_to_fchw(tapped_fhwc));
    Var y = project_graph(t, x);
    PatchFeatures out;
    out.feats = t.val(y);
    out.gh = tapped_fhwc.dim(1);
    out.gw = tapped_fhwc.dim(2);
    return out;
}

void Projector::save(const std::string& dir, const nlohmann::json& extra) const {
    nlohmann::json meta = extra;
    meta["kind"] = "projector";
    meta["in_dim"] = in_dim;
    meta["hidden"] = hidden;
    meta["out_dim"] = out_dim;
    save_params(const_cast<ParamStore&>(params), dir, meta);
}

Projector Projector::load(const std::string& dir) {
    nlohmann::json meta = read_checkpoint_meta(dir);
    Projector p(meta.at("in_dim").get<int>(), meta.at("hidden").get<int>(), meta.at("out_dim").get<int>(), 0);
    load_params(p.params, dir);
    return p;
}

float reg_loss(const PatchFeatures& semantic, const PatchFeatures& projected, bool* degenerate_warning) {
    if (semantic.feats.shape() != projected.feats.shape()) throw ShapeError("reg_loss: feature shape mismatch");
    const float eps = 1e-8f;
    int D = semantic.feats.dim(semantic.feats.rank() - 1);
    long long rows = semantic.feats.size() / D;
    double acc = 0.0;
    bool any_nonzero = false;
    for (long long r = 0; r < rows; ++r) {
        const float* a = projected.feats.data() + r * D;
        const float* b = semantic.feats.data() + r * D;
        double d = 0, na = 0, nb = 0;
        for (int i = 0; i < D; ++i) {
            d += (double)a[i] * b[i];
            na += (double)a[i] * a[i];
            nb += (double)b[i] * b[i];
        }
        if (na > 0 && nb > 0) any_nonzero = true;
        acc += d / ((std::sqrt(na) + eps) * (std::sqrt(nb) + eps));
    }
    if (degenerate_warning) *degenerate_warning = !any_nonzero;
    return (float)(-acc / (double)rows);
}

Var reg_loss_graph(Tape& t, Var projected, const Tensor& semantic) {
    if (t.val(projected).shape() != semantic.shape()) throw ShapeError("reg_loss: feature shape mismatch");
    return scale(mean_all(cosine_rows(projected, semantic, 1e-8f)), -1.0f);
}

}  // namespace ncast
