#include "normalcast/unet.hpp"

namespace ncast {

const char* block_name(BlockId b) {
    switch (b) {
        case BlockId::Down0: return "Down0";
        case BlockId::Down1: return "Down1";
        case BlockId::Down2: return "Down2";
        case BlockId::Down3: return "Down3";
        case BlockId::Mid: return "Mid";
        case BlockId::Up0: return "Up0";
        case BlockId::Up1: return "Up1";
        case BlockId::Up2: return "Up2";
        case BlockId::Up3: return "Up3";
    }
    return "?";
}

BlockId parse_block(const std::string& name) {
    for (BlockId b : {BlockId::Down0, BlockId::Down1, BlockId::Down2, BlockId::Down3, BlockId::Mid, BlockId::Up0,
                      BlockId::Up1, BlockId::Up2, BlockId::Up3})
        if (name == block_name(b)) return b;
    throw ConfigError("unknown tap block: " + name);
}

std::vector<BlockId> ablation_blocks() {
    return {BlockId::Down1, BlockId::Down2, BlockId::Down3, BlockId::Mid, BlockId::Up0, BlockId::Up1, BlockId::Up2};
}

namespace {

ResBlock make_res(ParamStore& ps, const std::string& name, int cin, int cout, int emb_dim, int groups, Rng& rng) {
    ResBlock r;
    r.groups = groups;
    r.n1 = make_norm(ps, name + ".n1", cin, groups, ParamTag::Spatial);
    r.c1 = make_conv(ps, name + ".c1", cin, cout, 3, 1, 1, ParamTag::Spatial, rng);
    r.emb = make_linear(ps, name + ".emb", emb_dim, cout, ParamTag::Spatial, rng);
    r.n2 = make_norm(ps, name + ".n2", cout, groups, ParamTag::Spatial);
    r.c2 = make_conv(ps, name + ".c2", cout, cout, 3, 1, 1, ParamTag::Spatial, rng, 0.0f);
    r.has_skip = cin != cout;
    if (r.has_skip) r.skip = make_conv(ps, name + ".skip", cin, cout, 1, 1, 0, ParamTag::Spatial, rng);
    return r;
}

int heads_for(int c) { return std::max(1, c / 32); }

// tokens are per-frame pixels: [F,C,h,w] -> [F,hw,C]
Var spatial_attention(Tape& t, const AttentionLayer& a, Var x) {
    const Tensor& xv = t.val(x);
    int F = xv.dim(0), C = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Var tok = permute(reshape(x, {F, C, h * w}), {0, 2, 1});
    tok = a(t, tok);
    return reshape(permute(tok, {0, 2, 1}), {F, C, h, w});
}

// tokens are per-pixel frame sequences: [F,C,h,w] -> [hw,F,C]
Var temporal_attention(Tape& t, const AttentionLayer& a, Var x) {
    const Tensor& xv = t.val(x);
    int F = xv.dim(0), C = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Var tok = permute(reshape(x, {F, C, h * w}), {2, 0, 1});
    tok = a(t, tok);
    return reshape(permute(tok, {1, 2, 0}), {F, C, h, w});
}

}  // namespace

DenoiserUnet::DenoiserUnet(UnetConfig c, uint64_t seed) : cfg(c) {
    Rng rng(seed);
    const int b = cfg.base;
    const int E = cfg.emb_dim;
    const int g = cfg.gn_groups;
    const ParamTag S = ParamTag::Spatial, T = ParamTag::Temporal;

    stem_ = make_conv(params, "stem", 2 * cfg.latent_channels, b, 3, 1, 1, S, rng);
    noise_mlp_ = make_mlp(params, "noise_mlp", {64, E, E}, S, rng);

    rb_[0] = make_res(params, "down0.res", b, b, E, g, rng);
    tattn_[0] = make_attention(params, "down0.tattn", b, heads_for(b), T, rng);
    ds0_ = make_conv(params, "down0.ds", b, b, 3, 2, 1, S, rng);

    rb_[1] = make_res(params, "down1.res", b, 2 * b, E, g, rng);
    sattn_[0] = make_attention(params, "down1.sattn", 2 * b, heads_for(2 * b), S, rng);
    tattn_[1] = make_attention(params, "down1.tattn", 2 * b, heads_for(2 * b), T, rng);
    ds1_ = make_conv(params, "down1.ds", 2 * b, 2 * b, 3, 2, 1, S, rng);

    rb_[2] = make_res(params, "down2.res", 2 * b, 4 * b, E, g, rng);
    sattn_[1] = make_attention(params, "down2.sattn", 4 * b, heads_for(4 * b), S, rng);
    tattn_[2] = make_attention(params, "down2.tattn", 4 * b, heads_for(4 * b), T, rng);

    rb_[3] = make_res(params, "down3.res", 4 * b, 4 * b, E, g, rng);
    sattn_[2] = make_attention(params, "down3.sattn", 4 * b, heads_for(4 * b), S, rng);
    tattn_[3] = make_attention(params, "down3.tattn", 4 * b, heads_for(4 * b), T, rng);

    rb_[4] = make_res(params, "mid.res1", 4 * b, 4 * b, E, g, rng);
    sattn_[3] = make_attention(params, "mid.sattn", 4 * b, heads_for(4 * b), S, rng);
    tattn_[4] = make_attention(params, "mid.tattn", 4 * b, heads_for(4 * b), T, rng);
    rb_[5] = make_res(params, "mid.res2", 4 * b, 4 * b, E, g, rng);

    rb_[6] = make_res(params, "up0.res", 8 * b, 4 * b, E, g, rng);
    sattn_[4] = make_attention(params, "up0.sattn", 4 * b, heads_for(4 * b), S, rng);
    tattn_[5] = make_attention(params, "up0.tattn", 4 * b, heads_for(4 * b), T, rng);

    rb_[7] = make_res(params, "up1.res", 8 * b, 4 * b, E, g, rng);
    sattn_[5] = make_attention(params, "up1.sattn", 4 * b, heads_for(4 * b), S, rng);
    tattn_[6] = make_attention(params, "up1.tattn", 4 * b, heads_for(4 * b), T, rng);
    us1_ = make_conv(params, "up1.us", 4 * b, 2 * b, 3, 1, 1, S, rng);

    rb_[8] = make_res(params, "up2.res", 4 * b, 2 * b, E, g, rng);
    sattn_[6] = make_attention(params, "up2.sattn", 2 * b, heads_for(2 * b), S, rng);
    tattn_[7] = make_attention(params, "up2.tattn", 2 * b, heads_for(2 * b), T, rng);
    us2_ = make_conv(params, "up2.us", 2 * b, b, 3, 1, 1, S, rng);

    rb_[9] = make_res(params, "up3.res", 2 * b, b, E, g, rng);
    tattn_[8] = make_attention(params, "up3.tattn", b, heads_for(b), T, rng);

    out_norm_ = make_norm(params, "out.norm", b, g, S);
    out_conv_ = make_conv(params, "out.conv", b, cfg.latent_channels, 3, 1, 1, S, rng, 0.0f);
}

Var DenoiserUnet::res(Tape& t, const ResBlock& r, Var x, Var emb) const {
    Var h = r.c1(t, silu(apply_group_norm(t, r.n1, x)));
    h = add_channel_bias(h, r.emb(t, emb));
    h = r.c2(t, silu(apply_group_norm(t, r.n2, h)));
    Var s = r.has_skip ? r.skip(t, x) : x;
    return add(h, s);
}

DenoiserUnet::RawForward DenoiserUnet::raw_forward(Tape& t, Var x, float c_noise, std::optional<BlockId> tap) const {
    const Tensor& xv = t.val(x);
    if (xv.rank() != 4 || xv.dim(1) != 2 * cfg.latent_channels)
        throw ShapeError("unet: expected [F," + std::to_string(2 * cfg.latent_channels) + ",h,w] input, got " +
                         shape_str(xv.shape()));
    if (xv.dim(2) % 4 != 0 || xv.dim(3) % 4 != 0) throw ShapeError("unet: latent h,w must be divisible by 4");
    const bool tid = cfg.temporal_identity;

    Var emb = noise_mlp_(t, make_constant(t, sinusoidal_embedding(c_noise, 64)));

    Var cap;  // tapped features
    auto maybe_tap = [&](BlockId b, Var v) {
        if (tap && *tap == b) cap = v;
        return v;
    };

    Var h = stem_(t, x);
    Var s0 = maybe_tap(BlockId::Down0, tid ? res(t, rb_[0], h, emb) : temporal_attention(t, tattn_[0], res(t, rb_[0], h, emb)));
    h = ds0_(t, s0);
    Var s1 = res(t, rb_[1], h, emb);
    s1 = spatial_attention(t, sattn_[0], s1);
    if (!tid) s1 = temporal_attention(t, tattn_[1], s1);
    s1 = maybe_tap(BlockId::Down1, s1);
    h = ds1_(t, s1);
    Var s2 = spatial_attention(t, sattn_[1], res(t, rb_[2], h, emb));
    if (!tid) s2 = temporal_attention(t, tattn_[2], s2);
    s2 = maybe_tap(BlockId::Down2, s2);
    Var s3 = spatial_attention(t, sattn_[2], res(t, rb_[3], s2, emb));
    if (!tid) s3 = temporal_attention(t, tattn_[3], s3);
    s3 = maybe_tap(BlockId::Down3, s3);

    h = spatial_attention(t, sattn_[3], res(t, rb_[4], s3, emb));
    if (!tid) h = temporal_attention(t, tattn_[4], h);
    h = res(t, rb_[5], h, emb);
    h = maybe_tap(BlockId::Mid, h);

    h = spatial_attention(t, sattn_[4], res(t, rb_[6], concat(h, s3, 1), emb));
    if (!tid) h = temporal_attention(t, tattn_[5], h);
    h = maybe_tap(BlockId::Up0, h);

    h = spatial_attention(t, sattn_[5], res(t, rb_[7], concat(h, s2, 1), emb));
    if (!tid) h = temporal_attention(t, tattn_[6], h);
    h = us1_(t, upsample_nearest2x(h));
    h = maybe_tap(BlockId::Up1, h);

    h = spatial_attention(t, sattn_[6], res(t, rb_[8], concat(h, s1, 1), emb));
    if (!tid) h = temporal_attention(t, tattn_[7], h);
    h = us2_(t, upsample_nearest2x(h));
    h = maybe_tap(BlockId::Up2, h);

    h = res(t, rb_[9], concat(h, s0, 1), emb);
    if (!tid) h = temporal_attention(t, tattn_[8], h);
    h = maybe_tap(BlockId::Up3, h);

    Var out = out_conv_(t, silu(apply_group_norm(t, out_norm_, h)));
    if (tap && !cap.valid()) throw ConfigError("tap block did not produce features");
    return RawForward{out, cap};
}

std::pair<std::vector<Param*>, std::vector<Param*>> DenoiserUnet::split_params() {
    return {params.with_tag(ParamTag::Spatial), params.with_tag(ParamTag::Temporal)};
}

int DenoiserUnet::tap_channels(BlockId b) const {
    const int c = cfg.base;
    switch (b) {
        case BlockId::Down0: return c;
        case BlockId::Down1: return 2 * c;
        case BlockId::Down2:
        case BlockId::Down3:
        case BlockId::Mid:
        case BlockId::Up0: return 4 * c;
        case BlockId::Up1: return 2 * c;
        case BlockId::Up2:
        case BlockId::Up3: return c;
    }
    return c;
}

int DenoiserUnet::tap_scale(BlockId b) const {
    switch (b) {
        case BlockId::Down0: return 1;
        case BlockId::Down1: return 2;
        case BlockId::Down2:
        case BlockId::Down3:
        case BlockId::Mid:
        case BlockId::Up0: return 4;
        case BlockId::Up1: return 2;
        case BlockId::Up2:
        case BlockId::Up3: return 1;
    }
    return 1;
}

void DenoiserUnet::save(const std::string& dir, const nlohmann::json& extra_meta) const {
    nlohmann::json meta = extra_meta;
    meta["kind"] = "unet";
    meta["latent_channels"] = cfg.latent_channels;
    meta["base"] = cfg.base;
    meta["emb_dim"] = cfg.emb_dim;
    meta["gn_groups"] = cfg.gn_groups;
    save_params(params, dir, meta);
}

DenoiserUnet DenoiserUnet::load(const std::string& dir) {
    nlohmann::json meta = read_checkpoint_meta(dir);
    UnetConfig c;
    c.latent_channels = meta.at("latent_channels").get<int>();
    c.base = meta.at("base").get<int>();
    c.emb_dim = meta.at("emb_dim").get<int>();
    c.gn_groups = meta.at("gn_groups").get<int>();
    DenoiserUnet u(c, 0);
    load_params(u.params, dir);
    return u;
}

}  // namespace ncast
