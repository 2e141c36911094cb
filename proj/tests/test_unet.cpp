#include <doctest.h>

#include <cmath>

#include "normalcast/diffusion.hpp"
#include "normalcast/layout.hpp"
#include "normalcast/unet.hpp"

using namespace ncast;

namespace {

UnetConfig tiny_cfg() {
    UnetConfig c;
    c.latent_channels = 4;
    c.base = 8;
    c.emb_dim = 32;
    c.gn_groups = 4;
    return c;
}

Tensor randn_t(Shape s, uint64_t seed, float std = 1.0f) {
    Rng rng(seed);
    Tensor t(std::move(s));
    for (long long i = 0; i < t.size(); ++i) t[i] = (float)(rng.normal() * std);
    return t;
}

}  // namespace

TEST_CASE("first conv consumes 2C channels and output keeps z_t shape") {
    DenoiserUnet unet(tiny_cfg(), 1);
    CHECK(unet.params.at("stem.w").value.shape() == Shape{8, 8, 3, 3});

    Preconditioner pre;
    for (int F : {1, 2, 5, 8, 14}) {
        LatentSequence zt, zc;
        zt.latents = randn_t({F, 8, 8, 4}, 100 + F);
        zc.latents = randn_t({F, 8, 8, 4}, 200 + F);
        DenoiseOutput out = denoiser_forward(unet, zt, 2.0f, zc, pre);
        CHECK(out.denoised.latents.shape() == zt.latents.shape());
        for (long long i = 0; i < out.denoised.latents.size(); ++i)
            CHECK(std::isfinite(out.denoised.latents[i]));
    }
}

TEST_CASE("shape mismatch between z_t and z_c is rejected") {
    DenoiserUnet unet(tiny_cfg(), 2);
    Preconditioner pre;
    LatentSequence zt, zc;
    zt.latents = randn_t({2, 8, 8, 4}, 1);
    zc.latents = randn_t({3, 8, 8, 4}, 2);
    CHECK_THROWS_AS(denoiser_forward(unet, zt, 1.0f, zc, pre), ShapeError);
}

TEST_CASE("every tap id yields features with the declared geometry") {
    DenoiserUnet unet(tiny_cfg(), 3);
    Preconditioner pre;
    LatentSequence zt, zc;
    zt.latents = randn_t({2, 8, 8, 4}, 3);
    zc.latents = randn_t({2, 8, 8, 4}, 4);
    for (BlockId b : {BlockId::Down0, BlockId::Down1, BlockId::Down2, BlockId::Down3, BlockId::Mid, BlockId::Up0,
                      BlockId::Up1, BlockId::Up2, BlockId::Up3}) {
        DenoiseOutput out = denoiser_forward(unet, zt, 1.5f, zc, pre, b);
        REQUIRE(!out.tapped.empty());
        int scale = unet.tap_scale(b);
        CHECK(out.tapped.shape() == Shape{2, 8 / scale, 8 / scale, unet.tap_channels(b)});
        for (long long i = 0; i < out.tapped.size(); ++i) CHECK(std::isfinite(out.tapped[i]));
    }
    CHECK_THROWS_AS(parse_block("Sideways3"), ConfigError);
}

TEST_CASE("temporal-identity mode is frame-permutation equivariant") {
    UnetConfig cfg = tiny_cfg();
    cfg.temporal_identity = true;
    DenoiserUnet unet(cfg, 5);
    Preconditioner pre;
    const int F = 4;
    Tensor zt = randn_t({F, 4, 8, 8}, 6);
    Tensor zc = randn_t({F, 4, 8, 8}, 7);
    int order[F] = {2, 0, 3, 1};
    long long fs = 4 * 8 * 8;
    Tensor zt_p({F, 4, 8, 8}), zc_p({F, 4, 8, 8});
    for (int f = 0; f < F; ++f) {
        std::copy(zt.data() + order[f] * fs, zt.data() + (order[f] + 1) * fs, zt_p.data() + f * fs);
        std::copy(zc.data() + order[f] * fs, zc.data() + (order[f] + 1) * fs, zc_p.data() + f * fs);
    }
    Tape t1, t2;
    Var o1 = denoiser_forward_graph(unet, t1, make_constant(t1, zt), 2.0f, make_constant(t1, zc), pre).denoised;
    Var o2 = denoiser_forward_graph(unet, t2, make_constant(t2, zt_p), 2.0f, make_constant(t2, zc_p), pre).denoised;
    const Tensor& a = t1.val(o1);
    const Tensor& b = t2.val(o2);
    for (int f = 0; f < F; ++f)
        for (long long i = 0; i < fs; ++i) CHECK(b[f * fs + i] == a[order[f] * fs + i]);
}

TEST_CASE("with temporal attention frames do interact") {
    DenoiserUnet unet(tiny_cfg(), 8);
    // nudge the zero-initialized projections so a fresh net is not inert
    Rng rng(9);
    for (Param* p : unet.params.all())
        if (p->name.find(".o.w") != std::string::npos || p->name == "out.conv.w")
            for (long long i = 0; i < p->value.size(); ++i) p->value[i] = (float)(rng.normal() * 0.1);
    Preconditioner pre;
    Tensor zc = randn_t({2, 4, 8, 8}, 10);
    Tensor zt_a = randn_t({2, 4, 8, 8}, 11);
    Tensor zt_b = zt_a;
    // change only frame 1's noisy latent; frame 0 output should move too
    for (long long i = 0; i < 4 * 8 * 8; ++i) zt_b[4 * 8 * 8 + i] += 0.5f;
    Tape t1, t2;
    const Tensor& a =
        t1.val(denoiser_forward_graph(unet, t1, make_constant(t1, zt_a), 2.0f, make_constant(t1, zc), pre).denoised);
    const Tensor& b =
        t2.val(denoiser_forward_graph(unet, t2, make_constant(t2, zt_b), 2.0f, make_constant(t2, zc), pre).denoised);
    double frame0_delta = 0;
    for (long long i = 0; i < 4 * 8 * 8; ++i) frame0_delta += std::abs((double)a[i] - b[i]);
    CHECK(frame0_delta > 1e-6);
}

TEST_CASE("split_params partitions all parameters") {
    DenoiserUnet unet(tiny_cfg(), 12);
    auto [spatial, temporal] = unet.split_params();
    CHECK(spatial.size() + temporal.size() == unet.params.all().size());
    CHECK(!temporal.empty());
    for (Param* p : temporal) CHECK(p->name.find(".tattn.") != std::string::npos);
    for (Param* p : spatial) CHECK(p->name.find(".tattn.") == std::string::npos);
}

TEST_CASE("optimizer step on spatial subset leaves temporal params untouched") {
    DenoiserUnet unet(tiny_cfg(), 13);
    Preconditioner pre;
    Tensor z0 = randn_t({2, 4, 8, 8}, 20);
    Tensor zc = randn_t({2, 4, 8, 8}, 21);
    Tensor eps = randn_t({2, 4, 8, 8}, 22);

    uint64_t temporal_before = unet.params.checksum(ParamTag::Temporal);
    unet.params.set_requires_grad(true);
    unet.params.set_requires_grad(ParamTag::Temporal, false);
    unet.params.zero_grad();
    Tape t;
    Var loss = dsm_loss_graph(unet, t, z0, zc, 1.0f, eps, pre);
    t.backward(loss);
    auto [spatial, temporal] = unet.split_params();
    AdamW opt;
    opt.step(spatial, 1e-3f);
    CHECK(unet.params.checksum(ParamTag::Temporal) == temporal_before);
    unet.params.set_requires_grad(true);
}

TEST_CASE("forward is deterministic") {
    DenoiserUnet unet(tiny_cfg(), 14);
    Preconditioner pre;
    LatentSequence zt, zc;
    zt.latents = randn_t({3, 8, 8, 4}, 30);
    zc.latents = randn_t({3, 8, 8, 4}, 31);
    DenoiseOutput a = denoiser_forward(unet, zt, 5.0f, zc, pre);
    DenoiseOutput b = denoiser_forward(unet, zt, 5.0f, zc, pre);
    for (long long i = 0; i < a.denoised.latents.size(); ++i)
        CHECK(a.denoised.latents[i] == b.denoised.latents[i]);
}

TEST_CASE("unet checkpoint round trip preserves forward output") {
    DenoiserUnet unet(tiny_cfg(), 15);
    unet.save("/tmp/ncast_unet_ckpt", {{"step", 1}});
    DenoiserUnet back = DenoiserUnet::load("/tmp/ncast_unet_ckpt");
    CHECK(back.params.checksum() == unet.params.checksum());
    Preconditioner pre;
    LatentSequence zt, zc;
    zt.latents = randn_t({1, 8, 8, 4}, 40);
    zc.latents = randn_t({1, 8, 8, 4}, 41);
    DenoiseOutput a = denoiser_forward(unet, zt, 3.0f, zc, pre);
    DenoiseOutput b = denoiser_forward(back, zt, 3.0f, zc, pre);
    for (long long i = 0; i < a.denoised.latents.size(); ++i)
        CHECK(a.denoised.latents[i] == b.denoised.latents[i]);
}
