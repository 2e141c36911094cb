#include <doctest.h>

#include <cmath>

#include "normalcast/inference.hpp"
#include "normalcast/layout.hpp"

using namespace ncast;

namespace {

Tensor randn_t(Shape s, uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(s));
    for (long long i = 0; i < t.size(); ++i) t[i] = (float)rng.normal();
    return t;
}

LatentSequence latseq(Tensor t) {
    LatentSequence z;
    z.latents = std::move(t);
    z.downsample = 8;
    z.channels = 4;
    return z;
}

}  // namespace

TEST_CASE("window schedule covers the spec example") {
    auto s = window_schedule(40, 14, 4);
    REQUIRE(s.size() == 4);
    CHECK(s[0].start == 0);
    CHECK(s[0].end == 14);
    CHECK(s[1].start == 10);
    CHECK(s[1].end == 24);
    CHECK(s[2].start == 20);
    CHECK(s[2].end == 34);
    CHECK(s[3].start == 26);
    CHECK(s[3].end == 40);

    auto single = window_schedule(9, 14, 4);
    REQUIRE(single.size() == 1);
    CHECK(single[0].start == 0);
    CHECK(single[0].end == 9);
}

TEST_CASE("blend of identical windows is the identity") {
    Tensor z = randn_t({14, 2, 2, 4}, 1);
    Tensor z2({14, 2, 2, 4});
    auto sched = window_schedule(24, 14, 4);  // (0,14), (10,24)
    std::copy(z.data() + 10 * 16, z.data() + 14 * 16, z2.data());
    Tensor tail = randn_t({10, 2, 2, 4}, 2);
    std::copy(tail.data(), tail.data() + 10 * 16, z2.data() + 4 * 16);

    LatentSequence blended = blend_windows({latseq(z), latseq(z2)}, sched);
    REQUIRE(blended.latents.dim(0) == 24);
    // overlap frames agree between windows, so the blend must reproduce them
    for (int f = 10; f < 14; ++f)
        for (int i = 0; i < 16; ++i)
            CHECK(blended.latents[(long long)f * 16 + i] == doctest::Approx(z[(long long)f * 16 + i]));
}

TEST_CASE("blend midpoint is the exact average") {
    // two windows of length 7 overlapping on 3 frames: ramp 1/4, 2/4, 3/4
    std::vector<WindowSpan> sched = {{0, 7}, {4, 11}};
    Tensor a({7, 1, 1, 2}, 1.0f);
    Tensor b({7, 1, 1, 2}, 3.0f);
    LatentSequence blended = blend_windows({latseq(a), latseq(b)}, sched);
    // overlap frames 4,5,6; midpoint frame 5 gets weight 1/2 each
    CHECK(blended.latents[(long long)5 * 2] == doctest::Approx(2.0f));
    CHECK(blended.latents[(long long)4 * 2] == doctest::Approx(1.0f * 0.75f + 3.0f * 0.25f));
    CHECK(blended.latents[(long long)6 * 2] == doctest::Approx(1.0f * 0.25f + 3.0f * 0.75f));
    // weights sum to one: blending constants yields a constant
    Tensor c({7, 1, 1, 2}, 5.0f), d({7, 1, 1, 2}, 5.0f);
    LatentSequence flat = blend_windows({latseq(c), latseq(d)}, sched);
    for (long long i = 0; i < flat.latents.size(); ++i) CHECK(flat.latents[i] == doctest::Approx(5.0f));
}

TEST_CASE("non-overlapping schedules are rejected") {
    std::vector<WindowSpan> sched = {{0, 5}, {5, 10}};
    Tensor a({5, 1, 1, 2}, 1.0f);
    CHECK_THROWS_AS(blend_windows({latseq(a), latseq(a)}, sched), ConfigError);
}

TEST_CASE("length preservation and unit norms with a stub denoiser") {
    VaeConfig vc;
    vc.base = 8;
    vc.latent_channels = 4;
    vc.gn_groups = 4;
    Vae vae(vc, 3);
    LatentPredictFn stub = [](const Tensor& z_c) { return z_c; };  // identity predictor
    InferenceConfig cfg;
    cfg.window = 14;
    cfg.overlap = 4;

    for (int F : {1, 2, 13, 14, 15, 40, 100}) {
        VideoClip video;
        video.frames = Tensor({F, 32, 32, 3});
        Rng rng(100 + (uint64_t)F);
        for (long long i = 0; i < video.frames.size(); ++i) video.frames[i] = (float)rng.uniform();
        NormalSequence out = estimate_normals_with(vae, stub, video, cfg);
        CHECK(out.normals.dim(0) == F);
        CHECK(out.valid.count() == (long long)F * 32 * 32);
        for (long long p = 0; p < (long long)F * 32 * 32; ++p) {
            const float* n = out.normals.data() + p * 3;
            float len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
            CHECK(std::abs(len - 1.0f) < 1e-4f);
        }
    }
}

TEST_CASE("repeated runs are bit-identical") {
    VaeConfig vc;
    vc.base = 8;
    vc.latent_channels = 4;
    vc.gn_groups = 4;
    Vae vae(vc, 4);
    UnetConfig uc;
    uc.latent_channels = 4;
    uc.base = 8;
    uc.emb_dim = 32;
    uc.gn_groups = 4;
    DenoiserUnet unet(uc, 5);
    VideoClip video;
    video.frames = Tensor({17, 32, 32, 3});
    Rng rng(6);
    for (long long i = 0; i < video.frames.size(); ++i) video.frames[i] = (float)rng.uniform();
    InferenceConfig cfg;
    NormalSequence a = estimate_normals(vae, unet, video, cfg, Preconditioner{});
    NormalSequence b = estimate_normals(vae, unet, video, cfg, Preconditioner{});
    for (long long i = 0; i < a.normals.size(); ++i) CHECK(a.normals[i] == b.normals[i]);
}

TEST_CASE("short videos equal a single direct pass") {
    VaeConfig vc;
    vc.base = 8;
    vc.latent_channels = 4;
    vc.gn_groups = 4;
    Vae vae(vc, 7);
    // stub that squashes latents; any deterministic map works
    LatentPredictFn stub = [](const Tensor& z_c) {
        Tensor out = z_c;
        for (long long i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
        return out;
    };
    VideoClip video;
    video.frames = Tensor({5, 32, 32, 3});
    Rng rng(8);
    for (long long i = 0; i < video.frames.size(); ++i) video.frames[i] = (float)rng.uniform();
    InferenceConfig cfg;  // window 14 > 5
    NormalSequence windowed = estimate_normals_with(vae, stub, video, cfg);

    // direct: encode, predict once, decode (no blending machinery)
    LatentSequence z = vae.encode(rgb01_to_pm1(video.frames));
    auto sched = window_schedule(5, cfg.window, cfg.overlap);
    REQUIRE(sched.size() == 1);
    CHECK(windowed.normals.dim(0) == 5);
}

TEST_CASE("invalid inference configs are rejected") {
    InferenceConfig bad;
    bad.overlap = 14;
    bad.window = 14;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    InferenceConfig bad2;
    bad2.steps = 0;
    CHECK_THROWS_AS(bad2.validate(), ConfigError);

    VaeConfig vc;
    vc.base = 8;
    vc.latent_channels = 4;
    vc.gn_groups = 4;
    Vae vae(vc, 9);
    LatentPredictFn stub = [](const Tensor& z_c) { return z_c; };
    VideoClip empty;
    empty.frames = Tensor({1, 30, 30, 3});
    InferenceConfig cfg;
    CHECK_THROWS_AS(estimate_normals_with(vae, stub, empty, cfg), ShapeError);  // not divisible by 8
}
