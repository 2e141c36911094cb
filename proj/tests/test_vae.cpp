#include <doctest.h>

#include <cmath>

#include "normalcast/layout.hpp"
#include "normalcast/losses.hpp"
#include "normalcast/vae.hpp"

using namespace ncast;

namespace {

Tensor random_fhwc(int F, int H, int W, uint64_t seed) {
    Rng rng(seed);
    Tensor t({F, H, W, 3});
    for (long long i = 0; i < t.size(); ++i) t[i] = (float)rng.uniform(-1.0, 1.0);
    return t;
}

VaeConfig tiny_cfg() {
    VaeConfig c;
    c.base = 8;
    c.latent_channels = 4;
    c.gn_groups = 4;
    return c;
}

}  // namespace

TEST_CASE("latent shape contract over random shapes") {
    Vae vae(tiny_cfg(), 1);
    Rng rng(2);
    for (int it = 0; it < 6; ++it) {
        int F = (int)rng.uniform_int(1, 3);
        int H = 32 * (int)rng.uniform_int(1, 2);
        int W = 32 * (int)rng.uniform_int(1, 2);
        LatentSequence z = vae.encode(random_fhwc(F, H, W, 10 + it));
        CHECK(z.latents.shape() == Shape{F, H / 8, W / 8, 4});
        Tensor dec = vae.decode(z);
        CHECK(dec.shape() == Shape{F, H, W, 3});
        for (long long i = 0; i < dec.size(); ++i) {
            CHECK(dec[i] <= 1.0f);
            CHECK(dec[i] >= -1.0f);
        }
    }
}

TEST_CASE("encode is per-frame: stacked equals frame-by-frame") {
    Vae vae(tiny_cfg(), 3);
    Tensor clip = random_fhwc(3, 32, 32, 11);
    LatentSequence whole = vae.encode(clip);
    for (int f = 0; f < 3; ++f) {
        Tensor one({1, 32, 32, 3});
        std::copy(clip.data() + (long long)f * 32 * 32 * 3, clip.data() + (long long)(f + 1) * 32 * 32 * 3,
                  one.data());
        LatentSequence zf = vae.encode(one);
        for (long long i = 0; i < zf.latents.size(); ++i)
            CHECK(zf.latents[i] == whole.latents[(long long)f * zf.latents.size() + i]);
    }
}

TEST_CASE("frame permutation permutes latents") {
    Vae vae(tiny_cfg(), 4);
    Tensor clip = random_fhwc(3, 32, 32, 12);
    Tensor permuted({3, 32, 32, 3});
    int order[3] = {2, 0, 1};
    long long fs = 32 * 32 * 3;
    for (int f = 0; f < 3; ++f)
        std::copy(clip.data() + order[f] * fs, clip.data() + (order[f] + 1) * fs, permuted.data() + f * fs);
    LatentSequence za = vae.encode(clip);
    LatentSequence zb = vae.encode(permuted);
    long long ls = za.latents.size() / 3;
    for (int f = 0; f < 3; ++f)
        for (long long i = 0; i < ls; ++i) CHECK(zb.latents[f * ls + i] == za.latents[order[f] * ls + i]);
}

TEST_CASE("encode rejects non-divisible dims and decode rejects channel mismatch") {
    Vae vae(tiny_cfg(), 5);
    CHECK_THROWS_AS(vae.encode(random_fhwc(1, 30, 32, 1)), ShapeError);
    LatentSequence z;
    z.latents = Tensor({1, 4, 4, 7});
    CHECK_THROWS_AS(vae.decode(z), ShapeError);
}

TEST_CASE("decode of zero latents is a deterministic fixed output") {
    Vae vae(tiny_cfg(), 6);
    LatentSequence z;
    z.latents = Tensor({1, 4, 4, 4});
    Tensor a = vae.decode(z);
    Tensor b = vae.decode(z);
    for (long long i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("reconstruction metrics identities") {
    Tensor x = random_fhwc(1, 8, 8, 13);
    // make unit normals
    for (long long p = 0; p < 64; ++p) {
        float* v = x.data() + p * 3;
        float n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n < 1e-3f) {
            v[0] = 1;
            v[1] = v[2] = 0;
            n = 1;
        }
        for (int c = 0; c < 3; ++c) v[c] /= n;
    }
    Mask m({1, 8, 8}, true);
    ReconMetrics same = reconstruction_metrics(x, x, m);
    CHECK(same.mean_angular_deg == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(same.psnr_db == doctest::Approx(99.0));

    Tensor neg = x;
    for (long long i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
    ReconMetrics anti = reconstruction_metrics(x, neg, m);
    CHECK(anti.mean_angular_deg == doctest::Approx(180.0).epsilon(1e-6));

    // single pixel rotated by 10 degrees
    Tensor gt({1, 1, 1, 3});
    gt[0] = 0;
    gt[1] = 0;
    gt[2] = 1;
    Tensor pred({1, 1, 1, 3});
    pred[0] = std::sin(10.0 * M_PI / 180.0);
    pred[1] = 0;
    pred[2] = std::cos(10.0 * M_PI / 180.0);
    Mask one({1, 1, 1}, true);
    ReconMetrics ten = reconstruction_metrics(gt, pred, one);
    CHECK(ten.mean_angular_deg == doctest::Approx(10.0).epsilon(1e-3));

    Mask empty({1, 8, 8});
    CHECK_THROWS_AS(reconstruction_metrics(x, x, empty), MetricError);
}

TEST_CASE("vae reconstruction gradient matches finite differences") {
    Vae vae(tiny_cfg(), 7);
    Tensor x_f = fhwc_to_fchw(random_fhwc(1, 32, 32, 14));
    auto build = [&](Tape& t) {
        Var x = make_constant(t, x_f);
        Var z = vae.encode_graph(t, x);
        Var xhat = vae.decode_graph(t, z);
        return mean_all(square(sub(xhat, x)));
    };
    auto eval = [&]() {
        Tape t;
        return (double)t.val(build(t))[0];
    };
    vae.params.zero_grad();
    {
        Tape t;
        Var l = build(t);
        t.backward(l);
    }
    // random 16-element subset across all parameters
    auto all = vae.params.all();
    Rng rng(15);
    double diff2 = 0, ref2 = 0;
    for (int k = 0; k < 16; ++k) {
        Param* p = all[(size_t)rng.uniform_int(0, (long long)all.size() - 1)];
        long long i = rng.uniform_int(0, p->value.size() - 1);
        float orig = p->value[i];
        float h = std::max(1e-3f, std::abs(orig) * 1e-2f);
        p->value[i] = orig + h;
        double fp = eval();
        p->value[i] = orig - h;
        double fm = eval();
        p->value[i] = orig;
        double gn = (fp - fm) / (2.0 * h);
        double ga = p->grad[i];
        diff2 += (gn - ga) * (gn - ga);
        ref2 += gn * gn + ga * ga;
    }
    CHECK(std::sqrt(diff2 / std::max(1e-30, ref2)) < 1e-2);
}

TEST_CASE("short vae training reduces reconstruction loss") {
    Vae vae(tiny_cfg(), 8);
    Rng data_rng(16);
    FrameSampler sampler = [&](Rng& rng) {
        // smooth gradient images with random orientation
        TrainFrame f;
        f.chw = Tensor({3, 32, 32});
        float ax = (float)rng.uniform(-1, 1), ay = (float)rng.uniform(-1, 1);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 32; ++y)
                for (int x = 0; x < 32; ++x)
                    f.chw[((long long)c * 32 + y) * 32 + x] =
                        std::tanh(ax * (x - 16) / 16.0f + ay * (y - 16) / 16.0f + 0.3f * c);
        f.valid = Mask({32, 32}, true);
        return f;
    };
    VaeTrainConfig cfg;
    cfg.steps = 60;
    cfg.batch_frames = 2;
    cfg.schedule = {3e-4f, 10, 1e6f};
    cfg.seed = 16;
    auto log = train_vae(vae, sampler, cfg);
    REQUIRE(log.size() == 60);
    double early = 0, late = 0;
    for (int i = 0; i < 10; ++i) early += log[(size_t)i];
    for (int i = 50; i < 60; ++i) late += log[(size_t)i];
    CHECK(late < early);
}

TEST_CASE("decoder finetune freezes the encoder bit-for-bit") {
    Vae vae(tiny_cfg(), 9);
    FrameSampler sampler = [&](Rng& rng) {
        TrainFrame f;
        f.chw = Tensor({3, 32, 32});
        float a = (float)rng.uniform(-0.5, 0.5);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                Vec3 n = normalized(Vec3{a, 0.2f, -1.0f});
                f.chw[(0 * 32 + y) * 32 + x] = n.x;
                f.chw[((long long)1 * 32 + y) * 32 + x] = n.y;
                f.chw[((long long)2 * 32 + y) * 32 + x] = n.z;
            }
        f.valid = Mask({32, 32}, true);
        return f;
    };
    std::vector<uint64_t> enc_before;
    for (Param* p : vae.encoder_params()) enc_before.push_back(bytes_checksum(p->value.data(), (size_t)p->value.size()));
    VaeTrainConfig cfg;
    cfg.steps = 10;
    cfg.batch_frames = 2;
    cfg.schedule = {1e-4f, 5, 1e6f};
    finetune_decoder(vae, sampler, cfg);
    size_t i = 0;
    for (Param* p : vae.encoder_params())
        CHECK(bytes_checksum(p->value.data(), (size_t)p->value.size()) == enc_before[i++]);
    // same-seed clone shows the decoder actually moved
    Vae fresh(tiny_cfg(), 9);
    auto tuned = vae.decoder_params();
    auto orig = fresh.decoder_params();
    bool decoder_changed = false;
    for (size_t k = 0; k < tuned.size(); ++k)
        if (bytes_checksum(tuned[k]->value.data(), (size_t)tuned[k]->value.size()) !=
            bytes_checksum(orig[k]->value.data(), (size_t)orig[k]->value.size()))
            decoder_changed = true;
    CHECK(decoder_changed);
}

TEST_CASE("vae checkpoint save and load round trip") {
    Vae vae(tiny_cfg(), 10);
    std::string dir = "/tmp/ncast_vae_ckpt";
    vae.save(dir, {{"step", 0}});
    Vae back = Vae::load(dir);
    CHECK(back.params.checksum() == vae.params.checksum());
    Tensor x = random_fhwc(1, 32, 32, 17);
    LatentSequence za = vae.encode(x);
    LatentSequence zb = back.encode(x);
    for (long long i = 0; i < za.latents.size(); ++i) CHECK(za.latents[i] == zb.latents[i]);
}
