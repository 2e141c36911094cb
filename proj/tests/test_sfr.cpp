#include <doctest.h>

#include <cmath>

#include "normalcast/layout.hpp"
#include "normalcast/sfr.hpp"

using namespace ncast;

namespace {

PatchFeatures features_from(const Tensor& t, int gh, int gw) {
    PatchFeatures f;
    f.feats = t;
    f.gh = gh;
    f.gw = gw;
    return f;
}

Tensor randn_t(Shape s, uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(s));
    for (long long i = 0; i < t.size(); ++i) t[i] = (float)rng.normal();
    return t;
}

}  // namespace

TEST_CASE("reg loss closed-form cases") {
    Tensor a = randn_t({1, 4, 8}, 1);
    PatchFeatures sem = features_from(a, 2, 2);
    PatchFeatures proj = features_from(a, 2, 2);
    CHECK(reg_loss(sem, proj) == doctest::Approx(-1.0).epsilon(1e-5));

    // orthogonal rows
    Tensor x({1, 2, 4}), y({1, 2, 4});
    x[0] = 1;
    y[1] = 1;
    x[4 + 1] = 2;
    y[4 + 2] = 5;
    CHECK(reg_loss(features_from(x, 1, 2), features_from(y, 1, 2)) == doctest::Approx(0.0).epsilon(1e-6));

    // half aligned, half anti-aligned
    Tensor p({1, 2, 3}), q({1, 2, 3});
    p[0] = 1;
    q[0] = 1;
    p[3] = 1;
    q[3] = -1;
    CHECK(reg_loss(features_from(p, 1, 2), features_from(q, 1, 2)) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("random feature cosines concentrate near zero") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Tensor a = randn_t({1, 256, 64}, 21000 + seed);
        Tensor b = randn_t({1, 256, 64}, 25000 + seed);
        float l = reg_loss(features_from(a, 16, 16), features_from(b, 16, 16));
        CHECK(std::abs(l) < 0.02f);
    }
}

TEST_CASE("reg loss is scale invariant and bounded") {
    Tensor a = randn_t({2, 8, 16}, 3);
    Tensor b = randn_t({2, 8, 16}, 4);
    float base = reg_loss(features_from(b, 2, 4), features_from(a, 2, 4));
    CHECK(base >= -1.0f);
    CHECK(base <= 1.0f);
    Tensor scaled = a;
    for (long long i = 0; i < scaled.size(); ++i) scaled[i] *= 37.5f;
    float after = reg_loss(features_from(b, 2, 4), features_from(scaled, 2, 4));
    CHECK(after == doctest::Approx(base).epsilon(1e-5));
}

TEST_CASE("all-zero features degrade to zero with a warning") {
    Tensor z({1, 4, 8});
    bool warn = false;
    float l = reg_loss(features_from(z, 2, 2), features_from(z, 2, 2), &warn);
    CHECK(l == 0.0f);
    CHECK(warn);
}

TEST_CASE("projector identity wiring") {
    const int D = 8;
    Projector proj(D, D, D, 5);
    // identity weights, zero bias, activation bypassed
    for (auto& layer : proj.mlp.layers) {
        layer.w->value.fill(0.0f);
        for (int i = 0; i < D; ++i) layer.w->value[(long long)i * D + i] = 1.0f;
        layer.b->value.fill(0.0f);
    }
    proj.mlp.identity_activation = true;
    Tensor tapped = randn_t({2, 3, 3, D}, 6);  // [F,hl,wl,Cl]
    PatchFeatures out = proj.project(tapped);
    CHECK(out.feats.shape() == Shape{2, 9, D});
    for (long long i = 0; i < out.feats.size(); ++i) CHECK(out.feats[i] == doctest::Approx(tapped[i]).epsilon(1e-6));
}

TEST_CASE("projector shape contract and gradient flow") {
    Projector proj(12, 16, 8, 7);
    Tensor tapped_fchw = randn_t({2, 12, 4, 4}, 8);
    Tensor sem = randn_t({2, 16, 8}, 9);

    proj.params.set_requires_grad(true);
    proj.params.zero_grad();
    ParamStore input_store;
    Param& tap_param = input_store.add("tap", tapped_fchw, ParamTag::Spatial);

    Tape t;
    Var tap_var = make_leaf(t, tap_param.value, &tap_param.grad);
    Var projected = proj.project_graph(t, tap_var);
    CHECK(t.val(projected).shape() == Shape{2, 16, 8});
    Var loss = reg_loss_graph(t, projected, sem);
    t.backward(loss);

    // gradient reaches both the projector and the tapped features
    double pg = 0, tg = 0;
    for (Param* p : proj.params.all())
        for (long long i = 0; i < p->grad.size(); ++i) pg += std::abs((double)p->grad[i]);
    for (long long i = 0; i < tap_param.grad.size(); ++i) tg += std::abs((double)tap_param.grad[i]);
    CHECK(pg > 1e-6);
    CHECK(tg > 1e-6);
}

TEST_CASE("reg loss gradient matches finite differences") {
    Projector proj(6, 8, 5, 11);
    Tensor tapped = randn_t({1, 6, 2, 2}, 12);
    Tensor sem = randn_t({1, 4, 5}, 13);
    auto eval = [&]() {
        Tape t;
        Var p = proj.project_graph(t, make_constant(t, tapped));
        return (double)t.val(reg_loss_graph(t, p, sem))[0];
    };
    proj.params.set_requires_grad(true);
    proj.params.zero_grad();
    {
        Tape t;
        Var p = proj.project_graph(t, make_constant(t, tapped));
        Var l = reg_loss_graph(t, p, sem);
        t.backward(l);
    }
    Rng rng(14);
    auto all = proj.params.all();
    double diff2 = 0, ref2 = 0;
    for (int k = 0; k < 10; ++k) {
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
        diff2 += (gn - p->grad[i]) * (gn - p->grad[i]);
        ref2 += gn * gn + (double)p->grad[i] * p->grad[i];
    }
    CHECK(std::sqrt(diff2 / std::max(1e-30, ref2)) < 1e-2);
}

TEST_CASE("semantic encoder issues patch grids matching the tap size") {
    SemanticEncoderConfig cfg;
    cfg.dim = 16;
    cfg.base = 8;
    cfg.gn_groups = 4;
    SemanticEncoder enc(cfg, 20);
    Rng rng(21);
    Tensor frames({2, 40, 56, 3});
    for (long long i = 0; i < frames.size(); ++i) frames[i] = (float)rng.uniform();
    PatchFeatures f = encode_semantic(enc, frames, 4, 6);
    CHECK(f.feats.shape() == Shape{2, 24, 16});
    CHECK(f.gh == 4);
    CHECK(f.gw == 6);

    // identical frames give identical features
    Tensor twice({2, 40, 56, 3});
    std::copy(frames.data(), frames.data() + frames.size() / 2, twice.data());
    std::copy(frames.data(), frames.data() + frames.size() / 2, twice.data() + frames.size() / 2);
    PatchFeatures g = encode_semantic(enc, twice, 4, 6);
    long long half = g.feats.size() / 2;
    for (long long i = 0; i < half; ++i) CHECK(g.feats[i] == g.feats[half + i]);
}

TEST_CASE("semantic pretraining reduces masked reconstruction loss and can be frozen") {
    SemanticEncoderConfig cfg;
    cfg.dim = 16;
    cfg.base = 8;
    cfg.gn_groups = 4;
    SemanticEncoder enc(cfg, 22);
    auto sample = [&](Rng& rng) {
        Tensor f({3, 32, 32});
        float ax = (float)rng.uniform(-1, 1);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 32; ++y)
                for (int x = 0; x < 32; ++x)
                    f[((long long)c * 32 + y) * 32 + x] = std::tanh(ax * (x - 16) / 8.0f + 0.2f * c + 0.1f * y / 32.0f);
        return f;
    };
    SemanticPretrainConfig pc;
    pc.steps = 40;
    pc.batch_frames = 2;
    pc.seed = 23;
    auto log = pretrain_semantic_encoder(enc, sample, pc);
    REQUIRE(log.size() >= 30);
    double early = 0, late = 0;
    for (int i = 0; i < 8; ++i) early += log[(size_t)i];
    for (size_t i = log.size() - 8; i < log.size(); ++i) late += log[i];
    CHECK(late < early);

    enc.save("/tmp/ncast_sem_ckpt");
    SemanticEncoder back = SemanticEncoder::load("/tmp/ncast_sem_ckpt");
    CHECK(back.params.checksum() == enc.params.checksum());
}

TEST_CASE("projector rejects hidden narrower than output") {
    CHECK_THROWS_AS(Projector(8, 4, 16, 1), ConfigError);
}
