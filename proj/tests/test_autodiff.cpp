#include <doctest.h>

#include <cmath>
#include <functional>

#include "normalcast/autodiff.hpp"
#include "normalcast/nn.hpp"
#include "normalcast/rng.hpp"

using namespace ncast;

namespace {

Tensor randn(Shape s, Rng& rng, float std = 1.0f) {
    Tensor t(std::move(s));
    for (long long i = 0; i < t.size(); ++i) t[i] = (float)(rng.normal() * std);
    return t;
}

// Central finite differences on a sampled index subset vs reverse-mode
// grads; compares as vector-relative error over the subset.
double fd_relative_error(Param& p, const std::function<float()>& eval_loss,
                         const std::function<void()>& run_backward, int samples, Rng& rng) {
    p.grad.fill(0.0f);
    run_backward();
    std::vector<long long> idx;
    for (int i = 0; i < samples; ++i) idx.push_back(rng.uniform_int(0, p.value.size() - 1));
    double diff2 = 0, ref2 = 0;
    for (long long i : idx) {
        float orig = p.value[i];
        float h = std::max(1e-3f, std::abs(orig) * 1e-2f);
        p.value[i] = orig + h;
        double fp = eval_loss();
        p.value[i] = orig - h;
        double fm = eval_loss();
        p.value[i] = orig;
        double g_num = (fp - fm) / (2.0 * h);
        double g_an = p.grad[i];
        diff2 += (g_num - g_an) * (g_num - g_an);
        ref2 += g_num * g_num + g_an * g_an;
    }
    return std::sqrt(diff2 / std::max(1e-30, ref2));
}

double check_op(const std::function<Var(Tape&, Param&)>& build, Shape pshape, int samples, uint64_t seed,
                float init_std = 1.0f) {
    Rng rng(seed);
    ParamStore ps;
    Param& p = ps.add("p", randn(pshape, rng, init_std), ParamTag::Spatial);
    auto eval = [&]() {
        Tape t;
        return t.val(build(t, p))[0];
    };
    auto back = [&]() {
        Tape t;
        Var l = build(t, p);
        t.backward(l);
    };
    Rng sampler(seed ^ 0xabcdULL);
    return fd_relative_error(p, eval, back, samples, sampler);
}

}  // namespace

TEST_CASE("backward of elementwise chain") {
    // loss = mean((tanh(silu(p)) - 0.3)^2)
    auto build = [](Tape& t, Param& p) {
        Var x = make_leaf(t, p.value, &p.grad);
        return mean_all(square(add_scalar(tanh_act(silu(x)), -0.3f)));
    };
    CHECK(check_op(build, {4, 5}, 12, 1) < 1e-2);
}

TEST_CASE("add sub mul scale grads") {
    Rng rng(2);
    Tensor c = randn({3, 4}, rng);
    auto build = [&](Tape& t, Param& p) {
        Var x = make_leaf(t, p.value, &p.grad);
        Var y = mul(x, add_const(scale(x, 0.5f), c));
        return mean_all(sub(y, mul_const(x, c)));
    };
    CHECK(check_op(build, {3, 4}, 10, 2) < 1e-2);
}

TEST_CASE("exp square softmax grads") {
    auto build = [](Tape& t, Param& p) {
        Var x = make_leaf(t, p.value, &p.grad);
        return mean_all(square(softmax_lastdim(exp_act(scale(x, 0.3f)))));
    };
    CHECK(check_op(build, {5, 7}, 12, 3) < 1e-2);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(4);
    Tape t;
    Var x = make_constant(t, randn({6, 9}, rng, 2.0f));
    Var s = softmax_lastdim(x);
    const Tensor& v = t.val(s);
    for (int r = 0; r < 6; ++r) {
        double sum = 0;
        for (int c = 0; c < 9; ++c) sum += v[r * 9 + c];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("matmul and linear grads") {
    Rng rng(5);
    Tensor other = randn({6, 3}, rng);
    auto build_a = [&](Tape& t, Param& p) {
        Var a = make_leaf(t, p.value, &p.grad);
        Var b = make_constant(t, other);
        return mean_all(square(matmul(a, b)));
    };
    CHECK(check_op(build_a, {4, 6}, 10, 5) < 1e-2);

    Tensor x = randn({2, 5, 6}, rng);
    auto build_w = [&](Tape& t, Param& p) {
        Var w = make_leaf(t, p.value, &p.grad);
        return mean_all(square(linear(make_constant(t, x), w, Var{})));
    };
    CHECK(check_op(build_w, {6, 3}, 10, 6) < 1e-2);
}

TEST_CASE("bmm grads") {
    Rng rng(7);
    Tensor b = randn({3, 4, 2}, rng);
    auto build = [&](Tape& t, Param& p) {
        Var a = make_leaf(t, p.value, &p.grad);
        return mean_all(square(bmm(a, make_constant(t, b))));
    };
    CHECK(check_op(build, {3, 5, 4}, 10, 7) < 1e-2);
}

TEST_CASE("conv2d forward known value") {
    // 1x1x3x3 input, 3x3 kernel of ones, pad 1: center output = sum of input
    Tape t;
    Tensor x({1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) x[i] = (float)(i + 1);
    Tensor w({1, 1, 3, 3}, 1.0f);
    Var out = conv2d(make_constant(t, x), make_constant(t, w), Var{}, 1, 1);
    const Tensor& o = t.val(out);
    REQUIRE(o.shape() == Shape{1, 1, 3, 3});
    CHECK(o[4] == doctest::Approx(45.0f));
    CHECK(o[0] == doctest::Approx(1 + 2 + 4 + 5));
}

TEST_CASE("conv2d grads w x b stride variants") {
    Rng rng(8);
    for (int stride : {1, 2}) {
        Tensor x = randn({2, 3, 8, 8}, rng);
        auto build_w = [&](Tape& t, Param& p) {
            Var w = make_leaf(t, p.value, &p.grad);
            Var b = make_constant(t, Tensor({4}, 0.1f));
            return mean_all(square(conv2d(make_constant(t, x), w, b, stride, 1)));
        };
        CHECK(check_op(build_w, {4, 3, 3, 3}, 12, 80 + stride, 0.5f) < 1e-2);

        Tensor w = randn({4, 3, 3, 3}, rng, 0.5f);
        auto build_x = [&](Tape& t, Param& p) {
            Var xv = make_leaf(t, p.value, &p.grad);
            return mean_all(square(conv2d(xv, make_constant(t, w), Var{}, stride, 1)));
        };
        CHECK(check_op(build_x, {2, 3, 8, 8}, 12, 90 + stride) < 1e-2);

        auto build_b = [&](Tape& t, Param& p) {
            Var b = make_leaf(t, p.value, &p.grad);
            return mean_all(square(conv2d(make_constant(t, x), make_constant(t, w), b, stride, 1)));
        };
        CHECK(check_op(build_b, {4}, 4, 70 + stride) < 1e-2);
    }
}

TEST_CASE("upsample grads and values") {
    Tape t;
    Tensor x({1, 1, 2, 2});
    x[0] = 1;
    x[1] = 2;
    x[2] = 3;
    x[3] = 4;
    Var u = upsample_nearest2x(make_constant(t, x));
    const Tensor& o = t.val(u);
    REQUIRE(o.shape() == Shape{1, 1, 4, 4});
    CHECK(o[0] == 1);
    CHECK(o[2] == 2);
    CHECK(o[5] == 1);
    CHECK(o[8] == 3);
    CHECK(o[15] == 4);

    auto build = [](Tape& tp, Param& p) {
        Var xv = make_leaf(tp, p.value, &p.grad);
        return mean_all(square(upsample_nearest2x(xv)));
    };
    CHECK(check_op(build, {2, 3, 4, 4}, 10, 11) < 1e-2);
}

TEST_CASE("group norm grads") {
    Rng rng(12);
    Tensor x = randn({2, 8, 4, 4}, rng);
    // weight the normalized output so the loss is not scale-invariant
    Tensor wts = randn({2, 8, 4, 4}, rng);
    auto build_x = [&](Tape& t, Param& p) {
        Var xv = make_leaf(t, p.value, &p.grad);
        Var g = make_constant(t, Tensor({8}, 1.2f));
        Var b = make_constant(t, Tensor({8}, 0.1f));
        return mean_all(square(mul_const(group_norm(xv, g, b, 4), wts)));
    };
    CHECK(check_op(build_x, {2, 8, 4, 4}, 14, 12) < 1e-2);

    auto build_g = [&](Tape& t, Param& p) {
        Var g = make_leaf(t, p.value, &p.grad);
        Var b = make_constant(t, Tensor({8}, 0.0f));
        return mean_all(square(add_scalar(group_norm(make_constant(t, x), g, b, 4), 0.3f)));
    };
    CHECK(check_op(build_g, {8}, 8, 13) < 1e-2);
}

TEST_CASE("layer norm grads") {
    Rng rng(14);
    Tensor x = randn({3, 5, 8}, rng);
    auto build = [&](Tape& t, Param& p) {
        Var g = make_leaf(t, p.value, &p.grad);
        Var b = make_constant(t, Tensor({8}, 0.05f));
        return mean_all(square(layer_norm(make_constant(t, x), g, b)));
    };
    CHECK(check_op(build, {8}, 8, 14) < 1e-2);

    Tensor wts = randn({3, 5, 8}, rng);
    auto build_x = [&](Tape& t, Param& p) {
        Var xv = make_leaf(t, p.value, &p.grad);
        Var g = make_constant(t, Tensor({8}, 0.9f));
        Var b = make_constant(t, Tensor({8}, -0.1f));
        return mean_all(square(mul_const(layer_norm(xv, g, b), wts)));
    };
    CHECK(check_op(build_x, {3, 5, 8}, 14, 15) < 1e-2);
}

TEST_CASE("permute reshape concat slice grads") {
    Rng rng(16);
    Tensor other = randn({2, 3, 4}, rng);
    auto build = [&](Tape& t, Param& p) {
        Var x = make_leaf(t, p.value, &p.grad);           // [2,3,4]
        Var pm = permute(x, {1, 0, 2});                   // [3,2,4]
        Var rs = reshape(pm, {2, 3, 4});
        Var cc = concat(rs, make_constant(t, other), 1);  // [2,6,4]
        Var sl = slice(cc, 1, 1, 4);                      // [2,3,4]
        return mean_all(square(sl));
    };
    CHECK(check_op(build, {2, 3, 4}, 12, 16) < 1e-2);
}

TEST_CASE("permute round trip value") {
    Rng rng(17);
    Tensor x = randn({2, 3, 4, 5}, rng);
    Tape t;
    Var a = make_constant(t, x);
    Var b = permute(permute(a, {3, 1, 0, 2}), {2, 1, 3, 0});
    const Tensor& back = t.val(b);
    REQUIRE(back.shape() == x.shape());
    for (long long i = 0; i < x.size(); ++i) CHECK(back[i] == x[i]);
}

TEST_CASE("normalize acos clamp masked_mean chain") {
    Rng rng(18);
    Mask m({6});
    for (int i = 0; i < 6; ++i) m.set(i, i % 2 == 0);
    Tensor target = randn({6, 3}, rng);
    auto build = [&](Tape& t, Param& p) {
        Var x = make_leaf(t, p.value, &p.grad);
        Var n = normalize_lastdim(x);
        Var dots = reduce_lastdim_sum(mul_const(n, target));
        Var ang = acos_op(clamp_op(dots, -0.999999f, 0.999999f));
        return masked_mean(ang, m);
    };
    CHECK(check_op(build, {6, 3}, 12, 18) < 1e-2);
}

TEST_CASE("normalize_lastdim produces unit rows") {
    Rng rng(19);
    Tape t;
    Var x = make_constant(t, randn({10, 3}, rng, 2.0f));
    Var n = normalize_lastdim(x);
    const Tensor& v = t.val(n);
    for (int r = 0; r < 10; ++r) {
        double s = 0;
        for (int c = 0; c < 3; ++c) s += (double)v[r * 3 + c] * v[r * 3 + c];
        CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("cosine_rows values and grads") {
    Tape t;
    Tensor a({2, 4}), b({2, 4});
    for (int i = 0; i < 4; ++i) {
        a[i] = (float)(i + 1);
        b[i] = (float)(i + 1);  // identical row
        a[4 + i] = (i == 0) ? 1.0f : 0.0f;
        b[4 + i] = (i == 1) ? 1.0f : 0.0f;  // orthogonal row
    }
    Var c = cosine_rows(make_constant(t, a), b);
    CHECK(t.val(c)[0] == doctest::Approx(1.0f).epsilon(1e-5));
    CHECK(t.val(c)[1] == doctest::Approx(0.0f).epsilon(1e-6));

    Rng rng(99);
    Tensor sem = randn({8, 6}, rng);
    auto build = [&](Tape& tp, Param& p) {
        Var x = make_leaf(tp, p.value, &p.grad);
        return scale(mean_all(cosine_rows(x, sem)), -1.0f);
    };
    CHECK(check_op(build, {8, 6}, 12, 20) < 1e-2);
}

TEST_CASE("attention layer grads") {
    Rng rng(21);
    ParamStore ps;
    AttentionLayer attn = make_attention(ps, "a", 16, 4, ParamTag::Spatial, rng);
    // zero-init output proj would zero grads through o; nudge it
    for (long long i = 0; i < attn.o.w->value.size(); ++i) attn.o.w->value[i] = (float)(rng.normal() * 0.2);
    Tensor x = randn({2, 5, 16}, rng);
    auto eval = [&]() {
        Tape t;
        return t.val(mean_all(square(attn(t, make_constant(t, x)))))[0];
    };
    auto back = [&]() {
        Tape t;
        Var l = mean_all(square(attn(t, make_constant(t, x))));
        t.backward(l);
    };
    Rng sampler(21);
    for (Param* p : {attn.q.w, attn.k.w, attn.v.w, attn.o.w, attn.norm.gamma}) {
        ps.zero_grad();
        double rel = fd_relative_error(*p, eval, back, 8, sampler);
        INFO(p->name);
        CHECK(rel < 1.5e-2);
    }
}

TEST_CASE("constant subgraphs carry no gradient work") {
    Rng rng(22);
    Tape t;
    Var c = make_constant(t, randn({4, 4}, rng));
    Var y = silu(mul(c, c));
    CHECK(!t.node(y.id).needs_grad);
}

TEST_CASE("masked_mean empty mask throws") {
    Tape t;
    Var x = make_constant(t, Tensor({4}, 1.0f));
    Mask m({4});
    CHECK_THROWS_AS(masked_mean(x, m), MetricError);
}

TEST_CASE("adamw updates and moment bookkeeping") {
    ParamStore ps;
    Param& p = ps.add("w", Tensor({4}, 1.0f), ParamTag::Spatial);
    p.grad.fill(0.5f);
    AdamW opt;
    opt.weight_decay = 0.0f;
    opt.step(ps.all(), 0.1f);
    for (int i = 0; i < 4; ++i) CHECK(p.value[i] == doctest::Approx(1.0f - 0.1f).epsilon(1e-3));
}

TEST_CASE("grad clip scales to max norm") {
    ParamStore ps;
    Param& p = ps.add("w", Tensor({4}, 0.0f), ParamTag::Spatial);
    p.grad.fill(3.0f);  // norm 6
    auto all = ps.all();
    float norm = clip_global_norm(all, 1.5f);
    CHECK(norm == doctest::Approx(6.0f));
    double after = 0;
    for (int i = 0; i < 4; ++i) after += p.grad[i] * p.grad[i];
    CHECK(std::sqrt(after) == doctest::Approx(1.5f).epsilon(1e-5));
}

TEST_CASE("sinusoidal embedding bounds") {
    Tensor e = sinusoidal_embedding(1.7f, 64);
    CHECK(e.size() == 64);
    for (long long i = 0; i < e.size(); ++i) {
        CHECK(e[i] <= 1.0f);
        CHECK(e[i] >= -1.0f);
    }
    CHECK_THROWS_AS(sinusoidal_embedding(1.0f, 63), ShapeError);
}
