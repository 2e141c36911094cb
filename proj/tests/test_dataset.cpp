#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "normalcast/dataset.hpp"

using namespace ncast;
namespace fs = std::filesystem;

TEST_CASE("segment_clips paper-count examples") {
    auto r = segment_clips(120, 30, 60);
    REQUIRE(!r.empty());
    int prev_end = 0;
    for (auto [a, b] : r) {
        CHECK(a == prev_end);
        CHECK(b - a >= 30);
        CHECK(b - a <= 60);
        prev_end = b;
    }
    CHECK(segment_clips(14, 30, 60).empty());
    auto one = segment_clips(60, 60, 60);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == std::pair<int, int>{0, 60});
}

TEST_CASE("segment_clips property over random triples") {
    Rng rng(11);
    for (int it = 0; it < 300; ++it) {
        int len = (int)rng.uniform_int(1, 400);
        int lo = (int)rng.uniform_int(1, 80);
        int hi = lo + (int)rng.uniform_int(0, 80);
        auto r = segment_clips(len, lo, hi);
        int prev_end = 0;
        for (auto [a, b] : r) {
            CHECK(a == prev_end);  // contiguous prefix, ordered, disjoint
            CHECK(b - a >= lo);
            CHECK(b - a <= hi);
            prev_end = b;
        }
        CHECK(len - prev_end < lo);  // only a sub-min remainder may be left
        if (lo > len) CHECK(r.empty());
    }
    CHECK_THROWS_AS(segment_clips(10, 5, 4), ConfigError);
    CHECK_THROWS_AS(segment_clips(10, 0, 4), ConfigError);
}

namespace {

std::pair<VideoClip, NormalSequence> tiny_clip(int F, int H, int W, uint64_t seed) {
    Rng rng(seed);
    VideoClip v;
    v.frames = Tensor({F, H, W, 3});
    for (long long i = 0; i < v.frames.size(); ++i) v.frames[i] = (float)rng.uniform();
    NormalSequence n;
    n.normals = Tensor({F, H, W, 3});
    n.valid = Mask({F, H, W}, true);
    for (long long p = 0; p < (long long)F * H * W; ++p) {
        float a = (float)rng.uniform(-1.0, 1.0), b = (float)rng.uniform(-1.0, 1.0);
        float c = std::sqrt(std::max(0.0f, 1.0f - a * a - b * b));
        n.normals[p * 3] = a;
        n.normals[p * 3 + 1] = b * std::sqrt(1.0f - a * a) / std::max(1e-6f, std::sqrt(1.0f - a * a));
        // build an exactly unit vector
        float nx = a, ny = b * 0.5f, nz = c;
        float len = std::sqrt(nx * nx + ny * ny + nz * nz);
        n.normals[p * 3] = nx / len;
        n.normals[p * 3 + 1] = ny / len;
        n.normals[p * 3 + 2] = nz / len;
    }
    return {v, n};
}

}  // namespace

TEST_CASE("forced hflip negates normal x and mirrors pixels") {
    VideoClip v;
    v.frames = Tensor({1, 1, 4, 3});
    for (long long i = 0; i < v.frames.size(); ++i) v.frames[i] = (float)i;
    NormalSequence n;
    n.normals = Tensor({1, 1, 4, 3});
    n.valid = Mask({1, 1, 4}, true);
    n.normals[1 * 3 + 0] = 0.6f;
    n.normals[1 * 3 + 1] = 0.0f;
    n.normals[1 * 3 + 2] = 0.8f;
    AugmentationConfig cfg;
    cfg.hflip = 1.0f;
    cfg.crop = cfg.color = cfg.grayscale = 0.0f;
    AugmentedClip out = augment(v, n, 3, cfg);
    CHECK(out.decision.hflip);
    // pixel x=1 lands at x=2 with nx negated
    CHECK(out.normals.normals[2 * 3 + 0] == doctest::Approx(-0.6f));
    CHECK(out.normals.normals[2 * 3 + 1] == doctest::Approx(0.0f));
    CHECK(out.normals.normals[2 * 3 + 2] == doctest::Approx(0.8f));
    CHECK(out.video.frames[0 * 3] == 9.0f);  // rgb mirrored too
}

TEST_CASE("augment with all probabilities zero is the identity") {
    auto [v, n] = tiny_clip(2, 8, 8, 4);
    AugmentationConfig cfg;
    cfg.hflip = cfg.crop = cfg.color = cfg.grayscale = 0.0f;
    AugmentedClip out = augment(v, n, 999, cfg);
    for (long long i = 0; i < v.frames.size(); ++i) CHECK(out.video.frames[i] == v.frames[i]);
    for (long long i = 0; i < n.normals.size(); ++i) CHECK(out.normals.normals[i] == n.normals[i]);
}

TEST_CASE("augment statistics and exclusivity over 10k draws") {
    auto [v, n] = tiny_clip(1, 8, 8, 5);
    AugmentationConfig cfg;  // defaults 0.5/0.3/0.1/0.2
    int flips = 0;
    for (int i = 0; i < 10000; ++i) {
        AugmentedClip out = augment(v, n, (uint64_t)i, cfg);
        flips += out.decision.hflip ? 1 : 0;
        int modes = (out.decision.crop ? 1 : 0) + (out.decision.color ? 1 : 0) + (out.decision.grayscale ? 1 : 0);
        CHECK(modes <= 1);
    }
    CHECK(std::abs(flips / 10000.0 - 0.5) < 0.02);
}

TEST_CASE("augment is deterministic and keeps normals unit under flip") {
    auto [v, n] = tiny_clip(3, 16, 16, 6);
    AugmentationConfig cfg;
    AugmentedClip a = augment(v, n, 1234, cfg);
    AugmentedClip b = augment(v, n, 1234, cfg);
    for (long long i = 0; i < a.video.frames.size(); ++i) CHECK(a.video.frames[i] == b.video.frames[i]);
    for (long long i = 0; i < a.normals.normals.size(); ++i) CHECK(a.normals.normals[i] == b.normals.normals[i]);

    AugmentationConfig fl;
    fl.hflip = 1.0f;
    fl.crop = fl.color = fl.grayscale = 0.0f;
    AugmentedClip flipped = augment(v, n, 7, fl);
    CHECK(flipped.normals.valid.count() == n.valid.count());
    for (long long p = 0; p < flipped.normals.valid.size(); ++p) {
        if (!flipped.normals.valid.get(p)) continue;
        const float* x = flipped.normals.normals.data() + p * 3;
        CHECK(std::abs(std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) - 1.0f) < 1e-4f);
    }
}

TEST_CASE("color and grayscale leave normals bit-identical") {
    auto [v, n] = tiny_clip(2, 8, 8, 8);
    AugmentationConfig cfg;
    cfg.hflip = 0.0f;
    cfg.crop = 0.0f;
    cfg.color = 1.0f;
    cfg.grayscale = 0.0f;
    AugmentedClip out = augment(v, n, 55, cfg);
    CHECK(out.decision.color);
    for (long long i = 0; i < n.normals.size(); ++i) CHECK(out.normals.normals[i] == n.normals[i]);

    cfg.color = 0.0f;
    cfg.grayscale = 1.0f;
    AugmentedClip g = augment(v, n, 56, cfg);
    CHECK(g.decision.grayscale);
    for (long long i = 0; i < n.normals.size(); ++i) CHECK(g.normals.normals[i] == n.normals[i]);
    // grayscale collapses channels
    for (long long p = 0; p < 2 * 8 * 8; ++p) {
        CHECK(g.video.frames[p * 3] == g.video.frames[p * 3 + 1]);
        CHECK(g.video.frames[p * 3] == g.video.frames[p * 3 + 2]);
    }
}

TEST_CASE("augment rejects bad probabilities") {
    auto [v, n] = tiny_clip(1, 8, 8, 9);
    AugmentationConfig cfg;
    cfg.hflip = 1.5f;
    CHECK_THROWS_AS(augment(v, n, 1, cfg), ConfigError);
}

TEST_CASE("manifest weights and sampling proportions") {
    ClipEntry a{"a", 30, "s0", 1};
    ClipEntry b{"b", 60, "s1", 1};
    DatasetManifest m = build_manifest({a, b});
    CHECK(m.weights[0] == doctest::Approx(1.0 / 3).epsilon(1e-9));
    CHECK(m.weights[1] == doctest::Approx(2.0 / 3).epsilon(1e-9));
    double total = m.weights[0] + m.weights[1];
    CHECK(std::abs(total - 1.0) < 1e-9);

    Rng rng(17);
    int count_a = 0;
    for (int i = 0; i < 30000; ++i)
        if (sample_clip(m, rng) == 0) ++count_a;
    CHECK(std::abs(count_a / 30000.0 - 1.0 / 3) < 0.02);

    DatasetManifest single = build_manifest({a});
    CHECK(single.weights[0] == doctest::Approx(1.0));
    for (int i = 0; i < 10; ++i) CHECK(sample_clip(single, rng) == 0);

    ClipEntry zero{"z", 0, "s", 1};
    CHECK_THROWS_AS(build_manifest({zero}), ConfigError);
}

TEST_CASE("manifest repeat counts shift sampling weights") {
    ClipEntry a{"a", 30, "s0", 4};  // upsampled source
    ClipEntry b{"b", 60, "s1", 1};
    DatasetManifest m = build_manifest({a, b});
    CHECK(m.weights[0] == doctest::Approx(120.0 / 180.0));
}

TEST_CASE("clip directory round trip") {
    Rng rng(20);
    Scene s = make_random_scene(rng);
    CameraTrajectory traj = make_orbit_trajectory(rng, 4, 32, 32);
    RenderResult r = render_clip(s, traj, 32, 32);
    std::string dir = (fs::temp_directory_path() / "ncast_clip_rt").string();
    fs::remove_all(dir);
    save_clip_dir(dir, r, traj.intrinsics, "scene_test");
    ClipData back = load_clip_dir(dir, true);
    CHECK(back.video.frames.shape() == r.video.frames.shape());
    CHECK(back.normals.valid.count() == r.normals.valid.count());
    CHECK(back.meta.at("scene_id") == "scene_test");
    // u8 quantization bounds the rgb error
    for (long long i = 0; i < 100; ++i) CHECK(std::abs(back.video.frames[i] - r.video.frames[i]) < 1.0f / 255.0f);
    for (long long i = 0; i < back.normals.normals.size(); ++i)
        CHECK(back.normals.normals[i] == r.normals.normals[i]);
}

TEST_CASE("resize_short_edge is identity at target size") {
    auto [v, n] = tiny_clip(2, 64, 64, 21);
    Tensor before = v.frames;
    resize_short_edge(v, n, 64, 32);
    for (long long i = 0; i < before.size(); ++i) CHECK(v.frames[i] == before[i]);
}

TEST_CASE("resize_short_edge resizes and keeps normals unit") {
    auto [v, n] = tiny_clip(2, 96, 128, 22);
    resize_short_edge(v, n, 64, 32);
    CHECK(v.frames.dim(1) == 64);
    CHECK(v.frames.dim(2) % 32 == 0);
    for (long long p = 0; p < n.valid.size(); ++p) {
        if (!n.valid.get(p)) continue;
        const float* x = n.normals.data() + p * 3;
        CHECK(std::abs(std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) - 1.0f) < 1e-4f);
    }
}
