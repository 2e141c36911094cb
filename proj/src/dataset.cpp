#include "normalcast/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "normalcast/image.hpp"

namespace fs = std::filesystem;

namespace ncast {

std::vector<std::pair<int, int>> segment_clips(int video_len, int min_len, int max_len) {
    if (min_len < 1 || min_len > max_len) throw ConfigError("segment_clips: need 1 <= min_len <= max_len");
    std::vector<std::pair<int, int>> out;
    int pos = 0;
    while (video_len - pos >= min_len) {
        int len = std::min(max_len, video_len - pos);
        out.emplace_back(pos, pos + len);
        pos += len;
    }
    return out;
}

void AugmentationConfig::validate() const {
    for (float p : {hflip, crop, color, grayscale})
        if (p < 0.0f || p > 1.0f) throw ConfigError("augmentation probability outside [0,1]");
    if (crop + color + grayscale > 1.0f + 1e-6f)
        throw ConfigError("crop+color+grayscale probabilities exceed 1 (they are mutually exclusive)");
}

namespace {

void hflip_inplace(Tensor& t, Mask* mask, bool negate_x) {
    int F = t.dim(0), H = t.dim(1), W = t.dim(2), C = t.dim(3);
    for (int f = 0; f < F; ++f)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W / 2; ++x) {
                long long a = (((long long)f * H + y) * W + x) * C;
                long long b = (((long long)f * H + y) * W + (W - 1 - x)) * C;
                for (int c = 0; c < C; ++c) std::swap(t[a + c], t[b + c]);
            }
    if (negate_x) {
        for (long long i = 0; i < t.size(); i += C) t[i] = -t[i];
    }
    if (mask) {
        for (int f = 0; f < F; ++f)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W / 2; ++x) {
                    long long a = ((long long)f * H + y) * W + x;
                    long long b = ((long long)f * H + y) * W + (W - 1 - x);
                    bool tmp = mask->get(a);
                    mask->set(a, mask->get(b));
                    mask->set(b, tmp);
                }
    }
}

Tensor frame_of(const Tensor& t, int f) {
    int H = t.dim(1), W = t.dim(2), C = t.dim(3);
    Tensor out({H, W, C});
    std::copy(t.data() + (long long)f * H * W * C, t.data() + (long long)(f + 1) * H * W * C, out.data());
    return out;
}

void set_frame(Tensor& t, int f, const Tensor& frame) {
    long long n = frame.size();
    std::copy(frame.data(), frame.data() + n, t.data() + (long long)f * n);
}

Tensor crop_frame(const Tensor& frame, int y0, int x0, int ch, int cw) {
    int W = frame.dim(1), C = frame.dim(2);
    Tensor out({ch, cw, C});
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
            for (int c = 0; c < C; ++c)
                out[((long long)y * cw + x) * C + c] = frame[((long long)(y + y0) * W + (x + x0)) * C + c];
    return out;
}

void renormalize_valid(Tensor& normals, const Mask& valid) {
    int C = normals.dim(normals.rank() - 1);
    for (long long p = 0; p < valid.size(); ++p) {
        float* v = normals.data() + p * C;
        if (!valid.get(p)) {
            v[0] = v[1] = v[2] = 0.0f;
            continue;
        }
        float n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n > 1e-12f) {
            v[0] /= n;
            v[1] /= n;
            v[2] /= n;
        }
    }
}

}  // namespace

AugmentedClip augment(const VideoClip& clip, const NormalSequence& normals, uint64_t seed,
                      const AugmentationConfig& cfg) {
    cfg.validate();
    Rng rng(seed);
    AugmentedClip out;
    out.video.frames = clip.frames;
    out.video.frame_rate = clip.frame_rate;
    out.normals.normals = normals.normals;
    out.normals.valid = normals.valid;

    int F = clip.frames.dim(0), H = clip.frames.dim(1), W = clip.frames.dim(2);

    out.decision.hflip = rng.bernoulli(cfg.hflip);
    // one shared draw keeps crop/color/grayscale mutually exclusive
    double u = rng.uniform();
    if (u < cfg.crop)
        out.decision.crop = true;
    else if (u < cfg.crop + cfg.color)
        out.decision.color = true;
    else if (u < cfg.crop + cfg.color + cfg.grayscale)
        out.decision.grayscale = true;

    if (out.decision.hflip) {
        hflip_inplace(out.video.frames, nullptr, false);
        hflip_inplace(out.normals.normals, &out.normals.valid, true);
    }

    if (out.decision.crop) {
        // varying aspect ratio, same window for the whole clip
        int ch = std::max(8, (int)std::round(H * rng.uniform(0.7, 1.0)));
        int cw = std::max(8, (int)std::round(W * rng.uniform(0.7, 1.0)));
        ch = std::min(ch, H);
        cw = std::min(cw, W);
        int y0 = (int)rng.uniform_int(0, H - ch);
        int x0 = (int)rng.uniform_int(0, W - cw);
        Tensor rgb({F, H, W, 3}), nrm({F, H, W, 3});
        Mask msk({F, H, W});
        for (int f = 0; f < F; ++f) {
            set_frame(rgb, f, resize_bilinear(crop_frame(frame_of(out.video.frames, f), y0, x0, ch, cw), H, W));
            set_frame(nrm, f, resize_nearest(crop_frame(frame_of(out.normals.normals, f), y0, x0, ch, cw), H, W));
            Mask mf({ch, cw});
            for (int y = 0; y < ch; ++y)
                for (int x = 0; x < cw; ++x)
                    mf.set((long long)y * cw + x, out.normals.valid.get(((long long)f * H + y + y0) * W + x + x0));
            Mask mr = resize_mask_nearest(mf, H, W);
            for (long long i = 0; i < (long long)H * W; ++i) msk.set((long long)f * H * W + i, mr.get(i));
        }
        out.video.frames = std::move(rgb);
        out.normals.normals = std::move(nrm);
        out.normals.valid = std::move(msk);
    } else if (out.decision.color) {
        float brightness = (float)rng.uniform(0.7, 1.3);
        float contrast = (float)rng.uniform(0.7, 1.3);
        float saturation = (float)rng.uniform(0.5, 1.5);
        float hue = (float)rng.uniform(-0.2, 0.2);
        float cosh = std::cos(hue), sinh = std::sin(hue);
        for (long long i = 0; i < out.video.frames.size(); i += 3) {
            float r = out.video.frames[i], g = out.video.frames[i + 1], b = out.video.frames[i + 2];
            // hue: rotation about the gray axis (Rodrigues on (1,1,1)/sqrt(3))
            float k = 1.0f / 3.0f;
            float rr = r * (cosh + (1 - cosh) * k) + g * ((1 - cosh) * k - sinh * 0.57735f) +
                       b * ((1 - cosh) * k + sinh * 0.57735f);
            float gg = r * ((1 - cosh) * k + sinh * 0.57735f) + g * (cosh + (1 - cosh) * k) +
                       b * ((1 - cosh) * k - sinh * 0.57735f);
            float bb = r * ((1 - cosh) * k - sinh * 0.57735f) + g * ((1 - cosh) * k + sinh * 0.57735f) +
                       b * (cosh + (1 - cosh) * k);
            float luma = 0.299f * rr + 0.587f * gg + 0.114f * bb;
            rr = luma + saturation * (rr - luma);
            gg = luma + saturation * (gg - luma);
            bb = luma + saturation * (bb - luma);
            rr = (rr - 0.5f) * contrast + 0.5f;
            gg = (gg - 0.5f) * contrast + 0.5f;
            bb = (bb - 0.5f) * contrast + 0.5f;
            out.video.frames[i] = std::min(1.0f, std::max(0.0f, rr * brightness));
            out.video.frames[i + 1] = std::min(1.0f, std::max(0.0f, gg * brightness));
            out.video.frames[i + 2] = std::min(1.0f, std::max(0.0f, bb * brightness));
        }
    } else if (out.decision.grayscale) {
        for (long long i = 0; i < out.video.frames.size(); i += 3) {
            float luma = 0.299f * out.video.frames[i] + 0.587f * out.video.frames[i + 1] +
                         0.114f * out.video.frames[i + 2];
            out.video.frames[i] = out.video.frames[i + 1] = out.video.frames[i + 2] = luma;
        }
    }

    if (out.decision.crop) renormalize_valid(out.normals.normals, out.normals.valid);
    return out;
}

DatasetManifest build_manifest(const std::vector<ClipEntry>& clips) {
    if (clips.empty()) throw ConfigError("manifest needs at least one clip");
    DatasetManifest m;
    m.clips = clips;
    double total = 0.0;
    for (const auto& c : clips) {
        if (c.frames <= 0) throw ConfigError("clip with zero frames rejected: " + c.path);
        if (c.repeat <= 0) throw ConfigError("clip repeat must be positive: " + c.path);
        total += (double)c.frames * c.repeat;
    }
    for (const auto& c : clips) m.weights.push_back((double)c.frames * c.repeat / total);
    return m;
}

int sample_clip(const DatasetManifest& m, Rng& rng) {
    double u = rng.uniform();
    double acc = 0.0;
    for (size_t i = 0; i < m.weights.size(); ++i) {
        acc += m.weights[i];
        if (u < acc) return (int)i;
    }
    return (int)m.weights.size() - 1;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j;
    j["clips"] = nlohmann::json::array();
    for (size_t i = 0; i < m.clips.size(); ++i) {
        j["clips"].push_back({{"path", m.clips[i].path},
                              {"frames", m.clips[i].frames},
                              {"scene_id", m.clips[i].scene_id},
                              {"repeat", m.clips[i].repeat},
                              {"weight", m.weights[i]}});
    }
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest: " + path);
    f << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read manifest: " + path);
    nlohmann::json j;
    f >> j;
    std::vector<ClipEntry> clips;
    for (auto& c : j.at("clips")) {
        ClipEntry e;
        e.path = c.at("path").get<std::string>();
        e.frames = c.at("frames").get<int>();
        e.scene_id = c.at("scene_id").get<std::string>();
        e.repeat = c.value("repeat", 1);
        clips.push_back(e);
    }
    return build_manifest(clips);
}

uint64_t manifest_hash(const DatasetManifest& m) {
    uint64_t h = 14695981039346656037ULL;
    auto mix = [&h](const std::string& s) {
        for (char c : s) {
            h ^= (uint8_t)c;
            h *= 1099511628211ULL;
        }
    };
    for (size_t i = 0; i < m.clips.size(); ++i) {
        mix(m.clips[i].path);
        mix(std::to_string(m.clips[i].frames));
        mix(std::to_string(m.clips[i].repeat));
    }
    return h;
}

void save_clip_dir(const std::string& dir, const RenderResult& r, const Intrinsics& intr,
                   const std::string& scene_id) {
    fs::create_directories(dir);
    const Tensor& rgb = r.video.frames;
    std::vector<uint8_t> bytes((size_t)rgb.size());
    for (long long i = 0; i < rgb.size(); ++i)
        bytes[(size_t)i] = (uint8_t)std::min(255.0f, std::max(0.0f, std::round(rgb[i] * 255.0f)));
    ntf_write_u8((fs::path(dir) / "rgb.ntf").string(), rgb.shape(), bytes);
    ntf_write_f32((fs::path(dir) / "normal.ntf").string(), r.normals.normals);
    ntf_write_f32((fs::path(dir) / "depth.ntf").string(), r.depth.depths);
    ntf_write_bool((fs::path(dir) / "mask.ntf").string(), r.normals.valid);
    nlohmann::json meta;
    meta["frames"] = rgb.dim(0);
    meta["intrinsics"] = {{"fx", intr.fx}, {"fy", intr.fy}, {"cx", intr.cx}, {"cy", intr.cy}};
    meta["scene_id"] = scene_id;
    std::ofstream f(fs::path(dir) / "meta.json");
    f << meta.dump(2) << "\n";
}

ClipData load_clip_dir(const std::string& dir, bool need_depth) {
    ClipData d;
    d.video.frames = ntf_read_as_float((fs::path(dir) / "rgb.ntf").string());
    d.normals.normals = ntf_read_f32((fs::path(dir) / "normal.ntf").string());
    d.normals.valid = ntf_read_bool((fs::path(dir) / "mask.ntf").string());
    if (need_depth) {
        d.depth.depths = ntf_read_f32((fs::path(dir) / "depth.ntf").string());
        d.depth.valid = d.normals.valid;
    }
    std::ifstream f(fs::path(dir) / "meta.json");
    if (f) f >> d.meta;
    return d;
}

void resize_short_edge(VideoClip& clip, NormalSequence& normals, int target, int multiple) {
    int F = clip.frames.dim(0), H = clip.frames.dim(1), W = clip.frames.dim(2);
    int nh, nw;
    if (H <= W) {
        nh = target;
        nw = (int)std::round((double)W * target / H);
    } else {
        nw = target;
        nh = (int)std::round((double)H * target / W);
    }
    int ch = (nh / multiple) * multiple;
    int cw = (nw / multiple) * multiple;
    if (ch < multiple || cw < multiple) throw ConfigError("resize_short_edge: target too small for multiple");
    if (nh == H && nw == W && ch == H && cw == W) return;

    Tensor rgb({F, ch, cw, 3}), nrm({F, ch, cw, 3});
    Mask msk({F, ch, cw});
    int oy = (nh - ch) / 2, ox = (nw - cw) / 2;
    for (int f = 0; f < F; ++f) {
        Tensor rf = resize_bilinear(frame_of(clip.frames, f), nh, nw);
        Tensor nf = resize_nearest(frame_of(normals.normals, f), nh, nw);
        set_frame(rgb, f, crop_frame(rf, oy, ox, ch, cw));
        set_frame(nrm, f, crop_frame(nf, oy, ox, ch, cw));
        Mask mf({H, W});
        for (long long i = 0; i < (long long)H * W; ++i) mf.set(i, normals.valid.get((long long)f * H * W + i));
        Mask mr = resize_mask_nearest(mf, nh, nw);
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x)
                msk.set(((long long)f * ch + y) * cw + x, mr.get((long long)(y + oy) * nw + x + ox));
    }
    clip.frames = std::move(rgb);
    normals.normals = std::move(nrm);
    normals.valid = std::move(msk);
    renormalize_valid(normals.normals, normals.valid);
}

VideoClip clip_window(const VideoClip& c, int start, int len) {
    int H = c.frames.dim(1), W = c.frames.dim(2);
    VideoClip out;
    out.frame_rate = c.frame_rate;
    out.frames = Tensor({len, H, W, 3});
    long long fs = (long long)H * W * 3;
    std::copy(c.frames.data() + start * fs, c.frames.data() + (start + len) * fs, out.frames.data());
    return out;
}

NormalSequence normals_window(const NormalSequence& n, int start, int len) {
    int H = n.normals.dim(1), W = n.normals.dim(2);
    NormalSequence out;
    out.normals = Tensor({len, H, W, 3});
    out.valid = Mask({len, H, W});
    long long fs = (long long)H * W * 3;
    std::copy(n.normals.data() + start * fs, n.normals.data() + (start + len) * fs, out.normals.data());
    for (long long i = 0; i < (long long)len * H * W; ++i)
        out.valid.set(i, n.valid.get((long long)start * H * W + i));
    return out;
}

}  // namespace ncast
