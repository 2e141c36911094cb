#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "normalcast/config.hpp"
#include "normalcast/image.hpp"
#include "normalcast/inference.hpp"
#include "normalcast/layout.hpp"
#include "normalcast/losses.hpp"
#include "normalcast/trainer.hpp"

namespace fs = std::filesystem;
using namespace ncast;

namespace {

uint64_t effective_seed(uint64_t flag_seed) {
    if (const char* env = std::getenv("NC_SEED")) return std::strtoull(env, nullptr, 10);
    return flag_seed;
}

// ---- frame samplers over the training split ----

FrameSampler rgb_frame_sampler(const LoadedCorpus& corpus) {
    return [&corpus](Rng& rng) {
        int tid = sample_clip(corpus.train_manifest, rng);
        const ClipData& clip = corpus.clips[(size_t)corpus.train_ids[(size_t)tid]];
        int F = clip.video.frames.dim(0), H = clip.video.frames.dim(1), W = clip.video.frames.dim(2);
        int f = (int)rng.uniform_int(0, F - 1);
        Tensor frame({1, H, W, 3});
        std::copy(clip.video.frames.data() + (long long)f * H * W * 3,
                  clip.video.frames.data() + (long long)(f + 1) * H * W * 3, frame.data());
        TrainFrame out;
        out.chw = fhwc_to_fchw(rgb01_to_pm1(frame)).reshaped({3, H, W});
        out.valid = Mask({H, W}, true);
        return out;
    };
}

FrameSampler normal_frame_sampler(const LoadedCorpus& corpus) {
    return [&corpus](Rng& rng) {
        int tid = sample_clip(corpus.train_manifest, rng);
        const ClipData& clip = corpus.clips[(size_t)corpus.train_ids[(size_t)tid]];
        int F = clip.normals.normals.dim(0), H = clip.normals.normals.dim(1), W = clip.normals.normals.dim(2);
        int f = (int)rng.uniform_int(0, F - 1);
        Tensor frame({1, H, W, 3});
        std::copy(clip.normals.normals.data() + (long long)f * H * W * 3,
                  clip.normals.normals.data() + (long long)(f + 1) * H * W * 3, frame.data());
        TrainFrame out;
        out.chw = fhwc_to_fchw(frame).reshaped({3, H, W});
        out.valid = Mask({H, W});
        for (long long p = 0; p < (long long)H * W; ++p) out.valid.set(p, clip.normals.valid.get((long long)f * H * W + p));
        return out;
    };
}

// Held-out reconstruction metrics for normals: decode(encode(n)) vs n.
ReconMetrics holdout_normal_recon(const Vae& vae, const LoadedCorpus& corpus) {
    double ang_sum = 0, psnr_sum = 0;
    int n = 0;
    for (int id : corpus.holdout_ids) {
        const ClipData& clip = corpus.clips[(size_t)id];
        Tensor xhat = vae.decode(vae.encode(clip.normals.normals));
        ReconMetrics m = reconstruction_metrics(clip.normals.normals, xhat, clip.normals.valid);
        ang_sum += m.mean_angular_deg;
        psnr_sum += m.psnr_db;
        ++n;
    }
    if (n == 0) throw ConfigError("no held-out clips for reconstruction metrics");
    return ReconMetrics{ang_sum / n, psnr_sum / n};
}

double holdout_rgb_psnr(const Vae& vae, const LoadedCorpus& corpus) {
    double psnr_sum = 0;
    int n = 0;
    for (int id : corpus.holdout_ids) {
        const ClipData& clip = corpus.clips[(size_t)id];
        Tensor x = rgb01_to_pm1(clip.video.frames);
        Tensor xhat = vae.decode(vae.encode(x));
        psnr_sum += psnr_pm1(x, xhat);
        ++n;
    }
    return n > 0 ? psnr_sum / n : 0.0;
}

std::string pick_vae_ckpt(const PipelineConfig& cfg) {
    fs::path ft = fs::path(cfg.out_root) / "vae_ft";
    fs::path base = fs::path(cfg.out_root) / "vae";
    if (fs::exists(ft / "params.json")) return ft.string();
    if (fs::exists(base / "params.json")) return base.string();
    throw IoError("no trained VAE under " + cfg.out_root + " (run train-vae first)");
}

SemanticEncoder load_or_pretrain_semantic(const PipelineConfig& cfg, const LoadedCorpus& corpus) {
    fs::path dir = fs::path(cfg.out_root) / "semantic";
    if (fs::exists(dir / "params.json")) return SemanticEncoder::load(dir.string());
    std::cerr << "[train] pretraining semantic encoder (" << cfg.sem_pretrain.steps << " steps)\n";
    SemanticEncoder sem(cfg.sem_arch, cfg.seed + 101);
    auto rgb = rgb_frame_sampler(corpus);
    SemanticPretrainConfig pc = cfg.sem_pretrain;
    pc.seed = cfg.seed + 101;
    pretrain_semantic_encoder(sem, [&](Rng& rng) { return rgb(rng).chw; }, pc);
    sem.save(dir.string());
    return sem;
}

StageRunConfig stage_run_config(const PipelineConfig& cfg, const StageSection& s, int stage, uint64_t data_hash) {
    StageRunConfig r;
    r.stage = stage;
    r.steps = s.steps;
    r.schedule = OptimizerSchedule{s.lr, s.warmup, s.half_life};
    r.len_lo = s.len_lo;
    r.len_hi = s.len_hi;
    r.batch = s.batch;
    r.reg_weight = cfg.reg_weight;
    r.use_sfr = cfg.sfr_enabled;
    r.tap = parse_block(cfg.tap_block);
    r.short_edge = cfg.short_edge;
    r.size_multiple = cfg.size_multiple;
    r.grad_clip = cfg.grad_clip;
    r.weight_decay = cfg.weight_decay;
    r.augment = cfg.augment;
    r.aug = cfg.aug;
    r.noise = cfg.noise;
    r.pre = Preconditioner{cfg.sigma_data};
    r.sigma_star = cfg.inference_sigma;
    r.seed = cfg.seed + (uint64_t)stage;
    r.log_every = s.log_every;
    r.config_hash = cfg.config_hash;
    r.data_hash = data_hash;
    return r;
}

std::map<int, Tensor> load_external_features(const std::string& dir, const LoadedCorpus& corpus) {
    std::map<int, Tensor> out;
    for (size_t k = 0; k < corpus.train_ids.size(); ++k) {
        const std::string& name = corpus.train_manifest.clips[k].path;
        fs::path p = fs::path(dir) / (name + ".ntf");
        if (!fs::exists(p)) throw IoError("missing semantic features: " + p.string());
        Tensor t = ntf_read_f32(p.string());
        if (t.rank() != 4) throw ShapeError("semantic features must be [F,gh,gw,D]: " + p.string());
        out[corpus.train_ids[k]] = std::move(t);
    }
    return out;
}

// ---- commands ----

int cmd_synth(int scenes, int frames, const std::string& size, uint64_t seed, const std::string& out) {
    int W = 0, H = 0;
    if (std::sscanf(size.c_str(), "%dx%d", &W, &H) != 2 || W < 16 || H < 16)
        throw ConfigError("bad --size, expected WxH with W,H >= 16");
    if (scenes < 1 || frames < 1) throw ConfigError("--scenes and --frames must be positive");
    seed = effective_seed(seed);
    fs::create_directories(out);
    {
        nlohmann::json j{{"command", "synth"}, {"scenes", scenes}, {"frames", frames},
                         {"size", size},       {"seed", seed}};
        std::ofstream f(fs::path(out) / "resolved_config.json");
        f << j.dump(2) << "\n";
    }
    Rng rng(seed);
    std::vector<ClipEntry> entries;
    for (int i = 0; i < scenes; ++i) {
        Scene scene = make_random_scene(rng);
        CameraTrajectory traj = make_orbit_trajectory(rng, frames, H, W);
        RenderResult r = render_clip(scene, traj, H, W);
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%04d", i);
        std::string dir = (fs::path(out) / name).string();
        std::string scene_id = "scene_" + std::to_string(i);
        save_clip_dir(dir, r, traj.intrinsics, scene_id);
        ClipEntry e;
        e.path = name;
        e.frames = frames;
        e.scene_id = scene_id;
        entries.push_back(e);
        std::cerr << "[synth] " << name << " (" << frames << " frames)\n";
    }
    save_manifest(build_manifest(entries), (fs::path(out) / "manifest.json").string());
    return 0;
}

int cmd_train_vae(const std::string& config_path) {
    PipelineConfig cfg = load_config(config_path);
    write_resolved_config(cfg, cfg.out_root);
    LoadedCorpus corpus = load_corpus_dir(cfg.data_dir, cfg.holdout_clips);
    Vae vae(cfg.vae_arch, cfg.seed + 11);
    VaeTrainConfig tc = cfg.vae_train;
    tc.seed = cfg.seed + 11;
    std::cerr << "[train-vae] " << tc.steps << " steps\n";
    auto log = train_vae(vae, rgb_frame_sampler(corpus), tc);
    double psnr = holdout_rgb_psnr(vae, corpus);
    vae.save((fs::path(cfg.out_root) / "vae").string(),
             {{"step", tc.steps}, {"config_hash", cfg.config_hash}, {"data_hash", corpus.data_hash}});
    nlohmann::json metrics{{"holdout_rgb_psnr_db", psnr}, {"final_loss", log.empty() ? 0.0f : log.back()}};
    std::ofstream f(fs::path(cfg.out_root) / "vae_metrics.json");
    f << metrics.dump(2) << "\n";
    std::cerr << "[train-vae] holdout RGB PSNR " << psnr << " dB\n";
    return 0;
}

int cmd_finetune_vae(const std::string& config_path) {
    PipelineConfig cfg = load_config(config_path);
    write_resolved_config(cfg, cfg.out_root);
    LoadedCorpus corpus = load_corpus_dir(cfg.data_dir, cfg.holdout_clips);
    fs::path base = fs::path(cfg.out_root) / "vae";
    if (!fs::exists(base / "params.json")) throw IoError("no trained VAE at " + base.string());
    Vae vae = Vae::load(base.string());

    ReconMetrics before = holdout_normal_recon(vae, corpus);
    uint64_t enc_before = 0;
    {
        ParamStore& ps = vae.params;
        for (Param* p : vae.encoder_params())
            enc_before ^= bytes_checksum(p->value.data(), (size_t)p->value.size());
        (void)ps;
    }
    VaeTrainConfig tc = cfg.vae_finetune;
    tc.seed = cfg.seed + 12;
    std::cerr << "[finetune-vae-decoder] " << tc.steps << " steps\n";
    finetune_decoder(vae, normal_frame_sampler(corpus), tc);
    uint64_t enc_after = 0;
    for (Param* p : vae.encoder_params()) enc_after ^= bytes_checksum(p->value.data(), (size_t)p->value.size());
    if (enc_before != enc_after) throw TrainingError("encoder changed during decoder fine-tuning", tc.steps);
    ReconMetrics after = holdout_normal_recon(vae, corpus);

    vae.save((fs::path(cfg.out_root) / "vae_ft").string(),
             {{"step", tc.steps}, {"config_hash", cfg.config_hash}, {"data_hash", corpus.data_hash}});
    nlohmann::json metrics{{"before", {{"mean_angular_deg", before.mean_angular_deg}, {"psnr_db", before.psnr_db}}},
                           {"after", {{"mean_angular_deg", after.mean_angular_deg}, {"psnr_db", after.psnr_db}}}};
    std::ofstream f(fs::path(cfg.out_root) / "vae_ft_metrics.json");
    f << metrics.dump(2) << "\n";
    std::cerr << "[finetune-vae-decoder] mean angular " << before.mean_angular_deg << " -> " << after.mean_angular_deg
              << " deg, PSNR " << before.psnr_db << " -> " << after.psnr_db << " dB\n";
    return 0;
}

int cmd_train(int stage, const std::string& config_path, const std::string& resume,
              const std::string& features_dir_flag) {
    PipelineConfig cfg = load_config(config_path);
    if (!features_dir_flag.empty()) cfg.semantic_features_dir = features_dir_flag;
    std::string out_dir = (fs::path(cfg.out_root) / ("stage" + std::to_string(stage))).string();
    fs::create_directories(out_dir);
    write_resolved_config(cfg, out_dir);
    LoadedCorpus corpus = load_corpus_dir(cfg.data_dir, cfg.holdout_clips);

    Vae vae = Vae::load(pick_vae_ckpt(cfg));
    UnetConfig ucfg = cfg.unet_arch;
    ucfg.latent_channels = cfg.vae_arch.latent_channels;
    DenoiserUnet unet(ucfg, cfg.seed + 21);
    BlockId tap = parse_block(cfg.tap_block);

    std::optional<SemanticEncoder> sem;
    std::optional<Projector> proj;
    std::map<int, Tensor> ext;
    if (cfg.sfr_enabled) {
        if (!cfg.semantic_features_dir.empty()) {
            ext = load_external_features(cfg.semantic_features_dir, corpus);
        } else {
            sem.emplace(load_or_pretrain_semantic(cfg, corpus));
        }
        int D = !ext.empty() ? ext.begin()->second.dim(3) : sem->cfg.dim;
        proj.emplace(unet.tap_channels(tap), cfg.projector_hidden, D, cfg.seed + 31);
    }

    if (stage == 1) {
        if (!resume.empty()) {
            load_params(unet.params, (fs::path(resume) / "unet").string());
            if (cfg.sfr_enabled && fs::exists(fs::path(resume) / "projector" / "params.json"))
                load_params(proj->params, (fs::path(resume) / "projector").string());
        }
        StageRunConfig rc = stage_run_config(cfg, cfg.stage1, 1, corpus.data_hash);
        rc.out_dir = out_dir;
        if (!ext.empty()) {
            rc.external_features = &ext;
            rc.augment = false;
        }
        std::cerr << "[train] stage 1: " << rc.steps << " steps, sfr=" << (rc.use_sfr ? "on" : "off") << "\n";
        train_stage1(vae, unet, sem ? &*sem : nullptr, proj ? &*proj : nullptr, corpus, rc);
    } else if (stage == 2) {
        std::string s1 = resume.empty() ? (fs::path(cfg.out_root) / "stage1" / "ckpt").string() : resume;
        if (!fs::exists(fs::path(s1) / "unet" / "params.json"))
            throw IoError("stage 2 needs a stage-1 checkpoint (looked in " + s1 + ")");
        load_params(unet.params, (fs::path(s1) / "unet").string());
        if (cfg.sfr_enabled && fs::exists(fs::path(s1) / "projector" / "params.json"))
            load_params(proj->params, (fs::path(s1) / "projector").string());
        StageRunConfig rc = stage_run_config(cfg, cfg.stage2, 2, corpus.data_hash);
        rc.out_dir = out_dir;
        if (!ext.empty()) {
            rc.external_features = &ext;
            rc.augment = false;
        }
        std::cerr << "[train] stage 2: " << rc.steps << " steps, sfr=" << (rc.use_sfr ? "on" : "off") << "\n";
        train_stage2(vae, unet, sem ? &*sem : nullptr, proj ? &*proj : nullptr, corpus, rc);
    } else {
        throw ConfigError("--stage must be 1 or 2");
    }

    // quick holdout report for the stage result
    InferenceConfig icfg{cfg.window, cfg.overlap, cfg.inference_steps, cfg.inference_sigma};
    HoldoutMetrics hm = eval_holdout(vae, unet, corpus, icfg, Preconditioner{cfg.sigma_data});
    nlohmann::json j{{"mean", hm.summary.mean},   {"median", hm.summary.median}, {"a11_25", hm.summary.a1125},
                     {"a22_5", hm.summary.a225},  {"a30", hm.summary.a30},        {"flicker", hm.flicker_windowed}};
    std::ofstream f(fs::path(out_dir) / "holdout_metrics.json");
    f << j.dump(2) << "\n";
    std::cerr << "[train] holdout mean angular error " << hm.summary.mean << " deg\n";
    return 0;
}

int cmd_infer(const std::string& input, const std::string& ckpt, const std::string& out, int window, int overlap,
              int steps, float sigma) {
    if (!fs::exists(fs::path(ckpt) / "vae" / "params.json") || !fs::exists(fs::path(ckpt) / "unet" / "params.json"))
        throw IoError("checkpoint missing vae/ or unet/ under " + ckpt);
    Vae vae = Vae::load((fs::path(ckpt) / "vae").string());
    DenoiserUnet unet = DenoiserUnet::load((fs::path(ckpt) / "unet").string());

    VideoClip video;
    if (fs::is_directory(input)) {
        video = load_clip_dir(input).video;
    } else {
        video.frames = ntf_read_as_float(input);
        if (video.frames.rank() != 4 || video.frames.dim(3) != 3)
            throw ShapeError("video NTF must be [F,H,W,3]");
    }
    fs::create_directories(out);
    {
        nlohmann::json j{{"command", "infer"},   {"input", input},   {"checkpoint", ckpt},
                         {"window", window},     {"overlap", overlap}, {"steps", steps},
                         {"sigma", sigma}};
        std::ofstream f(fs::path(out) / "resolved_config.json");
        f << j.dump(2) << "\n";
    }

    InferenceConfig icfg{window, overlap, steps, sigma};
    NormalSequence pred = estimate_normals(vae, unet, video, icfg, Preconditioner{});
    ntf_write_f32((fs::path(out) / "normal.ntf").string(), pred.normals);
    ntf_write_bool((fs::path(out) / "mask.ntf").string(), pred.valid);
    int F = pred.normals.dim(0), H = pred.normals.dim(1), W = pred.normals.dim(2);
    for (int f = 0; f < F; ++f) {
        Tensor frame({H, W, 3});
        std::copy(pred.normals.data() + (long long)f * H * W * 3, pred.normals.data() + (long long)(f + 1) * H * W * 3,
                  frame.data());
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.png", f);
        write_png_rgb8((fs::path(out) / name).string(), H, W, normal_frame_to_rgb8(frame));
    }
    std::cerr << "[infer] wrote " << F << " frames to " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& out) {
    nlohmann::json report = evaluate_dirs(pred, gt, "normalcast");
    std::ofstream f(out);
    if (!f) throw IoError("cannot write report: " + out);
    f << report.dump(2) << "\n";
    std::cerr << "[eval] mean " << report["aggregate"]["mean"] << " deg, median " << report["aggregate"]["median"]
              << " deg, flicker " << report["flicker"] << " deg\n";
    return 0;
}

int cmd_profile(const std::string& pred, int x0, const std::string& out) {
    NormalSequence seq;
    seq.normals = ntf_read_f32((fs::path(pred) / "normal.ntf").string());
    if (fs::exists(fs::path(pred) / "mask.ntf"))
        seq.valid = ntf_read_bool((fs::path(pred) / "mask.ntf").string());
    else
        seq.valid = Mask({seq.normals.dim(0), seq.normals.dim(1), seq.normals.dim(2)}, true);
    if (x0 < 0) x0 = seq.normals.dim(2) / 2;
    TemporalProfile tp = temporal_profile(seq, x0);
    int F = tp.slice.dim(0), H = tp.slice.dim(1);
    // y-t image: rows = y, columns = t
    Tensor img({H, F, 3});
    for (int f = 0; f < F; ++f)
        for (int y = 0; y < H; ++y)
            for (int c = 0; c < 3; ++c) img[((long long)y * F + f) * 3 + c] = tp.slice[((long long)f * H + y) * 3 + c];
    write_png_rgb8(out, H, F, normal_frame_to_rgb8(img));
    std::cerr << "[profile] column " << x0 << ": flicker " << tp.flicker << " deg\n";
    return 0;
}

int cmd_viz_features(const std::string& features, const std::string& out) {
    Tensor t = ntf_read_f32(features);
    PatchFeatures pf;
    if (t.rank() == 4) {
        pf.gh = t.dim(1);
        pf.gw = t.dim(2);
        pf.feats = t.reshaped({t.dim(0), t.dim(1) * t.dim(2), t.dim(3)});
    } else if (t.rank() == 3) {
        pf.feats = t;
        pf.gh = (int)std::round(std::sqrt((double)t.dim(1)));
        pf.gw = pf.gh;
    } else {
        throw ShapeError("features NTF must be [F,N,D] or [F,gh,gw,D]");
    }
    fs::create_directories(out);
    std::array<double, 3> explained{};
    std::vector<Tensor> imgs = pca_feature_viz(pf, &explained);
    for (size_t f = 0; f < imgs.size(); ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04zu.png", f);
        write_png_rgb8((fs::path(out) / name).string(), imgs[f].dim(0), imgs[f].dim(1),
                       rgb_frame_to_rgb8(imgs[f]));
    }
    std::cerr << "[viz-features] explained variance " << explained[0] << " " << explained[1] << " " << explained[2]
              << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path) {
    PipelineConfig cfg = load_config(config_path);
    std::string out_dir = (fs::path(cfg.out_root) / "ablation").string();
    fs::create_directories(out_dir);
    write_resolved_config(cfg, out_dir);
    LoadedCorpus corpus = load_corpus_dir(cfg.data_dir, cfg.holdout_clips);
    Vae vae = Vae::load(pick_vae_ckpt(cfg));
    SemanticEncoder sem = load_or_pretrain_semantic(cfg, corpus);

    std::vector<BlockId> taps = ablation_blocks();
    std::vector<EvalSummary> rows;
    nlohmann::json rows_json = nlohmann::json::array();
    for (BlockId tap : taps) {
        UnetConfig ucfg = cfg.unet_arch;
        ucfg.latent_channels = cfg.vae_arch.latent_channels;
        DenoiserUnet unet(ucfg, cfg.seed + 21);  // same init per tap
        Projector proj(unet.tap_channels(tap), cfg.projector_hidden, sem.cfg.dim, cfg.seed + 31);
        StageRunConfig rc = stage_run_config(cfg, cfg.stage1, 1, corpus.data_hash);
        rc.tap = tap;
        rc.out_dir = "";
        std::cerr << "[ablate] tap " << block_name(tap) << ": " << rc.steps << " steps\n";
        train_stage1(vae, unet, &sem, &proj, corpus, rc);
        InferenceConfig icfg{cfg.window, cfg.overlap, cfg.inference_steps, cfg.inference_sigma};
        HoldoutMetrics hm = eval_holdout(vae, unet, corpus, icfg, Preconditioner{cfg.sigma_data});
        rows.push_back(hm.summary);
        rows_json.push_back({{"tap", block_name(tap)},
                             {"mean", hm.summary.mean},
                             {"median", hm.summary.median},
                             {"a11_25", hm.summary.a1125},
                             {"a22_5", hm.summary.a225},
                             {"a30", hm.summary.a30}});
    }
    std::vector<double> ranks = rank_methods(rows);
    for (size_t i = 0; i < rows.size(); ++i) rows_json[i]["avg_rank"] = ranks[i];

    nlohmann::json report{{"rows", rows_json}};
    {
        std::ofstream f(fs::path(out_dir) / "report.json");
        f << report.dump(2) << "\n";
    }
    std::ofstream tf(fs::path(out_dir) / "table.txt");
    char line[256];
    std::snprintf(line, sizeof(line), "%-8s %8s %8s %8s %8s %8s %8s\n", "tap", "mean", "med", "11.25", "22.5", "30",
                  "rank");
    tf << line;
    std::cout << line;
    for (size_t i = 0; i < rows.size(); ++i) {
        std::snprintf(line, sizeof(line), "%-8s %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f\n", block_name(taps[i]),
                      rows[i].mean, rows[i].median, rows[i].a1125, rows[i].a225, rows[i].a30, ranks[i]);
        tf << line;
        std::cout << line;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"normalcast: video surface normal estimation with a latent video diffusion model"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "render a synthetic clip corpus with ground-truth normals and depth");
    int s_scenes = 2, s_frames = 20;
    std::string s_size = "64x64", s_out;
    uint64_t s_seed = 7;
    synth->add_option("--scenes", s_scenes, "number of scenes/clips");
    synth->add_option("--frames", s_frames, "frames per clip");
    synth->add_option("--size", s_size, "WxH");
    synth->add_option("--seed", s_seed, "seed (NC_SEED overrides)");
    synth->add_option("--out", s_out, "output corpus directory")->required();

    std::string cfg_path;
    auto* tv = app.add_subcommand("train-vae", "train the VAE on corpus RGB");
    tv->add_option("--config", cfg_path, "pipeline config JSON")->required();
    auto* fv = app.add_subcommand("finetune-vae-decoder", "fine-tune the VAE decoder on normal maps");
    fv->add_option("--config", cfg_path, "pipeline config JSON")->required();

    auto* tr = app.add_subcommand("train", "run a training stage");
    int t_stage = 1;
    std::string t_resume, t_features;
    tr->add_option("--stage", t_stage, "1 or 2")->required();
    tr->add_option("--config", cfg_path, "pipeline config JSON")->required();
    tr->add_option("--resume", t_resume, "checkpoint to start from");
    tr->add_option("--semantic-features", t_features, "directory of precomputed per-clip patch features");

    auto* in = app.add_subcommand("infer", "estimate normals for a video");
    std::string i_input, i_ckpt, i_out;
    int i_window = 14, i_overlap = 4, i_steps = 1;
    float i_sigma = 700.0f;
    in->add_option("--input", i_input, "clip directory or video .ntf")->required();
    in->add_option("--checkpoint", i_ckpt, "checkpoint directory (vae/ + unet/)")->required();
    in->add_option("--out", i_out, "output directory")->required();
    in->add_option("--window", i_window, "window length");
    in->add_option("--overlap", i_overlap, "window overlap");
    in->add_option("--steps", i_steps, "denoising steps");
    in->add_option("--sigma", i_sigma, "starting noise level");

    auto* ev = app.add_subcommand("eval", "angular metrics for predictions vs ground truth");
    std::string e_pred, e_gt, e_out = "report.json";
    ev->add_option("--pred", e_pred, "prediction directory of clip subdirs")->required();
    ev->add_option("--gt", e_gt, "ground-truth corpus directory")->required();
    ev->add_option("--out", e_out, "report JSON path");

    auto* pr = app.add_subcommand("profile", "y-t slice and flicker score for a predicted sequence");
    std::string p_pred, p_out = "slice.png";
    int p_x0 = -1;
    pr->add_option("--pred", p_pred, "directory with normal.ntf")->required();
    pr->add_option("--x0", p_x0, "column index (default: center)");
    pr->add_option("--out", p_out, "slice PNG path");

    auto* vf = app.add_subcommand("viz-features", "PCA visualization of patch features");
    std::string v_features, v_out;
    vf->add_option("--features", v_features, "PatchFeatures NTF file")->required();
    vf->add_option("--out", v_out, "output directory")->required();

    auto* ab = app.add_subcommand("ablate-sfr-location", "stage-1 sweep of the SFR tap from Down1 to Up2");
    ab->add_option("--config", cfg_path, "pipeline config JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_name() == "CallForHelp" ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(s_scenes, s_frames, s_size, s_seed, s_out);
        if (tv->parsed()) return cmd_train_vae(cfg_path);
        if (fv->parsed()) return cmd_finetune_vae(cfg_path);
        if (tr->parsed()) return cmd_train(t_stage, cfg_path, t_resume, t_features);
        if (in->parsed()) return cmd_infer(i_input, i_ckpt, i_out, i_window, i_overlap, i_steps, i_sigma);
        if (ev->parsed()) return cmd_eval(e_pred, e_gt, e_out);
        if (pr->parsed()) return cmd_profile(p_pred, p_x0, p_out);
        if (vf->parsed()) return cmd_viz_features(v_features, v_out);
        if (ab->parsed()) return cmd_ablate(cfg_path);
    } catch (const ConfigError& e) {
        std::cerr << "error [config]: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error [io]: " << e.what() << "\n";
        return 4;
    } catch (const ShapeError& e) {
        std::cerr << "error [shape]: " << e.what() << "\n";
        return 5;
    } catch (const MetricError& e) {
        std::cerr << "error [metric]: " << e.what() << "\n";
        return 5;
    } catch (const TrainingError& e) {
        std::cerr << "error [training]: " << e.what() << "\n";
        return 6;
    } catch (const std::exception& e) {
        std::cerr << "error [internal]: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
