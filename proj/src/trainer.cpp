#include "normalcast/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "normalcast/inference.hpp"
#include "normalcast/layout.hpp"
#include "normalcast/losses.hpp"

namespace fs = std::filesystem;

namespace ncast {

int clip_length_sampler(int lo, int hi, Rng& rng) {
    if (lo < 1 || lo > hi) throw ConfigError("clip_length_sampler: need 1 <= lo <= hi");
    return (int)rng.uniform_int(lo, hi);
}

LoadedCorpus load_corpus_dir(const std::string& data_dir, int holdout_clips) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(data_dir))
        if (e.is_directory() && fs::exists(e.path() / "rgb.ntf")) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw IoError("no clip directories under " + data_dir);
    if (holdout_clips < 0 || holdout_clips >= (int)names.size())
        throw ConfigError("holdout_clips must leave at least one training clip");

    // optional repeat counts from the dataset manifest
    std::map<std::string, int> repeats;
    fs::path mpath = fs::path(data_dir) / "manifest.json";
    if (fs::exists(mpath)) {
        DatasetManifest dm = load_manifest(mpath.string());
        for (const auto& c : dm.clips) repeats[fs::path(c.path).filename().string()] = c.repeat;
    }

    LoadedCorpus corpus;
    for (const std::string& n : names) corpus.clips.push_back(load_clip_dir((fs::path(data_dir) / n).string()));
    int ntrain = (int)names.size() - holdout_clips;
    std::vector<ClipEntry> entries;
    for (int i = 0; i < (int)names.size(); ++i) {
        if (i < ntrain) {
            corpus.train_ids.push_back(i);
            ClipEntry e;
            e.path = names[(size_t)i];
            e.frames = corpus.clips[(size_t)i].video.frames.dim(0);
            e.scene_id = corpus.clips[(size_t)i].meta.value("scene_id", std::string("?"));
            auto it = repeats.find(names[(size_t)i]);
            e.repeat = it != repeats.end() ? it->second : 1;
            entries.push_back(e);
        } else {
            corpus.holdout_ids.push_back(i);
        }
    }
    corpus.train_manifest = build_manifest(entries);
    corpus.data_hash = manifest_hash(corpus.train_manifest);
    return corpus;
}

namespace {

struct TrainSample {
    Tensor rgb_pm1_fchw;
    Tensor normals_fchw;
    Tensor rgb01_fhwc;
    Tensor normals_fhwc;
    Mask valid;
    int clip_index = -1;  // corpus index
    int start = 0, len = 0;
};

TrainSample draw_sample(const LoadedCorpus& corpus, const StageRunConfig& cfg, int len, Rng& rng) {
    int tid = sample_clip(corpus.train_manifest, rng);
    int clip_index = corpus.train_ids[(size_t)tid];
    const ClipData& clip = corpus.clips[(size_t)clip_index];
    int F = clip.video.frames.dim(0);
    int use_len = std::min(len, F);
    int start = (int)rng.uniform_int(0, F - use_len);

    VideoClip video = clip_window(clip.video, start, use_len);
    NormalSequence normals = normals_window(clip.normals, start, use_len);
    if (cfg.augment) {
        AugmentedClip aug = augment(video, normals, rng.next_u64(), cfg.aug);
        video = std::move(aug.video);
        normals = std::move(aug.normals);
    }
    resize_short_edge(video, normals, cfg.short_edge, cfg.size_multiple);

    TrainSample s;
    s.rgb01_fhwc = video.frames;
    s.normals_fhwc = normals.normals;
    s.valid = normals.valid;
    s.rgb_pm1_fchw = fhwc_to_fchw(rgb01_to_pm1(video.frames));
    s.normals_fchw = fhwc_to_fchw(normals.normals);
    s.clip_index = clip_index;
    s.start = start;
    s.len = use_len;
    return s;
}

// Semantic targets for one sample: external file features when configured,
// the frozen encoder otherwise.
Tensor semantic_targets(const SemanticEncoder* sem, const StageRunConfig& cfg, const TrainSample& s, int gh, int gw) {
    if (cfg.external_features) {
        if (cfg.augment) throw ConfigError("external semantic features require augmentation off");
        auto it = cfg.external_features->find(s.clip_index);
        if (it == cfg.external_features->end())
            throw ConfigError("no external features for clip " + std::to_string(s.clip_index));
        const Tensor& all = it->second;  // [F,gh,gw,D]
        if (all.dim(1) != gh || all.dim(2) != gw)
            throw ConfigError("external feature grid " + shape_str(all.shape()) + " does not match tap grid " +
                              std::to_string(gh) + "x" + std::to_string(gw));
        if (s.start + s.len > all.dim(0)) throw ShapeError("external features shorter than clip");
        int D = all.dim(3);
        Tensor out({s.len, gh * gw, D});
        std::copy(all.data() + (long long)s.start * gh * gw * D,
                  all.data() + (long long)(s.start + s.len) * gh * gw * D, out.data());
        return out;
    }
    return encode_semantic(*sem, s.rgb01_fhwc, gh, gw).feats;
}

struct CsvLog {
    std::ofstream f;
    explicit CsvLog(const std::string& path) {
        if (path.empty()) return;
        fs::create_directories(fs::path(path).parent_path());
        f.open(path);
        if (!f) throw IoError("cannot open loss log: " + path);
        f << "step,loss_total,loss_dsm_or_angular,loss_reg,lr,sigma\n";
    }
    void line(long long step, float total, float main, float reg, float lr, float sigma) {
        if (!f.is_open()) return;
        f << step << "," << total << "," << main << "," << reg << "," << lr << "," << sigma << "\n";
    }
};

void write_run_manifest(const StageRunConfig& cfg, const std::string& ckpt_dir, const std::string& loss_csv) {
    if (cfg.out_dir.empty()) return;
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["stage"] = cfg.stage;
    j["steps"] = cfg.steps;
    j["config_hash"] = cfg.config_hash;
    j["dataset_hash"] = cfg.data_hash;
    j["loss_csv"] = loss_csv;
    j["checkpoints"] = nlohmann::json::array({ckpt_dir});
    std::ofstream f(fs::path(cfg.out_dir) / "run_manifest.json");
    f << j.dump(2) << "\n";
}

// grid dims of the tapped feature map for a given latent size
std::pair<int, int> tap_grid(const DenoiserUnet& unet, BlockId tap, int h, int w) {
    int s = unet.tap_scale(tap);
    return {h / s, w / s};
}

}  // namespace

void save_stage_checkpoint(const Vae& vae, const DenoiserUnet& unet, const Projector* proj, const std::string& dir,
                           const nlohmann::json& meta) {
    fs::create_directories(dir);
    vae.save((fs::path(dir) / "vae").string(), meta);
    unet.save((fs::path(dir) / "unet").string(), meta);
    if (proj) proj->save((fs::path(dir) / "projector").string(), meta);
    std::ofstream f(fs::path(dir) / "ckpt.json");
    f << meta.dump(2) << "\n";
}

StageResult train_stage1(Vae& vae, DenoiserUnet& unet, SemanticEncoder* sem, Projector* proj,
                         const LoadedCorpus& corpus, const StageRunConfig& cfg) {
    if (cfg.use_sfr && (!proj || (!sem && !cfg.external_features)))
        throw ConfigError("stage 1 with SFR needs a projector and semantic features");
    Rng rng(cfg.seed);
    vae.params.set_requires_grad(false);
    if (sem) sem->params.set_requires_grad(false);
    unet.params.set_requires_grad(true);
    if (proj) proj->params.set_requires_grad(true);

    std::vector<Param*> trainable = unet.params.all();
    if (cfg.use_sfr)
        for (Param* p : proj->params.all()) trainable.push_back(p);
    unet.params.reset_moments();
    if (proj) proj->params.reset_moments();

    AdamW opt;
    opt.weight_decay = cfg.weight_decay;
    CsvLog csv(cfg.out_dir.empty() ? "" : (fs::path(cfg.out_dir) / "loss_stage1.csv").string());
    StageResult res;

    for (long long step = 0; step < cfg.steps; ++step) {
        int len = clip_length_sampler(cfg.len_lo, cfg.len_hi, rng);
        float sigma = sample_sigma(cfg.noise, rng);
        for (Param* p : trainable) p->grad.fill(0.0f);

        double total_acc = 0, dsm_acc = 0, reg_acc = 0;
        for (int b = 0; b < cfg.batch; ++b) {
            TrainSample s = draw_sample(corpus, cfg, len, rng);
            Tensor z_c, z0;
            {
                Tape enc;
                z_c = enc.val(vae.encode_graph(enc, make_constant(enc, s.rgb_pm1_fchw)));
            }
            {
                Tape enc;
                z0 = enc.val(vae.encode_graph(enc, make_constant(enc, s.normals_fchw)));
            }
            Tensor eps(z0.shape());
            for (long long i = 0; i < eps.size(); ++i) eps[i] = (float)rng.normal();

            Tape t;
            Var tap_var;
            Var dsm = dsm_loss_graph(unet, t, z0, z_c, sigma, eps, cfg.pre,
                                     cfg.use_sfr ? std::optional<BlockId>(cfg.tap) : std::nullopt,
                                     cfg.use_sfr ? &tap_var : nullptr);
            Var loss = dsm;
            float reg_val = 0.0f;
            if (cfg.use_sfr) {
                auto [gh, gw] = tap_grid(unet, cfg.tap, z0.dim(2), z0.dim(3));
                Tensor semf = semantic_targets(sem, cfg, s, gh, gw);
                Var projected = proj->project_graph(t, tap_var);
                Var reg = reg_loss_graph(t, projected, semf);
                reg_val = t.val(reg)[0];
                loss = add(loss, scale(reg, cfg.reg_weight));
            }
            float dsm_val = t.val(dsm)[0];
            float total = t.val(loss)[0];
            if (!std::isfinite(total))
                throw TrainingError("stage-1 loss is not finite (seed " + std::to_string(cfg.seed) + ")", step);
            total_acc += total;
            dsm_acc += dsm_val;
            reg_acc += reg_val;
            t.backward(scale(loss, 1.0f / (float)cfg.batch));
        }
        clip_global_norm(trainable, cfg.grad_clip);
        float lr = lr_at(cfg.schedule, step + 1);
        opt.step(trainable, lr);
        res.log.push_back({(float)(total_acc / cfg.batch), (float)(dsm_acc / cfg.batch), (float)(reg_acc / cfg.batch),
                           lr, sigma});
        csv.line(step, res.log.back()[0], res.log.back()[1], res.log.back()[2], lr, sigma);
    }

    if (!cfg.out_dir.empty()) {
        res.ckpt_dir = (fs::path(cfg.out_dir) / "ckpt").string();
        nlohmann::json meta{{"stage", 1},        {"step", cfg.steps},          {"config_hash", cfg.config_hash},
                            {"seed", cfg.seed},  {"data_hash", cfg.data_hash}, {"tap", block_name(cfg.tap)},
                            {"sfr", cfg.use_sfr}};
        save_stage_checkpoint(vae, unet, cfg.use_sfr ? proj : nullptr, res.ckpt_dir, meta);
        write_run_manifest(cfg, res.ckpt_dir, "loss_stage1.csv");
    }
    return res;
}

StageResult train_stage2(Vae& vae, DenoiserUnet& unet, SemanticEncoder* sem, Projector* proj,
                         const LoadedCorpus& corpus, const StageRunConfig& cfg) {
    if (cfg.use_sfr && (!proj || (!sem && !cfg.external_features)))
        throw ConfigError("stage 2 with SFR needs a projector and semantic features");
    Rng rng(cfg.seed);
    vae.params.set_requires_grad(false);  // frozen but differentiable
    if (sem) sem->params.set_requires_grad(false);
    unet.params.set_requires_grad(true);
    unet.params.set_requires_grad(ParamTag::Temporal, false);
    if (proj) proj->params.set_requires_grad(true);

    std::vector<Param*> trainable = unet.params.with_tag(ParamTag::Spatial);
    if (cfg.use_sfr)
        for (Param* p : proj->params.all()) trainable.push_back(p);
    unet.params.reset_moments();
    if (proj) proj->params.reset_moments();

    AdamW opt;
    opt.weight_decay = cfg.weight_decay;
    CsvLog csv(cfg.out_dir.empty() ? "" : (fs::path(cfg.out_dir) / "loss_stage2.csv").string());
    StageResult res;
    const uint64_t temporal_before = unet.params.checksum(ParamTag::Temporal);

    for (long long step = 0; step < cfg.steps; ++step) {
        int len = clip_length_sampler(cfg.len_lo, cfg.len_hi, rng);
        for (Param* p : trainable) p->grad.fill(0.0f);

        double total_acc = 0, ang_acc = 0, reg_acc = 0;
        for (int b = 0; b < cfg.batch; ++b) {
            TrainSample s = draw_sample(corpus, cfg, len, rng);
            if (s.valid.count() == 0) continue;
            Tensor z_c;
            {
                Tape enc;
                z_c = enc.val(vae.encode_graph(enc, make_constant(enc, s.rgb_pm1_fchw)));
            }

            Tape t;
            DenoiseGraph g = one_step_predict_graph(unet, t, z_c, cfg.sigma_star, nullptr, cfg.pre,
                                                    cfg.use_sfr ? std::optional<BlockId>(cfg.tap) : std::nullopt);
            Var decoded = vae.decode_graph(t, g.denoised);       // [f,3,H,W]
            Var pred = permute(decoded, {0, 2, 3, 1});           // [f,H,W,3]
            Var ang = angular_loss_graph(t, pred, s.normals_fhwc, s.valid);
            Var loss = ang;
            float reg_val = 0.0f;
            if (cfg.use_sfr) {
                auto [gh, gw] = tap_grid(unet, cfg.tap, z_c.dim(2), z_c.dim(3));
                Tensor semf = semantic_targets(sem, cfg, s, gh, gw);
                Var projected = proj->project_graph(t, g.tap);
                Var reg = reg_loss_graph(t, projected, semf);
                reg_val = t.val(reg)[0];
                loss = add(loss, scale(reg, cfg.reg_weight));
            }
            float ang_val = t.val(ang)[0];
            float total = t.val(loss)[0];
            if (!std::isfinite(total))
                throw TrainingError("stage-2 loss is not finite (seed " + std::to_string(cfg.seed) + ")", step);
            total_acc += total;
            ang_acc += ang_val;
            reg_acc += reg_val;
            t.backward(scale(loss, 1.0f / (float)cfg.batch));
        }
        clip_global_norm(trainable, cfg.grad_clip);
        float lr = lr_at(cfg.schedule, step + 1);
        opt.step(trainable, lr);
        if (unet.params.checksum(ParamTag::Temporal) != temporal_before)
            throw TrainingError("temporal parameter changed during stage 2", step);
        res.log.push_back({(float)(total_acc / cfg.batch), (float)(ang_acc / cfg.batch), (float)(reg_acc / cfg.batch),
                           lr, cfg.sigma_star});
        csv.line(step, res.log.back()[0], res.log.back()[1], res.log.back()[2], lr, cfg.sigma_star);
    }

    if (!cfg.out_dir.empty()) {
        res.ckpt_dir = (fs::path(cfg.out_dir) / "ckpt").string();
        nlohmann::json meta{{"stage", 2},        {"step", cfg.steps},          {"config_hash", cfg.config_hash},
                            {"seed", cfg.seed},  {"data_hash", cfg.data_hash}, {"tap", block_name(cfg.tap)},
                            {"sfr", cfg.use_sfr}};
        save_stage_checkpoint(vae, unet, cfg.use_sfr ? proj : nullptr, res.ckpt_dir, meta);
        write_run_manifest(cfg, res.ckpt_dir, "loss_stage2.csv");
    }
    return res;
}

HoldoutMetrics eval_holdout(const Vae& vae, const DenoiserUnet& unet, const LoadedCorpus& corpus,
                            const InferenceConfig& icfg, const Preconditioner& pre, bool with_per_frame) {
    if (corpus.holdout_ids.empty()) throw ConfigError("eval_holdout: no held-out clips");
    std::vector<float> all_errs;
    double flicker_w = 0, flicker_f = 0;
    for (int id : corpus.holdout_ids) {
        const ClipData& clip = corpus.clips[(size_t)id];
        NormalSequence pred = estimate_normals(vae, unet, clip.video, icfg, pre);
        Mask joint;
        Tensor err = angular_error_map(pred, clip.normals, &joint);
        for (long long p = 0; p < err.size(); ++p)
            if (joint.get(p)) all_errs.push_back(err[p]);
        flicker_w += mean_flicker(pred);
        if (with_per_frame) {
            // per-frame (F=1) inference over the same clip
            int F = clip.video.frames.dim(0);
            NormalSequence pf;
            pf.normals = Tensor(clip.normals.normals.shape());
            pf.valid = Mask({F, clip.video.frames.dim(1), clip.video.frames.dim(2)}, true);
            for (int f = 0; f < F; ++f) {
                VideoClip one = clip_window(clip.video, f, 1);
                InferenceConfig single = icfg;
                single.window = 2;  // F=1 < window: single direct pass
                NormalSequence nf = estimate_normals(vae, unet, one, single, pre);
                std::copy(nf.normals.data(), nf.normals.data() + nf.normals.size(),
                          pf.normals.data() + (long long)f * nf.normals.size());
            }
            flicker_f += mean_flicker(pf);
        }
    }
    HoldoutMetrics m;
    Tensor flat({(int)all_errs.size()});
    std::copy(all_errs.begin(), all_errs.end(), flat.data());
    m.summary = summarize(flat, Mask({(int)all_errs.size()}, true));
    m.flicker_windowed = flicker_w / (double)corpus.holdout_ids.size();
    m.flicker_per_frame = with_per_frame ? flicker_f / (double)corpus.holdout_ids.size() : 0.0;
    return m;
}

}  // namespace ncast
