#include "normalcast/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

namespace fs = std::filesystem;

namespace ncast {

namespace {

void check_keys(const nlohmann::json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config section " + where + " must be an object");
    for (auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError("unknown config key: " + where + "." + k);
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig default_config() { return PipelineConfig{}; }

PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }

    PipelineConfig c = default_config();
    check_keys(j, "<root>",
               {"seed", "out_root", "data", "vae", "unet", "diffusion", "sfr", "trainer", "inference", "eval"});
    get_if(j, "seed", c.seed);
    get_if(j, "out_root", c.out_root);

    if (j.contains("data")) {
        const auto& d = j["data"];
        check_keys(d, "data", {"dir", "holdout_clips", "augment", "hflip", "crop", "color", "grayscale"});
        get_if(d, "dir", c.data_dir);
        get_if(d, "holdout_clips", c.holdout_clips);
        get_if(d, "augment", c.augment);
        get_if(d, "hflip", c.aug.hflip);
        get_if(d, "crop", c.aug.crop);
        get_if(d, "color", c.aug.color);
        get_if(d, "grayscale", c.aug.grayscale);
        c.aug.validate();
    }
    if (j.contains("vae")) {
        const auto& v = j["vae"];
        check_keys(v, "vae", {"base", "latent_channels", "downsample", "gn_groups", "train", "finetune"});
        get_if(v, "base", c.vae_arch.base);
        get_if(v, "latent_channels", c.vae_arch.latent_channels);
        get_if(v, "downsample", c.vae_arch.downsample);
        get_if(v, "gn_groups", c.vae_arch.gn_groups);
        auto stage = [&](const char* key, VaeTrainConfig& t) {
            if (!v.contains(key)) return;
            const auto& s = v[key];
            check_keys(s, std::string("vae.") + key,
                       {"steps", "batch_frames", "lr", "warmup", "half_life", "kl_weight", "grad_clip"});
            get_if(s, "steps", t.steps);
            get_if(s, "batch_frames", t.batch_frames);
            get_if(s, "lr", t.schedule.base_lr);
            get_if(s, "warmup", t.schedule.warmup);
            get_if(s, "half_life", t.schedule.half_life);
            get_if(s, "kl_weight", t.kl_weight);
            get_if(s, "grad_clip", t.grad_clip);
        };
        stage("train", c.vae_train);
        stage("finetune", c.vae_finetune);
    }
    if (j.contains("unet")) {
        const auto& u = j["unet"];
        check_keys(u, "unet", {"base", "emb_dim", "gn_groups"});
        get_if(u, "base", c.unet_arch.base);
        get_if(u, "emb_dim", c.unet_arch.emb_dim);
        get_if(u, "gn_groups", c.unet_arch.gn_groups);
    }
    if (j.contains("diffusion")) {
        const auto& d = j["diffusion"];
        check_keys(d, "diffusion",
                   {"sigma_fixed", "sigma_fixed_prob", "sigma_lognormal_loc", "sigma_lognormal_scale", "sigma_data",
                    "inference_steps", "inference_sigma"});
        get_if(d, "sigma_fixed", c.noise.fixed_value);
        get_if(d, "sigma_fixed_prob", c.noise.fixed_prob);
        get_if(d, "sigma_lognormal_loc", c.noise.lognormal_loc);
        get_if(d, "sigma_lognormal_scale", c.noise.lognormal_scale);
        get_if(d, "sigma_data", c.sigma_data);
        get_if(d, "inference_steps", c.inference_steps);
        get_if(d, "inference_sigma", c.inference_sigma);
    }
    if (j.contains("sfr")) {
        const auto& s = j["sfr"];
        check_keys(s, "sfr",
                   {"enabled", "tap_block", "reg_weight", "projector_hidden", "dim", "patch", "base", "gn_groups",
                    "pretrain_steps", "pretrain_batch_frames", "pretrain_lr", "mask_fraction", "features_dir"});
        get_if(s, "enabled", c.sfr_enabled);
        get_if(s, "tap_block", c.tap_block);
        parse_block(c.tap_block);  // validate now
        get_if(s, "reg_weight", c.reg_weight);
        get_if(s, "projector_hidden", c.projector_hidden);
        get_if(s, "dim", c.sem_arch.dim);
        get_if(s, "patch", c.sem_arch.patch);
        get_if(s, "base", c.sem_arch.base);
        get_if(s, "gn_groups", c.sem_arch.gn_groups);
        get_if(s, "pretrain_steps", c.sem_pretrain.steps);
        get_if(s, "pretrain_batch_frames", c.sem_pretrain.batch_frames);
        get_if(s, "pretrain_lr", c.sem_pretrain.schedule.base_lr);
        get_if(s, "mask_fraction", c.sem_pretrain.mask_fraction);
        get_if(s, "features_dir", c.semantic_features_dir);
    }
    if (j.contains("trainer")) {
        const auto& t = j["trainer"];
        check_keys(t, "trainer",
                   {"stage1", "stage2", "grad_clip", "weight_decay", "short_edge", "size_multiple"});
        auto stage = [&](const char* key, StageSection& s) {
            if (!t.contains(key)) return;
            const auto& ts = t[key];
            check_keys(ts, std::string("trainer.") + key,
                       {"steps", "lr", "batch", "len_lo", "len_hi", "warmup", "half_life", "log_every"});
            get_if(ts, "steps", s.steps);
            get_if(ts, "lr", s.lr);
            get_if(ts, "batch", s.batch);
            get_if(ts, "len_lo", s.len_lo);
            get_if(ts, "len_hi", s.len_hi);
            get_if(ts, "warmup", s.warmup);
            get_if(ts, "half_life", s.half_life);
            get_if(ts, "log_every", s.log_every);
        };
        stage("stage1", c.stage1);
        stage("stage2", c.stage2);
        get_if(t, "grad_clip", c.grad_clip);
        get_if(t, "weight_decay", c.weight_decay);
        get_if(t, "short_edge", c.short_edge);
        get_if(t, "size_multiple", c.size_multiple);
    }
    if (j.contains("inference")) {
        const auto& i = j["inference"];
        check_keys(i, "inference", {"window", "overlap"});
        get_if(i, "window", c.window);
        get_if(i, "overlap", c.overlap);
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        check_keys(e, "eval", {"x0"});
        get_if(e, "x0", c.profile_x0);
    }

    if (const char* env = std::getenv("NC_SEED")) c.seed = std::strtoull(env, nullptr, 10);
    c.config_hash = json_hash(config_to_json(c));
    return c;
}

nlohmann::json config_to_json(const PipelineConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["out_root"] = c.out_root;
    j["data"] = {{"dir", c.data_dir},   {"holdout_clips", c.holdout_clips}, {"augment", c.augment},
                 {"hflip", c.aug.hflip}, {"crop", c.aug.crop},              {"color", c.aug.color},
                 {"grayscale", c.aug.grayscale}};
    j["vae"] = {{"base", c.vae_arch.base},
                {"latent_channels", c.vae_arch.latent_channels},
                {"downsample", c.vae_arch.downsample},
                {"gn_groups", c.vae_arch.gn_groups},
                {"train",
                 {{"steps", c.vae_train.steps},
                  {"batch_frames", c.vae_train.batch_frames},
                  {"lr", c.vae_train.schedule.base_lr},
                  {"warmup", c.vae_train.schedule.warmup},
                  {"half_life", c.vae_train.schedule.half_life},
                  {"kl_weight", c.vae_train.kl_weight},
                  {"grad_clip", c.vae_train.grad_clip}}},
                {"finetune",
                 {{"steps", c.vae_finetune.steps},
                  {"batch_frames", c.vae_finetune.batch_frames},
                  {"lr", c.vae_finetune.schedule.base_lr},
                  {"warmup", c.vae_finetune.schedule.warmup},
                  {"half_life", c.vae_finetune.schedule.half_life},
                  {"kl_weight", c.vae_finetune.kl_weight},
                  {"grad_clip", c.vae_finetune.grad_clip}}}};
    j["unet"] = {{"base", c.unet_arch.base}, {"emb_dim", c.unet_arch.emb_dim}, {"gn_groups", c.unet_arch.gn_groups}};
    j["diffusion"] = {{"sigma_fixed", c.noise.fixed_value},
                      {"sigma_fixed_prob", c.noise.fixed_prob},
                      {"sigma_lognormal_loc", c.noise.lognormal_loc},
                      {"sigma_lognormal_scale", c.noise.lognormal_scale},
                      {"sigma_data", c.sigma_data},
                      {"inference_steps", c.inference_steps},
                      {"inference_sigma", c.inference_sigma}};
    j["sfr"] = {{"enabled", c.sfr_enabled},
                {"tap_block", c.tap_block},
                {"reg_weight", c.reg_weight},
                {"projector_hidden", c.projector_hidden},
                {"dim", c.sem_arch.dim},
                {"patch", c.sem_arch.patch},
                {"base", c.sem_arch.base},
                {"gn_groups", c.sem_arch.gn_groups},
                {"pretrain_steps", c.sem_pretrain.steps},
                {"pretrain_batch_frames", c.sem_pretrain.batch_frames},
                {"pretrain_lr", c.sem_pretrain.schedule.base_lr},
                {"mask_fraction", c.sem_pretrain.mask_fraction},
                {"features_dir", c.semantic_features_dir}};
    auto stage = [](const StageSection& s) {
        return nlohmann::json{{"steps", s.steps},   {"lr", s.lr},
                              {"batch", s.batch},   {"len_lo", s.len_lo},
                              {"len_hi", s.len_hi}, {"warmup", s.warmup},
                              {"half_life", s.half_life}, {"log_every", s.log_every}};
    };
    j["trainer"] = {{"stage1", stage(c.stage1)},
                    {"stage2", stage(c.stage2)},
                    {"grad_clip", c.grad_clip},
                    {"weight_decay", c.weight_decay},
                    {"short_edge", c.short_edge},
                    {"size_multiple", c.size_multiple}};
    j["inference"] = {{"window", c.window}, {"overlap", c.overlap}};
    j["eval"] = {{"x0", c.profile_x0}};
    return j;
}

std::string json_hash(const nlohmann::json& j) {
    std::string s = j.dump();
    uint64_t h = 14695981039346656037ULL;
    for (char ch : s) {
        h ^= (uint8_t)ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
    return std::string(buf);
}

void write_resolved_config(const PipelineConfig& c, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "resolved_config.json");
    if (!f) throw IoError("cannot write resolved config in " + out_dir);
    f << config_to_json(c).dump(2) << "\n";
}

}  // namespace ncast
