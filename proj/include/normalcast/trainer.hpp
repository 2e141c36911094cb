#pragma once

#include <array>
#include <map>
#include <string>

#include "normalcast/dataset.hpp"
#include "normalcast/diffusion.hpp"
#include "normalcast/evalkit.hpp"
#include "normalcast/inference.hpp"
#include "normalcast/sfr.hpp"
#include "normalcast/vae.hpp"

namespace ncast {

// Uniform integer in [lo,hi] inclusive.
int clip_length_sampler(int lo, int hi, Rng& rng);

struct LoadedCorpus {
    std::vector<ClipData> clips;
    std::vector<int> train_ids;
    std::vector<int> holdout_ids;
    DatasetManifest train_manifest;  // entries aligned with train_ids
    uint64_t data_hash = 0;
};

// Loads every clip directory under data_dir (sorted by name); the last
// `holdout_clips` become the held-out split. Respects manifest.json repeat
// counts when present.
LoadedCorpus load_corpus_dir(const std::string& data_dir, int holdout_clips);

struct StageRunConfig {
    int stage = 1;
    long long steps = 1000;
    OptimizerSchedule schedule{1e-4f, 100, 10000.0f};
    int len_lo = 1, len_hi = 14;  // stage 1: [1,14]; stage 2: [1,4]
    int batch = 4;
    float reg_weight = 1.0f;
    bool use_sfr = true;
    BlockId tap = BlockId::Up1;
    int short_edge = 64;
    int size_multiple = 32;
    float grad_clip = 1.0f;
    float weight_decay = 1e-4f;
    bool augment = true;
    AugmentationConfig aug;
    NoiseSamplerConfig noise;
    Preconditioner pre;
    float sigma_star = 700.0f;  // stage-2 prediction noise level
    uint64_t seed = 0;
    long long log_every = 50;
    std::string out_dir;  // when set: loss CSV, run manifest, checkpoint
    std::string config_hash;
    uint64_t data_hash = 0;
    // Precomputed per-clip patch features keyed by corpus clip index,
    // each [F,gh,gw,D]. Replaces the semantic encoder; requires
    // augmentation off so stored features still describe the frames.
    const std::map<int, Tensor>* external_features = nullptr;
};

struct StageResult {
    // per step: total, dsm-or-angular, reg, lr, sigma
    std::vector<std::array<float, 5>> log;
    std::string ckpt_dir;
};

// Stage 1: full U-Net + projector on L_DSM + reg_weight*L_reg in latent
// space; VAE and semantic encoder frozen.
StageResult train_stage1(Vae& vae, DenoiserUnet& unet, SemanticEncoder* sem, Projector* proj,
                         const LoadedCorpus& corpus, const StageRunConfig& cfg);

// Stage 2: spatial layers + projector only, through the frozen (but
// differentiable) decoder on L_angular + reg_weight*L_reg; temporal
// parameters are checksum-verified unchanged every step.
StageResult train_stage2(Vae& vae, DenoiserUnet& unet, SemanticEncoder* sem, Projector* proj,
                         const LoadedCorpus& corpus, const StageRunConfig& cfg);

// Self-contained checkpoint: vae/, unet/, projector/ (optional) + ckpt.json.
void save_stage_checkpoint(const Vae& vae, const DenoiserUnet& unet, const Projector* proj, const std::string& dir,
                           const nlohmann::json& meta);

struct HoldoutMetrics {
    EvalSummary summary;
    double flicker_windowed = 0.0;
    double flicker_per_frame = 0.0;
};
HoldoutMetrics eval_holdout(const Vae& vae, const DenoiserUnet& unet, const LoadedCorpus& corpus,
                            const InferenceConfig& icfg, const Preconditioner& pre, bool with_per_frame = false);

}  // namespace ncast
