#pragma once

#include <string>
#include <vector>

#include "normalcast/nn.hpp"
#include "normalcast/scene.hpp"
#include "normalcast/schedule.hpp"

namespace ncast {

// Per-frame latents in public layout [F,h,w,C].
struct LatentSequence {
    Tensor latents;
    int downsample = 8;
    int channels = 4;
    int frames() const { return latents.dim(0); }
};

struct VaeConfig {
    int base = 16;            // encoder width at full resolution
    int latent_channels = 4;  // C
    int downsample = 8;       // s (three stride-2 stages)
    int gn_groups = 8;
};

// Spatial-only convolutional VAE; frames never mix. Encoding is
// deterministic (posterior mean); sampling happens only inside training.
class Vae {
public:
    Vae(VaeConfig cfg, uint64_t seed);

    VaeConfig cfg;
    ParamStore params;

    // graph builders on [F,3,H,W] / [F,C,h,w] NCHW vars
    Var encode_moments_graph(Tape& t, Var x) const;  // [F,2C,h,w]
    Var encode_graph(Tape& t, Var x) const;          // mean only
    Var decode_graph(Tape& t, Var z) const;          // tanh output in (-1,1)

    // public tensor API; input/output [F,H,W,3] in [-1,1]
    LatentSequence encode(const Tensor& fhwc) const;
    Tensor decode(const LatentSequence& z) const;

    std::vector<Param*> encoder_params();
    std::vector<Param*> decoder_params();

    void save(const std::string& dir, const nlohmann::json& extra_meta = {}) const;
    static Vae load(const std::string& dir);

private:
    // encoder
    Conv2dLayer e_stem_, e_down1_, e_down2_, e_down3_, e_out_;
    NormLayer e_n0_, e_n1_, e_n2_, e_n3_;
    // decoder
    Conv2dLayer d_in_, d_up1_, d_up2_, d_up3_, d_out_;
    NormLayer d_n0_, d_n1_, d_n2_, d_n3_;
};

struct VaeTrainConfig {
    long long steps = 1500;
    int batch_frames = 4;
    OptimizerSchedule schedule{2e-4f, 100, 10000.0f};
    float kl_weight = 1e-6f;
    float grad_clip = 1.0f;
    uint64_t seed = 0;
    long long log_every = 100;
};

// Frame sampler contract: returns [3,H,W] CHW frames already in [-1,1],
// with the valid mask (all-true for RGB frames).
struct TrainFrame {
    Tensor chw;
    Mask valid;  // [H,W]
};
using FrameSampler = std::function<TrainFrame(Rng&)>;

// L2 + kl_weight*KL on RGB frames. Returns the per-step loss log.
std::vector<float> train_vae(Vae& vae, const FrameSampler& sample, const VaeTrainConfig& cfg);

// Freezes the encoder and fine-tunes the decoder on normal frames with
// per-pixel angular loss plus 0.1*L2.
std::vector<float> finetune_decoder(Vae& vae, const FrameSampler& sample_normals, const VaeTrainConfig& cfg);

struct ReconMetrics {
    double mean_angular_deg = 0.0;
    double psnr_db = 0.0;  // peak 2 over the [-1,1] range, capped at 99
};

// x, xhat: [F,H,W,3] in [-1,1]; angular error over valid pixels after
// renormalizing both sides.
ReconMetrics reconstruction_metrics(const Tensor& x, const Tensor& xhat, const Mask& valid);

}  // namespace ncast
