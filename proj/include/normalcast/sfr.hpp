#pragma once

#include <string>

#include "normalcast/nn.hpp"
#include "normalcast/scene.hpp"
#include "normalcast/schedule.hpp"

namespace ncast {

// Per-frame patch feature grid; feats is [F, N, D] with N = gh*gw.
struct PatchFeatures {
    Tensor feats;
    int gh = 0, gw = 0;
};

struct SemanticEncoderConfig {
    int patch = 8;  // total stride; one patch feature per patch x patch pixels
    int dim = 64;   // D
    int base = 16;
    int gn_groups = 8;
};

// Frozen patch-feature extractor standing in for a large pretrained
// encoder: pretrained here on the synthetic RGB corpus with a masked
// reconstruction objective, then never updated again.
class SemanticEncoder {
public:
    SemanticEncoder(SemanticEncoderConfig cfg, uint64_t seed);

    SemanticEncoderConfig cfg;
    ParamStore params;

    Var encode_graph(Tape& t, Var x) const;  // [F,3,H,W] -> [F,D,gh,gw]
    // Deterministic, gradient-free feature extraction from [-1,1] frames.
    Tensor encode(const Tensor& frames_fchw) const;  // [F,N,D]

    void save(const std::string& dir, const nlohmann::json& extra = {}) const;
    static SemanticEncoder load(const std::string& dir);

private:
    Conv2dLayer c1_, c2_, c3_;
    NormLayer n1_, n2_;
};

struct SemanticPretrainConfig {
    long long steps = 400;
    int batch_frames = 4;
    OptimizerSchedule schedule{3e-4f, 50, 10000.0f};
    float mask_fraction = 0.5f;
    float grad_clip = 1.0f;
    uint64_t seed = 0;
};

// Masked patch reconstruction: zero a random patch subset of the input,
// encode, reconstruct with a throwaway decoder, L2 on the masked pixels.
std::vector<float> pretrain_semantic_encoder(SemanticEncoder& enc,
                                             const std::function<Tensor(Rng&)>& sample_frame_chw,
                                             const SemanticPretrainConfig& cfg);

// Resizes frames so the encoder's patch grid matches (gh, gw), then encodes.
// frames: [F,H,W,3] RGB in [0,1].
PatchFeatures encode_semantic(const SemanticEncoder& enc, const Tensor& frames_fhwc, int gh, int gw);

// Three-layer perceptron mapping tapped U-Net channels to the semantic
// feature space; trainable in both stages.
class Projector {
public:
    Projector(int in_dim, int hidden, int out_dim, uint64_t seed);

    int in_dim, hidden, out_dim;
    ParamStore params;
    Mlp mlp;

    // tapped: [F,Cl,hl,wl] -> [F,N,D]
    Var project_graph(Tape& t, Var tapped) const;
    // public tensor form, tapped as [F,hl,wl,Cl]
    PatchFeatures project(const Tensor& tapped_fhwc) const;

    void save(const std::string& dir, const nlohmann::json& extra = {}) const;
    static Projector load(const std::string& dir);
};

// Negative mean patch-wise cosine similarity between projected and
// semantic features. Range [-1,1]; all-zero features degrade to 0 and set
// the warning flag.
float reg_loss(const PatchFeatures& semantic, const PatchFeatures& projected, bool* degenerate_warning = nullptr);
Var reg_loss_graph(Tape& t, Var projected, const Tensor& semantic);

}  // namespace ncast
