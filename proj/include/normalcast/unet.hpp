#pragma once

#include <optional>
#include <string>
#include <vector>

#include "normalcast/nn.hpp"

namespace ncast {

enum class BlockId { Down0, Down1, Down2, Down3, Mid, Up0, Up1, Up2, Up3 };

const char* block_name(BlockId b);
BlockId parse_block(const std::string& name);
// The 7 tap locations of the ablation sweep, Down1..Up2.
std::vector<BlockId> ablation_blocks();

struct UnetConfig {
    int latent_channels = 4;  // C; the first conv consumes 2C (noisy + condition)
    int base = 32;            // width at latent resolution, doubling per downsample
    int emb_dim = 128;        // noise embedding width
    int gn_groups = 8;
    bool temporal_identity = false;  // test hook: bypass temporal layers entirely
};

// EDM-style input/output scaling; the raw network below is wrapped by
// diffusion::denoiser_forward which applies these.
struct PrecondCoeffs {
    float c_skip = 0, c_out = 0, c_in = 0, c_noise = 0;
};

struct ResBlock {
    NormLayer n1, n2;
    Conv2dLayer c1, c2, skip;
    LinearLayer emb;
    bool has_skip = false;
    int groups = 8;
};

// Spatial residual conv blocks with self-attention at the two coarsest
// resolutions, temporal attention over the frame axis in every block.
// Spatial layers never mix frames; temporal layers mix only frames.
class DenoiserUnet {
public:
    DenoiserUnet(UnetConfig cfg, uint64_t seed);

    UnetConfig cfg;
    ParamStore params;

    struct RawForward {
        Var out;
        Var tap;  // invalid Var when no tap requested
    };
    // x: [F,2C,h,w] already c_in-scaled; c_noise conditions every res block.
    RawForward raw_forward(Tape& t, Var x, float c_noise, std::optional<BlockId> tap) const;

    // (spatial, temporal) partition of all parameters; disjoint and exhaustive.
    std::pair<std::vector<Param*>, std::vector<Param*>> split_params();

    int tap_channels(BlockId b) const;
    // spatial downsample factor of a block's output relative to the latent
    int tap_scale(BlockId b) const;

    void save(const std::string& dir, const nlohmann::json& extra_meta = {}) const;
    static DenoiserUnet load(const std::string& dir);

private:
    Var res(Tape& t, const ResBlock& r, Var x, Var emb) const;

    Conv2dLayer stem_;
    Mlp noise_mlp_;
    ResBlock rb_[10];  // d0,d1,d2,d3,mid1,mid2,u0,u1,u2,u3
    AttentionLayer sattn_[8];   // d1,d2,d3,mid,u0,u1,u2 (+1 spare)
    AttentionLayer tattn_[10];  // per block + mid
    Conv2dLayer ds0_, ds1_;
    Conv2dLayer us1_, us2_;
    NormLayer out_norm_;
    Conv2dLayer out_conv_;
};

}  // namespace ncast
