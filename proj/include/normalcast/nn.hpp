#pragma once

#include <deque>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "normalcast/autodiff.hpp"
#include "normalcast/rng.hpp"
#include "normalcast/tensor.hpp"

namespace ncast {

// Every parameter carries exactly one tag; the two-stage protocol freezes
// by tag, so getting this right is a correctness matter, not bookkeeping.
enum class ParamTag { Spatial, Temporal };

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m, v;  // optimizer moments, sized on first use
    ParamTag tag = ParamTag::Spatial;
    bool requires_grad = true;
};

class ParamStore {
public:
    Param& add(const std::string& name, Tensor init, ParamTag tag);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Param*> all();
    std::vector<Param*> with_tag(ParamTag tag);
    std::vector<const Param*> all_const() const;

    void zero_grad();
    void set_requires_grad(bool v);
    void set_requires_grad(ParamTag tag, bool v);
    void reset_moments();

    long long total_size() const;
    uint64_t checksum() const;               // all params, name-sorted
    uint64_t checksum(ParamTag tag) const;   // tag subset, name-sorted
    std::vector<std::pair<std::string, uint64_t>> per_param_checksums(std::optional<ParamTag> tag = {}) const;

private:
    std::deque<Param> params_;
    std::unordered_map<std::string, Param*> index_;
};

// Leaf when the parameter takes gradients, constant otherwise. Constant
// parameters still pass activation gradients through (frozen-but-
// differentiable layers rely on this).
Var pvar(Tape& t, Param& p);

// ---- layers ----

struct Conv2dLayer {
    Param* w = nullptr;
    Param* b = nullptr;
    int stride = 1, pad = 1;
    Var operator()(Tape& t, Var x) const;
};

struct LinearLayer {
    Param* w = nullptr;
    Param* b = nullptr;
    Var operator()(Tape& t, Var x) const;
};

struct NormLayer {
    Param* gamma = nullptr;
    Param* beta = nullptr;
    int groups = 1;  // unused for layer norm
};

Var apply_group_norm(Tape& t, const NormLayer& n, Var x);
Var apply_layer_norm(Tape& t, const NormLayer& n, Var x);

// Pre-norm residual self-attention over tokens [B,T,C].
struct AttentionLayer {
    NormLayer norm;
    LinearLayer q, k, v, o;
    int heads = 1;
    Var operator()(Tape& t, Var x) const;
};

struct Mlp {
    std::vector<LinearLayer> layers;
    bool identity_activation = false;  // test hook: bypass nonlinearity
    Var operator()(Tape& t, Var x) const;
};

Conv2dLayer make_conv(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride, int pad,
                      ParamTag tag, Rng& rng, float init_scale = 1.0f);
LinearLayer make_linear(ParamStore& ps, const std::string& name, int in, int out, ParamTag tag, Rng& rng,
                        float init_scale = 1.0f);
NormLayer make_norm(ParamStore& ps, const std::string& name, int c, int groups, ParamTag tag);
AttentionLayer make_attention(ParamStore& ps, const std::string& name, int c, int heads, ParamTag tag, Rng& rng);
Mlp make_mlp(ParamStore& ps, const std::string& name, const std::vector<int>& dims, ParamTag tag, Rng& rng);

// Sinusoidal features of a scalar (half sin, half cos, log-spaced frequencies).
Tensor sinusoidal_embedding(float value, int dim);

// ---- optimizer ----

// Adam with decoupled weight decay.
struct AdamW {
    float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
    float weight_decay = 1e-4f;
    long long t = 0;
    void step(const std::vector<Param*>& params, float lr);
};

// Scales grads so their global L2 norm is at most max_norm; returns the norm.
float clip_global_norm(const std::vector<Param*>& params, float max_norm);

// ---- checkpoints ----
// Directory of <name>.ntf tensors plus params.json carrying tags and caller
// metadata. Writes go to a temp dir that replaces the target on success.
void save_params(const ParamStore& ps, const std::string& dir, const nlohmann::json& meta);
nlohmann::json load_params(ParamStore& ps, const std::string& dir);
nlohmann::json read_checkpoint_meta(const std::string& dir);

}  // namespace ncast
