#include "normalcast/nn.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace ncast {

Param& ParamStore::add(const std::string& name, Tensor init, ParamTag tag) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    params_.push_back(Param{name, std::move(init), Tensor(), Tensor(), Tensor(), tag, true});
    Param& p = params_.back();
    p.grad = Tensor(p.value.shape());
    index_[name] = &p;
    return p;
}

Param& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return *it->second;
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return *it->second;
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<Param*> ParamStore::with_tag(ParamTag tag) {
    std::vector<Param*> out;
    for (auto& p : params_)
        if (p.tag == tag) out.push_back(&p);
    return out;
}

std::vector<const Param*> ParamStore::all_const() const {
    std::vector<const Param*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0f);
}

void ParamStore::set_requires_grad(bool v) {
    for (auto& p : params_) p.requires_grad = v;
}

void ParamStore::set_requires_grad(ParamTag tag, bool v) {
    for (auto& p : params_)
        if (p.tag == tag) p.requires_grad = v;
}

void ParamStore::reset_moments() {
    for (auto& p : params_) {
        p.m = Tensor();
        p.v = Tensor();
    }
}

long long ParamStore::total_size() const {
    long long n = 0;
    for (auto& p : params_) n += p.value.size();
    return n;
}

namespace {
std::vector<const Param*> sorted_params(const std::deque<Param>& params) {
    std::vector<const Param*> v;
    for (auto& p : params) v.push_back(&p);
    std::sort(v.begin(), v.end(), [](const Param* a, const Param* b) { return a->name < b->name; });
    return v;
}
}  // namespace

uint64_t ParamStore::checksum() const {
    uint64_t h = 14695981039346656037ULL;
    for (const Param* p : sorted_params(params_)) {
        uint64_t c = bytes_checksum(p->value.data(), (size_t)p->value.size());
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t ParamStore::checksum(ParamTag tag) const {
    uint64_t h = 14695981039346656037ULL;
    for (const Param* p : sorted_params(params_)) {
        if (p->tag != tag) continue;
        uint64_t c = bytes_checksum(p->value.data(), (size_t)p->value.size());
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<std::pair<std::string, uint64_t>> ParamStore::per_param_checksums(std::optional<ParamTag> tag) const {
    std::vector<std::pair<std::string, uint64_t>> out;
    for (const Param* p : sorted_params(params_)) {
        if (tag && p->tag != *tag) continue;
        out.emplace_back(p->name, bytes_checksum(p->value.data(), (size_t)p->value.size()));
    }
    return out;
}

Var pvar(Tape& t, Param& p) {
    if (p.requires_grad) return make_leaf(t, p.value, &p.grad);
    return make_constant(t, p.value);
}

Var Conv2dLayer::operator()(Tape& t, Var x) const {
    return conv2d(x, pvar(t, *w), pvar(t, *b), stride, pad);
}

Var LinearLayer::operator()(Tape& t, Var x) const {
    return linear(x, pvar(t, *w), pvar(t, *b));
}

Var apply_group_norm(Tape& t, const NormLayer& n, Var x) {
    return group_norm(x, pvar(t, *n.gamma), pvar(t, *n.beta), n.groups);
}

Var apply_layer_norm(Tape& t, const NormLayer& n, Var x) {
    return layer_norm(x, pvar(t, *n.gamma), pvar(t, *n.beta));
}

Var AttentionLayer::operator()(Tape& t, Var x) const {
    const Tensor& xv = t.val(x);
    if (xv.rank() != 3) throw ShapeError("attention: expects [B,T,C] tokens");
    int B = xv.dim(0), T = xv.dim(1), C = xv.dim(2);
    if (C % heads != 0) throw ShapeError("attention: C not divisible by heads");
    int dh = C / heads;
    Var xn = apply_layer_norm(t, norm, x);
    auto split = [&](Var v, bool transpose_kd) {
        Var r = reshape(v, {B, T, heads, dh});
        r = permute(r, transpose_kd ? std::vector<int>{0, 2, 3, 1} : std::vector<int>{0, 2, 1, 3});
        return reshape(r, transpose_kd ? Shape{B * heads, dh, T} : Shape{B * heads, T, dh});
    };
    Var qs = split(q(t, xn), false);
    Var ks = split(k(t, xn), true);
    Var vs = split(v(t, xn), false);
    Var att = softmax_lastdim(scale(bmm(qs, ks), 1.0f / std::sqrt((float)dh)));
    Var ctx = bmm(att, vs);  // [B*heads, T, dh]
    ctx = reshape(ctx, {B, heads, T, dh});
    ctx = permute(ctx, {0, 2, 1, 3});
    ctx = reshape(ctx, {B, T, C});
    return add(x, o(t, ctx));
}

Var Mlp::operator()(Tape& t, Var x) const {
    Var h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
        h = layers[i](t, h);
        if (i + 1 < layers.size() && !identity_activation) h = silu(h);
    }
    return h;
}

namespace {
Tensor randn_tensor(Shape s, Rng& rng, float std) {
    Tensor t(std::move(s));
    for (long long i = 0; i < t.size(); ++i) t[i] = (float)(rng.normal() * std);
    return t;
}
}  // namespace

Conv2dLayer make_conv(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride, int pad,
                      ParamTag tag, Rng& rng, float init_scale) {
    float std = init_scale * std::sqrt(2.0f / (float)(cin * k * k));
    Conv2dLayer l;
    l.w = &ps.add(name + ".w", randn_tensor({cout, cin, k, k}, rng, std), tag);
    l.b = &ps.add(name + ".b", Tensor({cout}), tag);
    l.stride = stride;
    l.pad = pad;
    return l;
}

LinearLayer make_linear(ParamStore& ps, const std::string& name, int in, int out, ParamTag tag, Rng& rng,
                        float init_scale) {
    float std = init_scale * std::sqrt(2.0f / (float)in);
    LinearLayer l;
    l.w = &ps.add(name + ".w", randn_tensor({in, out}, rng, std), tag);
    l.b = &ps.add(name + ".b", Tensor({out}), tag);
    return l;
}

NormLayer make_norm(ParamStore& ps, const std::string& name, int c, int groups, ParamTag tag) {
    NormLayer n;
    n.gamma = &ps.add(name + ".g", Tensor({c}, 1.0f), tag);
    n.beta = &ps.add(name + ".b", Tensor({c}), tag);
    n.groups = groups;
    return n;
}

AttentionLayer make_attention(ParamStore& ps, const std::string& name, int c, int heads, ParamTag tag, Rng& rng) {
    AttentionLayer a;
    a.norm = make_norm(ps, name + ".norm", c, 1, tag);
    a.q = make_linear(ps, name + ".q", c, c, tag, rng);
    a.k = make_linear(ps, name + ".k", c, c, tag, rng);
    a.v = make_linear(ps, name + ".v", c, c, tag, rng);
    a.o = make_linear(ps, name + ".o", c, c, tag, rng, 0.0f);  // residual starts as identity
    a.heads = heads;
    return a;
}

Mlp make_mlp(ParamStore& ps, const std::string& name, const std::vector<int>& dims, ParamTag tag, Rng& rng) {
    if (dims.size() < 2) throw ConfigError("mlp needs at least input and output dims");
    Mlp m;
    for (size_t i = 0; i + 1 < dims.size(); ++i)
        m.layers.push_back(make_linear(ps, name + ".l" + std::to_string(i), dims[i], dims[i + 1], tag, rng));
    return m;
}

Tensor sinusoidal_embedding(float value, int dim) {
    if (dim % 2 != 0) throw ShapeError("sinusoidal_embedding: dim must be even");
    int half = dim / 2;
    Tensor out({dim});
    for (int i = 0; i < half; ++i) {
        float freq = std::exp(-std::log(10000.0f) * (float)i / (float)(half > 1 ? half - 1 : 1));
        out[i] = std::sin(value * freq);
        out[half + i] = std::cos(value * freq);
    }
    return out;
}

void AdamW::step(const std::vector<Param*>& params, float lr) {
    ++t;
    float bc1 = 1.0f - std::pow(beta1, (float)t);
    float bc2 = 1.0f - std::pow(beta2, (float)t);
    for (Param* p : params) {
        if (p->m.empty()) {
            p->m = Tensor(p->value.shape());
            p->v = Tensor(p->value.shape());
        }
        float* w = p->value.data();
        const float* g = p->grad.data();
        float* m = p->m.data();
        float* v = p->v.data();
        for (long long i = 0; i < p->value.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
            float mh = m[i] / bc1;
            float vh = v[i] / bc2;
            w[i] -= lr * (mh / (std::sqrt(vh) + eps) + weight_decay * w[i]);
        }
    }
}

float clip_global_norm(const std::vector<Param*>& params, float max_norm) {
    double sq = 0.0;
    for (Param* p : params)
        for (long long i = 0; i < p->grad.size(); ++i) sq += (double)p->grad[i] * p->grad[i];
    float norm = (float)std::sqrt(sq);
    if (norm > max_norm && norm > 0.0f) {
        float s = max_norm / norm;
        for (Param* p : params)
            for (long long i = 0; i < p->grad.size(); ++i) p->grad[i] *= s;
    }
    return norm;
}

void save_params(const ParamStore& ps, const std::string& dir, const nlohmann::json& meta) {
    fs::path target(dir);
    fs::path tmp(dir + ".tmp");
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    nlohmann::json index;
    index["meta"] = meta;
    nlohmann::json plist = nlohmann::json::object();
    for (const Param* p : ps.all_const()) {
        ntf_write_f32((tmp / (p->name + ".ntf")).string(), p->value);
        plist[p->name] = {{"tag", p->tag == ParamTag::Temporal ? "temporal" : "spatial"},
                          {"size", p->value.size()}};
    }
    index["params"] = plist;
    std::ofstream f(tmp / "params.json");
    f << index.dump(2) << "\n";
    f.close();
    fs::remove_all(target);
    fs::rename(tmp, target);
}

nlohmann::json read_checkpoint_meta(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "params.json");
    if (!f) throw IoError("missing checkpoint index: " + dir + "/params.json");
    nlohmann::json index;
    f >> index;
    return index.at("meta");
}

nlohmann::json load_params(ParamStore& ps, const std::string& dir) {
    std::ifstream f(fs::path(dir) / "params.json");
    if (!f) throw IoError("missing checkpoint index: " + dir + "/params.json");
    nlohmann::json index;
    f >> index;
    for (auto& [name, info] : index.at("params").items()) {
        Tensor t = ntf_read_f32((fs::path(dir) / (name + ".ntf")).string());
        Param& p = ps.at(name);
        if (t.shape() != p.value.shape())
            throw ShapeError("checkpoint shape mismatch for " + name + ": " + shape_str(t.shape()) + " vs " +
                             shape_str(p.value.shape()));
        p.value = std::move(t);
    }
    return index.at("meta");
}

}  // namespace ncast
