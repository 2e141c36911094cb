#pragma once

#include <functional>
#include <vector>

#include "normalcast/tensor.hpp"

namespace ncast {

class Tape;

// Handle into a Tape node. Ops below build the forward value eagerly and
// record a backward closure; Tape::backward replays them in reverse.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
public:
    struct Node {
        Tensor val;
        Tensor grad;  // allocated on first accumulation
        bool needs_grad = false;
        std::function<void(Tape&)> backward;
        Tensor* grad_sink = nullptr;  // leaf params accumulate here
    };

    int add_node(Tensor val, bool needs_grad, std::function<void(Tape&)> backward = nullptr) {
        nodes_.push_back(Node{std::move(val), Tensor(), needs_grad, std::move(backward), nullptr});
        return static_cast<int>(nodes_.size()) - 1;
    }

    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }
    const Tensor& val(Var v) const { return val(v.id); }

    bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }

    // Grad buffer, zero-initialized on first touch.
    Tensor& grad_buf(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad = Tensor(n.val.shape());
        return n.grad;
    }

    void accumulate(int id, const Tensor& g);

    // Seeds d(root)/d(root)=1 (root must be scalar) and runs the tape in
    // reverse; leaf grads are added into their sinks.
    void backward(Var root);

    size_t num_nodes() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

Var make_constant(Tape& t, Tensor v);
Var make_leaf(Tape& t, const Tensor& value, Tensor* grad_sink);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float s);
Var add_scalar(Var a, float s);
Var add_const(Var a, const Tensor& c);
Var mul_const(Var a, const Tensor& c);

Var matmul(Var a, Var b);                 // [M,K]x[K,N]
Var linear(Var x, Var w, Var b);          // x [...,K], w [K,N], b [N] (b optional: pass Var{})
Var bmm(Var a, Var b);                    // [B,M,K]x[B,K,N]
Var conv2d(Var x, Var w, Var b, int stride, int pad);  // x [N,C,H,W], w [Co,Ci,kh,kw]
Var upsample_nearest2x(Var x);            // [N,C,H,W] -> [N,C,2H,2W]
Var group_norm(Var x, Var gamma, Var beta, int groups, float eps = 1e-5f);
Var layer_norm(Var x, Var gamma, Var beta, float eps = 1e-5f);
Var add_channel_bias(Var x, Var bias);    // x [N,C,H,W] + bias [C]

Var silu(Var a);
Var tanh_act(Var a);
Var exp_act(Var a);
Var square(Var a);
Var softmax_lastdim(Var a);
Var clamp_op(Var a, float lo, float hi);
Var acos_op(Var a);
Var normalize_lastdim(Var a, float eps = 1e-6f);

Var reshape(Var a, Shape s);
Var permute(Var a, const std::vector<int>& axes);
Var concat(Var a, Var b, int axis);
Var slice(Var a, int axis, int from, int to);

Var sum_all(Var a);
Var mean_all(Var a);
Var masked_mean(Var a, const Mask& m);
Var reduce_lastdim_sum(Var a);
// Per-row cosine similarity against a constant; rows = all dims but the last.
// Norms are guarded with +eps so all-zero rows yield cosine 0.
Var cosine_rows(Var a, const Tensor& b, float eps = 1e-8f);

}  // namespace ncast
