#define EIGEN_DONT_PARALLELIZE
#include "normalcast/autodiff.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <memory>

namespace ncast {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

void Tape::accumulate(int id, const Tensor& g) {
    Tensor& dst = grad_buf(id);
    const float* s = g.data();
    float* d = dst.data();
    for (long long i = 0; i < dst.size(); ++i) d[i] += s[i];
}

void Tape::backward(Var root) {
    if (!root.valid() || root.tape != this) throw ShapeError("backward: invalid root");
    if (val(root).size() != 1) throw ShapeError("backward: root must be scalar");
    grad_buf(root.id)[0] += 1.0f;
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.grad.empty()) continue;
        if (n.backward) n.backward(*this);
        if (n.grad_sink) {
            float* d = n.grad_sink->data();
            const float* s = n.grad.data();
            for (long long k = 0; k < n.grad.size(); ++k) d[k] += s[k];
        }
    }
}

Var make_constant(Tape& t, Tensor v) {
    return Var{&t, t.add_node(std::move(v), false)};
}

Var make_leaf(Tape& t, const Tensor& value, Tensor* grad_sink) {
    int id = t.add_node(value, true);
    t.node(id).grad_sink = grad_sink;
    return Var{&t, id};
}

namespace {

void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw ShapeError("ops require vars from the same tape");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Var add(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    check_same_shape(av, bv, "add");
    Tensor out = av;
    for (long long i = 0; i < out.size(); ++i) out[i] += bv[i];
    bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
    int aid = a.id, bid = b.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, bid, id](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            if (tp.node(aid).needs_grad) tp.accumulate(aid, g);
            if (tp.node(bid).needs_grad) tp.accumulate(bid, g);
        };
    }
    return Var{&t, id};
}

Var sub(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    check_same_shape(av, bv, "sub");
    Tensor out = av;
    for (long long i = 0; i < out.size(); ++i) out[i] -= bv[i];
    bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
    int aid = a.id, bid = b.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, bid, id](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            if (tp.node(aid).needs_grad) tp.accumulate(aid, g);
            if (tp.node(bid).needs_grad) {
                Tensor& db = tp.grad_buf(bid);
                for (long long i = 0; i < db.size(); ++i) db[i] -= g[i];
            }
        };
    }
    return Var{&t, id};
}

Var mul(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    check_same_shape(av, bv, "mul");
    Tensor out = av;
    for (long long i = 0; i < out.size(); ++i) out[i] *= bv[i];
    bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
    int aid = a.id, bid = b.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, bid, id](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            if (tp.node(aid).needs_grad) {
                Tensor& da = tp.grad_buf(aid);
                const Tensor& bv2 = tp.val(bid);
                for (long long i = 0; i < da.size(); ++i) da[i] += g[i] * bv2[i];
            }
            if (tp.node(bid).needs_grad) {
                Tensor& db = tp.grad_buf(bid);
                const Tensor& av2 = tp.val(aid);
                for (long long i = 0; i < db.size(); ++i) db[i] += g[i] * av2[i];
            }
        };
    }
    return Var{&t, id};
}

Var scale(Var a, float s) {
    Tape& t = *a.tape;
    Tensor out = t.val(a);
    for (long long i = 0; i < out.size(); ++i) out[i] *= s;
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id, s](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            for (long long i = 0; i < da.size(); ++i) da[i] += s * g[i];
        };
    }
    return Var{&t, id};
}

Var add_scalar(Var a, float s) {
    Tape& t = *a.tape;
    Tensor out = t.val(a);
    for (long long i = 0; i < out.size(); ++i) out[i] += s;
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id](Tape& tp) {
            if (tp.node(aid).needs_grad) tp.accumulate(aid, tp.node(id).grad);
        };
    }
    return Var{&t, id};
}

Var add_const(Var a, const Tensor& c) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    check_same_shape(av, c, "add_const");
    Tensor out = av;
    for (long long i = 0; i < out.size(); ++i) out[i] += c[i];
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id](Tape& tp) { tp.accumulate(aid, tp.node(id).grad); };
    }
    return Var{&t, id};
}

Var mul_const(Var a, const Tensor& c) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    check_same_shape(av, c, "mul_const");
    Tensor out = av;
    for (long long i = 0; i < out.size(); ++i) out[i] *= c[i];
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    Tensor ckeep = c;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id, ckeep](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            for (long long i = 0; i < da.size(); ++i) da[i] += g[i] * ckeep[i];
        };
    }
    return Var{&t, id};
}

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw ShapeError("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    int M = av.dim(0), K = av.dim(1), N = bv.dim(1);
    Tensor out({M, N});
    {
        CMap A(av.data(), M, K), B(bv.data(), K, N);
        Map O(out.data(), M, N);
        O.noalias() = A * B;
    }
    bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
    int aid = a.id, bid = b.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, bid, id, M, K, N](Tape& tp) {
            CMap G(tp.node(id).grad.data(), M, N);
            if (tp.node(aid).needs_grad) {
                CMap B(tp.val(bid).data(), K, N);
                Map dA(tp.grad_buf(aid).data(), M, K);
                dA.noalias() += G * B.transpose();
            }
            if (tp.node(bid).needs_grad) {
                CMap A(tp.val(aid).data(), M, K);
                Map dB(tp.grad_buf(bid).data(), K, N);
                dB.noalias() += A.transpose() * G;
            }
        };
    }
    return Var{&t, id};
}

Var linear(Var x, Var w, Var b) {
    check_same_tape(x, w);
    Tape& t = *x.tape;
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    if (xv.rank() < 1 || wv.rank() != 2) throw ShapeError("linear: bad ranks");
    int K = xv.dim(xv.rank() - 1);
    if (K != wv.dim(0)) throw ShapeError("linear: inner dim mismatch");
    int N = wv.dim(1);
    long long M = xv.size() / K;
    Shape out_shape = xv.shape();
    out_shape.back() = N;
    Tensor out(out_shape);
    {
        CMap X(xv.data(), M, K), W(wv.data(), K, N);
        Map O(out.data(), M, N);
        O.noalias() = X * W;
        if (b.valid()) {
            const Tensor& bv = t.val(b);
            if (bv.size() != N) throw ShapeError("linear: bias size");
            for (long long i = 0; i < M; ++i) {
                float* row = out.data() + i * N;
                for (int j = 0; j < N; ++j) row[j] += bv[j];
            }
        }
    }
    bool ng = t.node(x.id).needs_grad || t.node(w.id).needs_grad || (b.valid() && t.node(b.id).needs_grad);
    int xid = x.id, wid = w.id, bid = b.valid() ? b.id : -1;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [xid, wid, bid, id, M, K, N](Tape& tp) {
            CMap G(tp.node(id).grad.data(), M, N);
            if (tp.node(xid).needs_grad) {
                CMap W(tp.val(wid).data(), K, N);
                Map dX(tp.grad_buf(xid).data(), M, K);
                dX.noalias() += G * W.transpose();
            }
            if (tp.node(wid).needs_grad) {
                CMap X(tp.val(xid).data(), M, K);
                Map dW(tp.grad_buf(wid).data(), K, N);
                dW.noalias() += X.transpose() * G;
            }
            if (bid >= 0 && tp.node(bid).needs_grad) {
                Tensor& db = tp.grad_buf(bid);
                const float* g = tp.node(id).grad.data();
                for (long long i = 0; i < M; ++i)
                    for (int j = 0; j < N; ++j) db[j] += g[i * N + j];
            }
        };
    }
    return Var{&t, id};
}

Var bmm(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1))
        throw ShapeError("bmm: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    int B = av.dim(0), M = av.dim(1), K = av.dim(2), N = bv.dim(2);
    Tensor out({B, M, N});
#pragma omp parallel for schedule(static)
    for (int i = 0; i < B; ++i) {
        CMap A(av.data() + (long long)i * M * K, M, K);
        CMap Bm(bv.data() + (long long)i * K * N, K, N);
        Map O(out.data() + (long long)i * M * N, M, N);
        O.noalias() = A * Bm;
    }
    bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
    int aid = a.id, bid = b.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, bid, id, B, M, K, N](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            bool na = tp.node(aid).needs_grad, nb = tp.node(bid).needs_grad;
            if (na) tp.grad_buf(aid);
            if (nb) tp.grad_buf(bid);
#pragma omp parallel for schedule(static)
            for (int i = 0; i < B; ++i) {
                CMap G(g.data() + (long long)i * M * N, M, N);
                if (na) {
                    CMap Bm(tp.val(bid).data() + (long long)i * K * N, K, N);
                    Map dA(tp.grad_buf(aid).data() + (long long)i * M * K, M, K);
                    dA.noalias() += G * Bm.transpose();
                }
                if (nb) {
                    CMap A(tp.val(aid).data() + (long long)i * M * K, M, K);
                    Map dB(tp.grad_buf(bid).data() + (long long)i * K * N, K, N);
                    dB.noalias() += A.transpose() * G;
                }
            }
        };
    }
    return Var{&t, id};
}

namespace {

struct ConvDims {
    int N, C, H, W, Co, kh, kw, stride, pad, Ho, Wo;
};

void im2col_frame(const float* x, const ConvDims& d, float* cols) {
    const int HoWo = d.Ho * d.Wo;
    for (int c = 0; c < d.C; ++c) {
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                float* row = cols + ((long long)((c * d.kh + ky) * d.kw + kx)) * HoWo;
                for (int oy = 0; oy < d.Ho; ++oy) {
                    int iy = oy * d.stride + ky - d.pad;
                    float* dst = row + oy * d.Wo;
                    if (iy < 0 || iy >= d.H) {
                        std::memset(dst, 0, sizeof(float) * d.Wo);
                        continue;
                    }
                    const float* src = x + ((long long)c * d.H + iy) * d.W;
                    for (int ox = 0; ox < d.Wo; ++ox) {
                        int ix = ox * d.stride + kx - d.pad;
                        dst[ox] = (ix >= 0 && ix < d.W) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_frame(const float* cols, const ConvDims& d, float* dx) {
    const int HoWo = d.Ho * d.Wo;
    for (int c = 0; c < d.C; ++c) {
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                const float* row = cols + ((long long)((c * d.kh + ky) * d.kw + kx)) * HoWo;
                for (int oy = 0; oy < d.Ho; ++oy) {
                    int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.H) continue;
                    float* dst = dx + ((long long)c * d.H + iy) * d.W;
                    const float* src = row + oy * d.Wo;
                    for (int ox = 0; ox < d.Wo; ++ox) {
                        int ix = ox * d.stride + kx - d.pad;
                        if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    check_same_tape(x, w);
    Tape& t = *x.tape;
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    if (xv.rank() != 4 || wv.rank() != 4) throw ShapeError("conv2d: expects NCHW input and OIHW weights");
    ConvDims d;
    d.N = xv.dim(0);
    d.C = xv.dim(1);
    d.H = xv.dim(2);
    d.W = xv.dim(3);
    d.Co = wv.dim(0);
    d.kh = wv.dim(2);
    d.kw = wv.dim(3);
    d.stride = stride;
    d.pad = pad;
    if (wv.dim(1) != d.C)
        throw ShapeError("conv2d: weight expects " + std::to_string(wv.dim(1)) + " channels, input has " +
                         std::to_string(d.C));
    d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
    const int K = d.C * d.kh * d.kw;
    const int HoWo = d.Ho * d.Wo;

    Tensor out({d.N, d.Co, d.Ho, d.Wo});
    const Tensor* bv = b.valid() ? &t.val(b) : nullptr;
#pragma omp parallel
    {
        std::vector<float> cols((size_t)K * HoWo);
#pragma omp for schedule(static)
        for (int n = 0; n < d.N; ++n) {
            im2col_frame(xv.data() + (long long)n * d.C * d.H * d.W, d, cols.data());
            CMap W(wv.data(), d.Co, K);
            CMap Cm(cols.data(), K, HoWo);
            Map O(out.data() + (long long)n * d.Co * HoWo, d.Co, HoWo);
            O.noalias() = W * Cm;
            if (bv) {
                for (int co = 0; co < d.Co; ++co) {
                    float bias = (*bv)[co];
                    float* row = out.data() + ((long long)n * d.Co + co) * HoWo;
                    for (int i = 0; i < HoWo; ++i) row[i] += bias;
                }
            }
        }
    }

    bool ng = t.node(x.id).needs_grad || t.node(w.id).needs_grad || (b.valid() && t.node(b.id).needs_grad);
    int xid = x.id, wid = w.id, bid = b.valid() ? b.id : -1;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [xid, wid, bid, id, d, K, HoWo](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            bool nx = tp.node(xid).needs_grad;
            bool nw = tp.node(wid).needs_grad;
            bool nb = bid >= 0 && tp.node(bid).needs_grad;
            if (nx) tp.grad_buf(xid);
            // Per-frame weight partials, reduced in frame order for determinism.
            std::vector<float> dw_partial(nw ? (size_t)d.N * d.Co * K : 0, 0.0f);
#pragma omp parallel
            {
                std::vector<float> cols((size_t)K * HoWo);
#pragma omp for schedule(static)
                for (int n = 0; n < d.N; ++n) {
                    CMap G(g.data() + (long long)n * d.Co * HoWo, d.Co, HoWo);
                    if (nw) {
                        im2col_frame(tp.val(xid).data() + (long long)n * d.C * d.H * d.W, d, cols.data());
                        CMap Cm(cols.data(), K, HoWo);
                        Map dWn(dw_partial.data() + (size_t)n * d.Co * K, d.Co, K);
                        dWn.noalias() = G * Cm.transpose();
                    }
                    if (nx) {
                        CMap W(tp.val(wid).data(), d.Co, K);
                        Map dC(cols.data(), K, HoWo);
                        dC.noalias() = W.transpose() * G;
                        col2im_frame(cols.data(), d, tp.grad_buf(xid).data() + (long long)n * d.C * d.H * d.W);
                    }
                }
            }
            if (nw) {
                Tensor& dw = tp.grad_buf(wid);
                for (int n = 0; n < d.N; ++n) {
                    const float* p = dw_partial.data() + (size_t)n * d.Co * K;
                    for (long long i = 0; i < dw.size(); ++i) dw[i] += p[i];
                }
            }
            if (nb) {
                Tensor& db = tp.grad_buf(bid);
                for (int n = 0; n < d.N; ++n)
                    for (int co = 0; co < d.Co; ++co) {
                        const float* row = g.data() + ((long long)n * d.Co + co) * HoWo;
                        double s = 0.0;
                        for (int i = 0; i < HoWo; ++i) s += row[i];
                        db[co] += static_cast<float>(s);
                    }
            }
        };
    }
    return Var{&t, id};
}

Var upsample_nearest2x(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.val(x);
    if (xv.rank() != 4) throw ShapeError("upsample_nearest2x: expects NCHW");
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor out({N, C, 2 * H, 2 * W});
    for (long long nc = 0; nc < (long long)N * C; ++nc) {
        const float* src = xv.data() + nc * H * W;
        float* dst = out.data() + nc * 4 * H * W;
        for (int y = 0; y < H; ++y)
            for (int xw = 0; xw < W; ++xw) {
                float v = src[y * W + xw];
                long long o = (long long)(2 * y) * 2 * W + 2 * xw;
                dst[o] = v;
                dst[o + 1] = v;
                dst[o + 2 * W] = v;
                dst[o + 2 * W + 1] = v;
            }
    }
    bool ng = t.node(x.id).needs_grad;
    int xid = x.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [xid, id, N, C, H, W](Tape& tp) {
            Tensor& dx = tp.grad_buf(xid);
            const Tensor& g = tp.node(id).grad;
            for (long long nc = 0; nc < (long long)N * C; ++nc) {
                float* d = dx.data() + nc * H * W;
                const float* s = g.data() + nc * 4 * H * W;
                for (int y = 0; y < H; ++y)
                    for (int xw = 0; xw < W; ++xw) {
                        long long o = (long long)(2 * y) * 2 * W + 2 * xw;
                        d[y * W + xw] += s[o] + s[o + 1] + s[o + 2 * W] + s[o + 2 * W + 1];
                    }
            }
        };
    }
    return Var{&t, id};
}

Var group_norm(Var x, Var gamma, Var beta, int groups, float eps) {
    check_same_tape(x, gamma);
    Tape& t = *x.tape;
    const Tensor& xv = t.val(x);
    if (xv.rank() != 4) throw ShapeError("group_norm: expects NCHW");
    int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (C % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
    int Cg = C / groups;
    long long m = (long long)Cg * H * W;
    const Tensor& gv = t.val(gamma);
    const Tensor& bv = t.val(beta);
    if (gv.size() != C || bv.size() != C) throw ShapeError("group_norm: gamma/beta size");

    Tensor out(xv.shape());
    auto stats = std::make_shared<std::vector<float>>((size_t)N * groups * 2);  // mean, invstd
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < groups; ++g) {
            const float* src = xv.data() + ((long long)n * C + (long long)g * Cg) * H * W;
            double sum = 0.0, sq = 0.0;
            for (long long i = 0; i < m; ++i) {
                sum += src[i];
                sq += (double)src[i] * src[i];
            }
            double mean = sum / m;
            double var = sq / m - mean * mean;
            float invstd = 1.0f / std::sqrt((float)var + eps);
            (*stats)[(size_t)(n * groups + g) * 2] = (float)mean;
            (*stats)[(size_t)(n * groups + g) * 2 + 1] = invstd;
            float* dst = out.data() + ((long long)n * C + (long long)g * Cg) * H * W;
            for (int c = 0; c < Cg; ++c) {
                float ga = gv[g * Cg + c], be = bv[g * Cg + c];
                const float* s = src + (long long)c * H * W;
                float* o = dst + (long long)c * H * W;
                for (int i = 0; i < H * W; ++i) o[i] = (s[i] - (float)mean) * invstd * ga + be;
            }
        }
    }
    bool ng = t.node(x.id).needs_grad || t.node(gamma.id).needs_grad || t.node(beta.id).needs_grad;
    int xid = x.id, gid = gamma.id, bid = beta.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [xid, gid, bid, id, N, C, H, W, groups, Cg, m, stats](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            const Tensor& xval = tp.val(xid);
            const Tensor& gam = tp.val(gid);
            bool nx = tp.node(xid).needs_grad;
            bool ngam = tp.node(gid).needs_grad;
            bool nbet = tp.node(bid).needs_grad;
            if (nx) tp.grad_buf(xid);
            if (ngam) tp.grad_buf(gid);
            if (nbet) tp.grad_buf(bid);
            const int HW = H * W;
            for (int n = 0; n < N; ++n) {
                for (int gr = 0; gr < groups; ++gr) {
                    float mean = (*stats)[(size_t)(n * groups + gr) * 2];
                    float invstd = (*stats)[(size_t)(n * groups + gr) * 2 + 1];
                    long long base = ((long long)n * C + (long long)gr * Cg) * HW;
                    // group means of gamma*g and gamma*g*xhat
                    double s1 = 0.0, s2 = 0.0;
                    for (int c = 0; c < Cg; ++c) {
                        float ga = gam[gr * Cg + c];
                        const float* gp = g.data() + base + (long long)c * HW;
                        const float* xp = xval.data() + base + (long long)c * HW;
                        for (int i = 0; i < HW; ++i) {
                            float gh = ga * gp[i];
                            float xh = (xp[i] - mean) * invstd;
                            s1 += gh;
                            s2 += (double)gh * xh;
                        }
                    }
                    float m1 = (float)(s1 / m), m2 = (float)(s2 / m);
                    for (int c = 0; c < Cg; ++c) {
                        float ga = gam[gr * Cg + c];
                        const float* gp = g.data() + base + (long long)c * HW;
                        const float* xp = xval.data() + base + (long long)c * HW;
                        if (nx) {
                            float* dx = tp.grad_buf(xid).data() + base + (long long)c * HW;
                            for (int i = 0; i < HW; ++i) {
                                float xh = (xp[i] - mean) * invstd;
                                dx[i] += invstd * (ga * gp[i] - m1 - xh * m2);
                            }
                        }
                        if (ngam || nbet) {
                            double dg = 0.0, db = 0.0;
                            for (int i = 0; i < HW; ++i) {
                                float xh = (xp[i] - mean) * invstd;
                                dg += (double)gp[i] * xh;
                                db += gp[i];
                            }
                            if (ngam) tp.grad_buf(gid)[gr * Cg + c] += (float)dg;
                            if (nbet) tp.grad_buf(bid)[gr * Cg + c] += (float)db;
                        }
                    }
                }
            }
        };
    }
    return Var{&t, id};
}

Var layer_norm(Var x, Var gamma, Var beta, float eps) {
    check_same_tape(x, gamma);
    Tape& t = *x.tape;
    const Tensor& xv = t.val(x);
    int C = xv.dim(xv.rank() - 1);
    long long rows = xv.size() / C;
    const Tensor& gv = t.val(gamma);
    const Tensor& bv = t.val(beta);
    if (gv.size() != C || bv.size() != C) throw ShapeError("layer_norm: gamma/beta size");
    Tensor out(xv.shape());
    auto stats = std::make_shared<std::vector<float>>((size_t)rows * 2);
    for (long long r = 0; r < rows; ++r) {
        const float* src = xv.data() + r * C;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < C; ++i) {
            sum += src[i];
            sq += (double)src[i] * src[i];
        }
        double mean = sum / C;
        double var = sq / C - mean * mean;
        float invstd = 1.0f / std::sqrt((float)var + eps);
        (*stats)[(size_t)r * 2] = (float)mean;
        (*stats)[(size_t)r * 2 + 1] = invstd;
        float* dst = out.data() + r * C;
        for (int i = 0; i < C; ++i) dst[i] = (src[i] - (float)mean) * invstd * gv[i] + bv[i];
    }
    bool ng = t.node(x.id).needs_grad || t.node(gamma.id).needs_grad || t.node(beta.id).needs_grad;
    int xid = x.id, gid = gamma.id, bid = beta.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [xid, gid, bid, id, rows, C, stats](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            const Tensor& xval = tp.val(xid);
            const Tensor& gam = tp.val(gid);
            bool nx = tp.node(xid).needs_grad;
            bool ngam = tp.node(gid).needs_grad;
            bool nbet = tp.node(bid).needs_grad;
            if (nx) tp.grad_buf(xid);
            if (ngam) tp.grad_buf(gid);
            if (nbet) tp.grad_buf(bid);
            for (long long r = 0; r < rows; ++r) {
                float mean = (*stats)[(size_t)r * 2];
                float invstd = (*stats)[(size_t)r * 2 + 1];
                const float* gp = g.data() + r * C;
                const float* xp = xval.data() + r * C;
                double s1 = 0.0, s2 = 0.0;
                for (int i = 0; i < C; ++i) {
                    float gh = gam[i] * gp[i];
                    float xh = (xp[i] - mean) * invstd;
                    s1 += gh;
                    s2 += (double)gh * xh;
                }
                float m1 = (float)(s1 / C), m2 = (float)(s2 / C);
                if (nx) {
                    float* dx = tp.grad_buf(xid).data() + r * C;
                    for (int i = 0; i < C; ++i) {
                        float xh = (xp[i] - mean) * invstd;
                        dx[i] += invstd * (gam[i] * gp[i] - m1 - xh * m2);
                    }
                }
                if (ngam || nbet) {
                    for (int i = 0; i < C; ++i) {
                        float xh = (xp[i] - mean) * invstd;
                        if (ngam) tp.grad_buf(gid)[i] += gp[i] * xh;
                        if (nbet) tp.grad_buf(bid)[i] += gp[i];
                    }
                }
            }
        };
    }
    return Var{&t, id};
}

Var add_channel_bias(Var x, Var bias) {
    check_same_tape(x, bias);
    Tape& t = *x.tape;
    const Tensor& xv = t.val(x);
    const Tensor& bv = t.val(bias);
    if (xv.rank() != 4 || bv.size() != xv.dim(1)) throw ShapeError("add_channel_bias: shape");
    int N = xv.dim(0), C = xv.dim(1);
    long long HW = (long long)xv.dim(2) * xv.dim(3);
    Tensor out = xv;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            float* row = out.data() + ((long long)n * C + c) * HW;
            float b = bv[c];
            for (long long i = 0; i < HW; ++i) row[i] += b;
        }
    bool ng = t.node(x.id).needs_grad || t.node(bias.id).needs_grad;
    int xid = x.id, bid = bias.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [xid, bid, id, N, C, HW](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            if (tp.node(xid).needs_grad) tp.accumulate(xid, g);
            if (tp.node(bid).needs_grad) {
                Tensor& db = tp.grad_buf(bid);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const float* row = g.data() + ((long long)n * C + c) * HW;
                        double s = 0.0;
                        for (long long i = 0; i < HW; ++i) s += row[i];
                        db[c] += (float)s;
                    }
            }
        };
    }
    return Var{&t, id};
}

Var silu(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    Tensor out(av.shape());
    for (long long i = 0; i < out.size(); ++i) {
        float s = 1.0f / (1.0f + std::exp(-av[i]));
        out[i] = av[i] * s;
    }
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            const Tensor& x = tp.val(aid);
            for (long long i = 0; i < da.size(); ++i) {
                float s = 1.0f / (1.0f + std::exp(-x[i]));
                da[i] += g[i] * s * (1.0f + x[i] * (1.0f - s));
            }
        };
    }
    return Var{&t, id};
}

Var tanh_act(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    Tensor out(av.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            const Tensor& y = tp.val(id);
            for (long long i = 0; i < da.size(); ++i) da[i] += g[i] * (1.0f - y[i] * y[i]);
        };
    }
    return Var{&t, id};
}

Var exp_act(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    Tensor out(av.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            const Tensor& y = tp.val(id);
            for (long long i = 0; i < da.size(); ++i) da[i] += g[i] * y[i];
        };
    }
    return Var{&t, id};
}

Var square(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    Tensor out(av.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            const Tensor& x = tp.val(aid);
            for (long long i = 0; i < da.size(); ++i) da[i] += 2.0f * x[i] * g[i];
        };
    }
    return Var{&t, id};
}

Var softmax_lastdim(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    int C = av.dim(av.rank() - 1);
    long long rows = av.size() / C;
    Tensor out(av.shape());
    for (long long r = 0; r < rows; ++r) {
        const float* src = av.data() + r * C;
        float* dst = out.data() + r * C;
        float mx = src[0];
        for (int i = 1; i < C; ++i) mx = std::max(mx, src[i]);
        double sum = 0.0;
        for (int i = 0; i < C; ++i) {
            dst[i] = std::exp(src[i] - mx);
            sum += dst[i];
        }
        float inv = (float)(1.0 / sum);
        for (int i = 0; i < C; ++i) dst[i] *= inv;
    }
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id, rows, C](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            const Tensor& p = tp.val(id);
            for (long long r = 0; r < rows; ++r) {
                const float* gp = g.data() + r * C;
                const float* pp = p.data() + r * C;
                float* dp = da.data() + r * C;
                double dot = 0.0;
                for (int i = 0; i < C; ++i) dot += (double)gp[i] * pp[i];
                for (int i = 0; i < C; ++i) dp[i] += pp[i] * (gp[i] - (float)dot);
            }
        };
    }
    return Var{&t, id};
}

Var clamp_op(Var a, float lo, float hi) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    Tensor out(av.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, av[i]));
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id, lo, hi](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            const Tensor& x = tp.val(aid);
            for (long long i = 0; i < da.size(); ++i)
                if (x[i] > lo && x[i] < hi) da[i] += g[i];
        };
    }
    return Var{&t, id};
}

Var acos_op(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    Tensor out(av.shape());
    for (long long i = 0; i < out.size(); ++i) out[i] = std::acos(av[i]);
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            const Tensor& x = tp.val(aid);
            for (long long i = 0; i < da.size(); ++i) da[i] -= g[i] / std::sqrt(std::max(1e-12f, 1.0f - x[i] * x[i]));
        };
    }
    return Var{&t, id};
}

Var normalize_lastdim(Var a, float eps) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    int K = av.dim(av.rank() - 1);
    long long rows = av.size() / K;
    Tensor out(av.shape());
    for (long long r = 0; r < rows; ++r) {
        const float* src = av.data() + r * K;
        float* dst = out.data() + r * K;
        double sq = 0.0;
        for (int i = 0; i < K; ++i) sq += (double)src[i] * src[i];
        float rn = std::sqrt((float)sq + eps * eps);
        for (int i = 0; i < K; ++i) dst[i] = src[i] / rn;
    }
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id, rows, K, eps](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            const Tensor& x = tp.val(aid);
            for (long long r = 0; r < rows; ++r) {
                const float* gp = g.data() + r * K;
                const float* xp = x.data() + r * K;
                float* dp = da.data() + r * K;
                double sq = 0.0, dot = 0.0;
                for (int i = 0; i < K; ++i) {
                    sq += (double)xp[i] * xp[i];
                    dot += (double)gp[i] * xp[i];
                }
                float rn = std::sqrt((float)sq + eps * eps);
                float rn3 = rn * rn * rn;
                for (int i = 0; i < K; ++i) dp[i] += gp[i] / rn - xp[i] * (float)dot / rn3;
            }
        };
    }
    return Var{&t, id};
}

Var reshape(Var a, Shape s) {
    Tape& t = *a.tape;
    Tensor out = t.val(a).reshaped(std::move(s));
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id](Tape& tp) {
            Tensor g = tp.node(id).grad.reshaped(tp.val(aid).shape());
            tp.accumulate(aid, g);
        };
    }
    return Var{&t, id};
}

namespace {

std::vector<long long> strides_of(const Shape& s) {
    std::vector<long long> st(s.size());
    long long acc = 1;
    for (int i = (int)s.size() - 1; i >= 0; --i) {
        st[(size_t)i] = acc;
        acc *= s[(size_t)i];
    }
    return st;
}

Tensor permute_tensor(const Tensor& in, const std::vector<int>& axes) {
    Shape os(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) os[i] = in.dim(axes[i]);
    Tensor out(os);
    auto in_st = strides_of(in.shape());
    auto out_st = strides_of(os);
    long long n = in.size();
    int r = in.rank();
    // walk output linearly, gather from input
    std::vector<long long> src_stride_for_out(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) src_stride_for_out[i] = in_st[(size_t)axes[i]];
    for (long long o = 0; o < n; ++o) {
        long long rem = o, src = 0;
        for (int i = 0; i < r; ++i) {
            long long q = rem / out_st[(size_t)i];
            rem -= q * out_st[(size_t)i];
            src += q * src_stride_for_out[(size_t)i];
        }
        out[o] = in[src];
    }
    return out;
}

}  // namespace

Var permute(Var a, const std::vector<int>& axes) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    if ((int)axes.size() != av.rank()) throw ShapeError("permute: axes rank mismatch");
    Tensor out = permute_tensor(av, axes);
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    std::vector<int> inv(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) inv[(size_t)axes[i]] = (int)i;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id, inv](Tape& tp) {
            Tensor g = permute_tensor(tp.node(id).grad, inv);
            tp.accumulate(aid, g);
        };
    }
    return Var{&t, id};
}

Var concat(Var a, Var b, int axis) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    if (av.rank() != bv.rank()) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < av.rank(); ++i)
        if (i != axis && av.dim(i) != bv.dim(i)) throw ShapeError("concat: dim mismatch at axis " + std::to_string(i));
    Shape os = av.shape();
    os[(size_t)axis] += bv.dim(axis);
    long long outer = 1;
    for (int i = 0; i < axis; ++i) outer *= av.dim(i);
    long long inner = 1;
    for (int i = axis + 1; i < av.rank(); ++i) inner *= av.dim(i);
    long long ablk = av.dim(axis) * inner, bblk = bv.dim(axis) * inner;
    Tensor out(os);
    for (long long o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * (ablk + bblk), av.data() + o * ablk, sizeof(float) * (size_t)ablk);
        std::memcpy(out.data() + o * (ablk + bblk) + ablk, bv.data() + o * bblk, sizeof(float) * (size_t)bblk);
    }
    bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
    int aid = a.id, bid = b.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, bid, id, outer, ablk, bblk](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            if (tp.node(aid).needs_grad) {
                Tensor& da = tp.grad_buf(aid);
                for (long long o = 0; o < outer; ++o) {
                    const float* s = g.data() + o * (ablk + bblk);
                    float* d = da.data() + o * ablk;
                    for (long long i = 0; i < ablk; ++i) d[i] += s[i];
                }
            }
            if (tp.node(bid).needs_grad) {
                Tensor& db = tp.grad_buf(bid);
                for (long long o = 0; o < outer; ++o) {
                    const float* s = g.data() + o * (ablk + bblk) + ablk;
                    float* d = db.data() + o * bblk;
                    for (long long i = 0; i < bblk; ++i) d[i] += s[i];
                }
            }
        };
    }
    return Var{&t, id};
}

Var slice(Var a, int axis, int from, int to) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    if (axis < 0 || axis >= av.rank() || from < 0 || to > av.dim(axis) || from >= to)
        throw ShapeError("slice: bad range");
    Shape os = av.shape();
    os[(size_t)axis] = to - from;
    long long outer = 1;
    for (int i = 0; i < axis; ++i) outer *= av.dim(i);
    long long inner = 1;
    for (int i = axis + 1; i < av.rank(); ++i) inner *= av.dim(i);
    long long in_blk = av.dim(axis) * inner;
    long long out_blk = (to - from) * inner;
    Tensor out(os);
    for (long long o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * out_blk, av.data() + o * in_blk + from * inner, sizeof(float) * (size_t)out_blk);
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    long long off = from * inner;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id, outer, in_blk, out_blk, off](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            for (long long o = 0; o < outer; ++o) {
                const float* s = g.data() + o * out_blk;
                float* d = da.data() + o * in_blk + off;
                for (long long i = 0; i < out_blk; ++i) d[i] += s[i];
            }
        };
    }
    return Var{&t, id};
}

Var sum_all(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    double s = 0.0;
    for (long long i = 0; i < av.size(); ++i) s += av[i];
    Tensor out({1});
    out[0] = (float)s;
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            float g = tp.node(id).grad[0];
            for (long long i = 0; i < da.size(); ++i) da[i] += g;
        };
    }
    return Var{&t, id};
}

Var mean_all(Var a) {
    Tape& t = *a.tape;
    long long n = t.val(a).size();
    Var s = sum_all(a);
    return scale(s, 1.0f / (float)n);
}

Var masked_mean(Var a, const Mask& m) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    if (av.size() != m.size()) throw ShapeError("masked_mean: mask size mismatch");
    long long cnt = m.count();
    if (cnt == 0) throw MetricError("masked_mean: empty mask");
    double s = 0.0;
    for (long long i = 0; i < av.size(); ++i)
        if (m.get(i)) s += av[i];
    Tensor out({1});
    out[0] = (float)(s / (double)cnt);
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    auto bytes = std::make_shared<std::vector<uint8_t>>(m.bytes());
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id, bytes, cnt](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            float g = tp.node(id).grad[0] / (float)cnt;
            for (long long i = 0; i < da.size(); ++i)
                if ((*bytes)[(size_t)i]) da[i] += g;
        };
    }
    return Var{&t, id};
}

Var reduce_lastdim_sum(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    int K = av.dim(av.rank() - 1);
    long long rows = av.size() / K;
    Shape os(av.shape().begin(), av.shape().end() - 1);
    if (os.empty()) os = {1};
    Tensor out(os);
    for (long long r = 0; r < rows; ++r) {
        const float* src = av.data() + r * K;
        double s = 0.0;
        for (int i = 0; i < K; ++i) s += src[i];
        out[r] = (float)s;
    }
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id, rows, K](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            for (long long r = 0; r < rows; ++r) {
                float gv = g[r];
                float* d = da.data() + r * K;
                for (int i = 0; i < K; ++i) d[i] += gv;
            }
        };
    }
    return Var{&t, id};
}

Var cosine_rows(Var a, const Tensor& b, float eps) {
    Tape& t = *a.tape;
    const Tensor& av = t.val(a);
    check_same_shape(av, b, "cosine_rows");
    int K = av.dim(av.rank() - 1);
    long long rows = av.size() / K;
    Shape os(av.shape().begin(), av.shape().end() - 1);
    if (os.empty()) os = {1};
    Tensor out(os);
    for (long long r = 0; r < rows; ++r) {
        const float* ap = av.data() + r * K;
        const float* bp = b.data() + r * K;
        double d = 0.0, na = 0.0, nb = 0.0;
        for (int i = 0; i < K; ++i) {
            d += (double)ap[i] * bp[i];
            na += (double)ap[i] * ap[i];
            nb += (double)bp[i] * bp[i];
        }
        float pa = std::sqrt((float)na) + eps, pb = std::sqrt((float)nb) + eps;
        out[r] = (float)d / (pa * pb);
    }
    bool ng = t.node(a.id).needs_grad;
    int aid = a.id;
    Tensor bkeep = b;
    int id = t.add_node(std::move(out), ng);
    if (ng) {
        t.node(id).backward = [aid, id, rows, K, eps, bkeep](Tape& tp) {
            Tensor& da = tp.grad_buf(aid);
            const Tensor& g = tp.node(id).grad;
            const Tensor& x = tp.val(aid);
            for (long long r = 0; r < rows; ++r) {
                const float* ap = x.data() + r * K;
                const float* bp = bkeep.data() + r * K;
                float* dp = da.data() + r * K;
                double d = 0.0, na = 0.0, nb = 0.0;
                for (int i = 0; i < K; ++i) {
                    d += (double)ap[i] * bp[i];
                    na += (double)ap[i] * ap[i];
                    nb += (double)bp[i] * bp[i];
                }
                float norm_a = std::sqrt((float)na);
                float pa = norm_a + eps, pb = std::sqrt((float)nb) + eps;
                float gv = g[r];
                float inv = 1.0f / (pa * pb);
                float coef = norm_a > 0.0f ? (float)d / (pa * pa * pb * norm_a) : 0.0f;
                for (int i = 0; i < K; ++i) dp[i] += gv * (bp[i] * inv - coef * ap[i]);
            }
        };
    }
    return Var{&t, id};
}

}  // namespace ncast
