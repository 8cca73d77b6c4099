#include "flowsr/graph.hpp"

#include <cmath>
#include <memory>
#include <utility>

#include "flowsr/errors.hpp"

namespace flowsr {

namespace {

// Row-major GEMM kernels. ikj order keeps the inner loop contiguous.

// C[M,N] (+)= A[M,K] * B[K,N]
void gemm_nn(const double* a, const double* b, double* c, std::size_t M, std::size_t K,
             std::size_t N, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < M * N; ++i) {
            c[i] = 0.0;
        }
    }
    for (std::size_t i = 0; i < M; ++i) {
        const double* arow = a + i * K;
        double* crow = c + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double av = arow[k];
            if (av == 0.0) {
                continue;
            }
            const double* brow = b + k * N;
            for (std::size_t j = 0; j < N; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t M, std::size_t K,
             std::size_t N, bool accumulate) {
    for (std::size_t i = 0; i < M; ++i) {
        const double* arow = a + i * K;
        double* crow = c + i * N;
        for (std::size_t j = 0; j < N; ++j) {
            const double* brow = b + j * K;
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                s += arow[k] * brow[k];
            }
            if (accumulate) {
                crow[j] += s;
            } else {
                crow[j] = s;
            }
        }
    }
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
void gemm_tn(const double* a, const double* b, double* c, std::size_t M, std::size_t K,
             std::size_t N, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < M * N; ++i) {
            c[i] = 0.0;
        }
    }
    for (std::size_t k = 0; k < K; ++k) {
        const double* arow = a + k * M;
        const double* brow = b + k * N;
        for (std::size_t i = 0; i < M; ++i) {
            const double av = arow[i];
            if (av == 0.0) {
                continue;
            }
            double* crow = c + i * N;
            for (std::size_t j = 0; j < N; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

struct ConvDims {
    std::size_t batch, cin, h, w, cout, k, oh, ow;
    int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
    if (x.shape().size() != 4 || w.shape().size() != 4) {
        throw DimensionError("conv2d: expects x[B,C,H,W], w[Cout,Cin,k,k]");
    }
    ConvDims d{};
    d.batch = x.shape()[0];
    d.cin = x.shape()[1];
    d.h = x.shape()[2];
    d.w = x.shape()[3];
    d.cout = w.shape()[0];
    d.k = w.shape()[2];
    d.stride = stride;
    d.pad = pad;
    if (w.shape()[1] != d.cin || w.shape()[3] != d.k) {
        throw DimensionError("conv2d: weight shape " + shape_str(w.shape()) +
                             " incompatible with input " + shape_str(x.shape()));
    }
    if (stride < 1 || pad < 0) {
        throw ConfigError("conv2d: stride must be >=1 and pad >=0");
    }
    d.oh = (d.h + 2 * static_cast<std::size_t>(pad) - d.k) / static_cast<std::size_t>(stride) + 1;
    d.ow = (d.w + 2 * static_cast<std::size_t>(pad) - d.k) / static_cast<std::size_t>(stride) + 1;
    return d;
}

// col[Cin*k*k, OH*OW] for one image.
void im2col(const double* img, const ConvDims& d, double* col) {
    const std::size_t patch = d.cin * d.k * d.k;
    const std::size_t cols = d.oh * d.ow;
    for (std::size_t c = 0; c < d.cin; ++c) {
        for (std::size_t ky = 0; ky < d.k; ++ky) {
            for (std::size_t kx = 0; kx < d.k; ++kx) {
                const std::size_t row = (c * d.k + ky) * d.k + kx;
                double* dst = col + row * cols;
                for (std::size_t oy = 0; oy < d.oh; ++oy) {
                    const long iy = static_cast<long>(oy) * d.stride - d.pad + static_cast<long>(ky);
                    for (std::size_t ox = 0; ox < d.ow; ++ox) {
                        const long ix =
                            static_cast<long>(ox) * d.stride - d.pad + static_cast<long>(kx);
                        double v = 0.0;
                        if (iy >= 0 && iy < static_cast<long>(d.h) && ix >= 0 &&
                            ix < static_cast<long>(d.w)) {
                            v = img[(c * d.h + static_cast<std::size_t>(iy)) * d.w +
                                    static_cast<std::size_t>(ix)];
                        }
                        dst[oy * d.ow + ox] = v;
                    }
                }
            }
        }
    }
    (void)patch;
}

// Scatter col-gradient back onto the padded image gradient.
void col2im_accum(const double* col, const ConvDims& d, double* img_grad) {
    const std::size_t cols = d.oh * d.ow;
    for (std::size_t c = 0; c < d.cin; ++c) {
        for (std::size_t ky = 0; ky < d.k; ++ky) {
            for (std::size_t kx = 0; kx < d.k; ++kx) {
                const std::size_t row = (c * d.k + ky) * d.k + kx;
                const double* src = col + row * cols;
                for (std::size_t oy = 0; oy < d.oh; ++oy) {
                    const long iy = static_cast<long>(oy) * d.stride - d.pad + static_cast<long>(ky);
                    if (iy < 0 || iy >= static_cast<long>(d.h)) {
                        continue;
                    }
                    for (std::size_t ox = 0; ox < d.ow; ++ox) {
                        const long ix =
                            static_cast<long>(ox) * d.stride - d.pad + static_cast<long>(kx);
                        if (ix < 0 || ix >= static_cast<long>(d.w)) {
                            continue;
                        }
                        img_grad[(c * d.h + static_cast<std::size_t>(iy)) * d.w +
                                 static_cast<std::size_t>(ix)] += src[oy * d.ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Graph::NodeId Graph::push(Tensor value, std::vector<NodeId> parents, bool force_grad,
                          std::function<void(Graph&, NodeId)> backprop) {
    if (backward_done_) {
        throw UsageError("Graph: cannot record after backward()");
    }
    bool needs = force_grad;
    for (NodeId p : parents) {
        needs = needs || node(p).needs_grad;
    }
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.needs_grad = needs;
    if (needs) {
        n.backprop = std::move(backprop);
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor& Graph::ensure_grad(NodeId id) {
    Node& n = node(id);
    if (n.grad.numel() != n.value.numel()) {
        n.grad = Tensor::zeros(n.value.shape());
    }
    return n.grad;
}

Graph::NodeId Graph::constant(Tensor value) {
    return push(std::move(value), {}, false, nullptr);
}

Graph::NodeId Graph::leaf(Tensor value) {
    return push(std::move(value), {}, true, nullptr);
}

Graph::NodeId Graph::param(const std::string& key, const Tensor& value) {
    auto it = param_cache_.find(key);
    if (it != param_cache_.end()) {
        return it->second;
    }
    const NodeId id = push(value, {}, true, nullptr);
    param_cache_.emplace(key, id);
    return id;
}

bool Graph::has_param(const std::string& key) const {
    return param_cache_.count(key) != 0;
}

Graph::NodeId Graph::param_node(const std::string& key) const {
    auto it = param_cache_.find(key);
    if (it == param_cache_.end()) {
        throw UsageError("Graph: unknown parameter key '" + key + "'");
    }
    return it->second;
}

const Tensor& Graph::grad(NodeId id) const {
    return node(id).grad;
}

Tensor Graph::param_grad(const std::string& key, const Shape& shape) const {
    auto it = param_cache_.find(key);
    if (it == param_cache_.end()) {
        return Tensor::zeros(shape);
    }
    const Node& n = node(it->second);
    if (n.grad.numel() == 0) {
        return Tensor::zeros(shape);
    }
    return n.grad;
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
    Tensor v = flowsr::add(value(a), value(b));
    return push(std::move(v), {a, b}, false, [a, b](Graph& g, NodeId self) {
        const Tensor& go = g.node(self).grad;
        if (g.node(a).needs_grad) {
            add_inplace(g.ensure_grad(a), go);
        }
        if (g.node(b).needs_grad) {
            add_inplace(g.ensure_grad(b), go);
        }
    });
}

Graph::NodeId Graph::sub(NodeId a, NodeId b) {
    Tensor v = flowsr::sub(value(a), value(b));
    return push(std::move(v), {a, b}, false, [a, b](Graph& g, NodeId self) {
        const Tensor& go = g.node(self).grad;
        if (g.node(a).needs_grad) {
            add_inplace(g.ensure_grad(a), go);
        }
        if (g.node(b).needs_grad) {
            Tensor& gb = g.ensure_grad(b);
            for (std::size_t i = 0; i < gb.numel(); ++i) {
                gb[i] -= go[i];
            }
        }
    });
}

Graph::NodeId Graph::mul(NodeId a, NodeId b) {
    Tensor v = flowsr::mul(value(a), value(b));
    return push(std::move(v), {a, b}, false, [a, b](Graph& g, NodeId self) {
        const Tensor& go = g.node(self).grad;
        const Tensor& va = g.value(a);
        const Tensor& vb = g.value(b);
        if (g.node(a).needs_grad) {
            Tensor& ga = g.ensure_grad(a);
            for (std::size_t i = 0; i < ga.numel(); ++i) {
                ga[i] += go[i] * vb[i];
            }
        }
        if (g.node(b).needs_grad) {
            Tensor& gb = g.ensure_grad(b);
            for (std::size_t i = 0; i < gb.numel(); ++i) {
                gb[i] += go[i] * va[i];
            }
        }
    });
}

Graph::NodeId Graph::scale(NodeId a, double c) {
    Tensor v = flowsr::scale(value(a), c);
    return push(std::move(v), {a}, false, [a, c](Graph& g, NodeId self) {
        const Tensor& go = g.node(self).grad;
        if (g.node(a).needs_grad) {
            Tensor& ga = g.ensure_grad(a);
            for (std::size_t i = 0; i < ga.numel(); ++i) {
                ga[i] += c * go[i];
            }
        }
    });
}

Graph::NodeId Graph::square(NodeId a) {
    const Tensor& va = value(a);
    Tensor v = va;
    for (std::size_t i = 0; i < v.numel(); ++i) {
        v[i] *= v[i];
    }
    return push(std::move(v), {a}, false, [a](Graph& g, NodeId self) {
        const Tensor& go = g.node(self).grad;
        const Tensor& va = g.value(a);
        if (g.node(a).needs_grad) {
            Tensor& ga = g.ensure_grad(a);
            for (std::size_t i = 0; i < ga.numel(); ++i) {
                ga[i] += 2.0 * va[i] * go[i];
            }
        }
    });
}

Graph::NodeId Graph::abs(NodeId a) {
    const Tensor& va = value(a);
    Tensor v = va;
    for (std::size_t i = 0; i < v.numel(); ++i) {
        v[i] = std::abs(v[i]);
    }
    // Subgradient 0 at the kink.
    return push(std::move(v), {a}, false, [a](Graph& g, NodeId self) {
        const Tensor& go = g.node(self).grad;
        const Tensor& va = g.value(a);
        if (g.node(a).needs_grad) {
            Tensor& ga = g.ensure_grad(a);
            for (std::size_t i = 0; i < ga.numel(); ++i) {
                const double s = va[i] > 0.0 ? 1.0 : (va[i] < 0.0 ? -1.0 : 0.0);
                ga[i] += s * go[i];
            }
        }
    });
}

Graph::NodeId Graph::silu(NodeId a) {
    const Tensor& va = value(a);
    Tensor v = va;
    for (std::size_t i = 0; i < v.numel(); ++i) {
        const double x = v[i];
        v[i] = x / (1.0 + std::exp(-x));
    }
    return push(std::move(v), {a}, false, [a](Graph& g, NodeId self) {
        const Tensor& go = g.node(self).grad;
        const Tensor& va = g.value(a);
        if (g.node(a).needs_grad) {
            Tensor& ga = g.ensure_grad(a);
            for (std::size_t i = 0; i < ga.numel(); ++i) {
                const double x = va[i];
                const double sg = 1.0 / (1.0 + std::exp(-x));
                ga[i] += sg * (1.0 + x * (1.0 - sg)) * go[i];
            }
        }
    });
}

Graph::NodeId Graph::stop_gradient(NodeId a) {
    // Value passes through; no gradient flows back, ever.
    return push(value(a), {}, false, nullptr);
}

Graph::NodeId Graph::mean_all(NodeId a) {
    const Tensor& va = value(a);
    if (va.numel() == 0) {
        throw UsageError("mean_all: empty tensor");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < va.numel(); ++i) {
        s += va[i];
    }
    const double inv = 1.0 / static_cast<double>(va.numel());
    Tensor v = Tensor::full({1}, s * inv);
    return push(std::move(v), {a}, false, [a, inv](Graph& g, NodeId self) {
        const double go = g.node(self).grad[0];
        if (g.node(a).needs_grad) {
            Tensor& ga = g.ensure_grad(a);
            const double gi = go * inv;
            for (std::size_t i = 0; i < ga.numel(); ++i) {
                ga[i] += gi;
            }
        }
    });
}

Graph::NodeId Graph::linear(NodeId x, NodeId w, NodeId b) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    const Tensor& vb = value(b);
    if (vx.shape().size() != 2 || vw.shape().size() != 2 || vb.shape().size() != 1) {
        throw DimensionError("linear: expects x[B,in], w[out,in], b[out]");
    }
    const std::size_t B = vx.shape()[0];
    const std::size_t in = vx.shape()[1];
    const std::size_t out = vw.shape()[0];
    if (vw.shape()[1] != in || vb.shape()[0] != out) {
        throw DimensionError("linear: shape mismatch x" + shape_str(vx.shape()) + " w" +
                             shape_str(vw.shape()));
    }
    Tensor v = Tensor::zeros({B, out});
    gemm_nt(vx.data(), vw.data(), v.data(), B, in, out, false);
    for (std::size_t i = 0; i < B; ++i) {
        double* row = v.data() + i * out;
        for (std::size_t j = 0; j < out; ++j) {
            row[j] += vb[j];
        }
    }
    return push(std::move(v), {x, w, b}, false, [x, w, b, B, in, out](Graph& g, NodeId self) {
        const Tensor& go = g.node(self).grad;
        if (g.node(x).needs_grad) {
            gemm_nn(go.data(), g.value(w).data(), g.ensure_grad(x).data(), B, out, in, true);
        }
        if (g.node(w).needs_grad) {
            gemm_tn(go.data(), g.value(x).data(), g.ensure_grad(w).data(), out, B, in, true);
        }
        if (g.node(b).needs_grad) {
            Tensor& gb = g.ensure_grad(b);
            for (std::size_t i = 0; i < B; ++i) {
                const double* row = go.data() + i * out;
                for (std::size_t j = 0; j < out; ++j) {
                    gb[j] += row[j];
                }
            }
        }
    });
}

Graph::NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    const Tensor& vb = value(b);
    const ConvDims d = conv_dims(vx, vw, stride, pad);
    if (vb.shape().size() != 1 || vb.shape()[0] != d.cout) {
        throw DimensionError("conv2d: bias shape mismatch");
    }
    const std::size_t patch = d.cin * d.k * d.k;
    const std::size_t cols = d.oh * d.ow;

    // Keep the unfolded input for the backward pass: recomputing it costs as
    // much as the forward GEMM.
    auto colbuf = std::make_shared<std::vector<double>>(d.batch * patch * cols);
    Tensor v = Tensor::zeros({d.batch, d.cout, d.oh, d.ow});
    for (std::size_t img = 0; img < d.batch; ++img) {
        double* col = colbuf->data() + img * patch * cols;
        im2col(vx.data() + img * d.cin * d.h * d.w, d, col);
        double* out = v.data() + img * d.cout * cols;
        gemm_nn(vw.data(), col, out, d.cout, patch, cols, false);
        for (std::size_t c = 0; c < d.cout; ++c) {
            double* orow = out + c * cols;
            const double bias = vb[c];
            for (std::size_t p = 0; p < cols; ++p) {
                orow[p] += bias;
            }
        }
    }
    return push(std::move(v), {x, w, b}, false,
                [x, w, b, d, patch, cols, colbuf](Graph& g, NodeId self) {
                    const Tensor& go = g.node(self).grad;
                    const bool need_x = g.node(x).needs_grad;
                    const bool need_w = g.node(w).needs_grad;
                    const bool need_b = g.node(b).needs_grad;
                    std::vector<double> dcol;
                    if (need_x) {
                        dcol.resize(patch * cols);
                    }
                    for (std::size_t img = 0; img < d.batch; ++img) {
                        const double* gout = go.data() + img * d.cout * cols;
                        const double* col = colbuf->data() + img * patch * cols;
                        if (need_w) {
                            gemm_nt(gout, col, g.ensure_grad(w).data(), d.cout, cols, patch, true);
                        }
                        if (need_b) {
                            Tensor& gb = g.ensure_grad(b);
                            for (std::size_t c = 0; c < d.cout; ++c) {
                                const double* grow = gout + c * cols;
                                double s = 0.0;
                                for (std::size_t p = 0; p < cols; ++p) {
                                    s += grow[p];
                                }
                                gb[c] += s;
                            }
                        }
                        if (need_x) {
                            gemm_tn(g.value(w).data(), gout, dcol.data(), patch, d.cout, cols,
                                    false);
                            col2im_accum(dcol.data(), d,
                                         g.ensure_grad(x).data() + img * d.cin * d.h * d.w);
                        }
                    }
                });
}

Graph::NodeId Graph::upsample2x(NodeId x) {
    const Tensor& vx = value(x);
    if (vx.shape().size() != 4) {
        throw DimensionError("upsample2x: expects [B,C,H,W]");
    }
    const std::size_t B = vx.shape()[0], C = vx.shape()[1], H = vx.shape()[2], W = vx.shape()[3];
    Tensor v = Tensor::zeros({B, C, 2 * H, 2 * W});
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const double* src = vx.data() + bc * H * W;
        double* dst = v.data() + bc * 4 * H * W;
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t xw = 0; xw < W; ++xw) {
                const double val = src[y * W + xw];
                double* d0 = dst + (2 * y) * (2 * W) + 2 * xw;
                double* d1 = d0 + 2 * W;
                d0[0] = d0[1] = d1[0] = d1[1] = val;
            }
        }
    }
    return push(std::move(v), {x}, false, [x, B, C, H, W](Graph& g, NodeId self) {
        if (!g.node(x).needs_grad) {
            return;
        }
        const Tensor& go = g.node(self).grad;
        Tensor& gx = g.ensure_grad(x);
        for (std::size_t bc = 0; bc < B * C; ++bc) {
            const double* src = go.data() + bc * 4 * H * W;
            double* dst = gx.data() + bc * H * W;
            for (std::size_t y = 0; y < H; ++y) {
                for (std::size_t xw = 0; xw < W; ++xw) {
                    const double* s0 = src + (2 * y) * (2 * W) + 2 * xw;
                    const double* s1 = s0 + 2 * W;
                    dst[y * W + xw] += s0[0] + s0[1] + s1[0] + s1[1];
                }
            }
        }
    });
}

Graph::NodeId Graph::concat_dim1(NodeId a, NodeId b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    const Shape& sa = va.shape();
    const Shape& sb = vb.shape();
    if (sa.size() != sb.size() || sa.size() < 2 || sa[0] != sb[0]) {
        throw DimensionError("concat_dim1: incompatible shapes " + shape_str(sa) + " vs " +
                             shape_str(sb));
    }
    std::size_t tail = 1;
    for (std::size_t i = 2; i < sa.size(); ++i) {
        if (sa[i] != sb[i]) {
            throw DimensionError("concat_dim1: trailing dims differ");
        }
        tail *= sa[i];
    }
    const std::size_t B = sa[0], da = sa[1], db = sb[1];
    Shape os = sa;
    os[1] = da + db;
    Tensor v = Tensor::zeros(os);
    const std::size_t stride_a = da * tail, stride_b = db * tail, stride_o = (da + db) * tail;
    for (std::size_t i = 0; i < B; ++i) {
        double* dst = v.data() + i * stride_o;
        const double* pa = va.data() + i * stride_a;
        const double* pb = vb.data() + i * stride_b;
        for (std::size_t j = 0; j < stride_a; ++j) {
            dst[j] = pa[j];
        }
        for (std::size_t j = 0; j < stride_b; ++j) {
            dst[stride_a + j] = pb[j];
        }
    }
    return push(std::move(v), {a, b}, false,
                [a, b, B, stride_a, stride_b, stride_o](Graph& g, NodeId self) {
                    const Tensor& go = g.node(self).grad;
                    if (g.node(a).needs_grad) {
                        Tensor& ga = g.ensure_grad(a);
                        for (std::size_t i = 0; i < B; ++i) {
                            const double* src = go.data() + i * stride_o;
                            double* dst = ga.data() + i * stride_a;
                            for (std::size_t j = 0; j < stride_a; ++j) {
                                dst[j] += src[j];
                            }
                        }
                    }
                    if (g.node(b).needs_grad) {
                        Tensor& gb = g.ensure_grad(b);
                        for (std::size_t i = 0; i < B; ++i) {
                            const double* src = go.data() + i * stride_o + stride_a;
                            double* dst = gb.data() + i * stride_b;
                            for (std::size_t j = 0; j < stride_b; ++j) {
                                dst[j] += src[j];
                            }
                        }
                    }
                });
}

void Graph::backward(NodeId loss) {
    if (backward_done_) {
        throw UsageError("Graph: backward() already ran");
    }
    if (node(loss).value.numel() != 1) {
        throw UsageError("Graph: loss must be scalar, got shape " +
                         shape_str(node(loss).value.shape()));
    }
    backward_done_ = true;
    ensure_grad(loss)[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = node(id);
        if (!n.needs_grad || n.grad.numel() == 0 || !n.backprop) {
            continue;
        }
        n.backprop(*this, id);
    }
}

}  // namespace flowsr
