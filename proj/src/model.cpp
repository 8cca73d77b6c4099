#include "flowsr/model.hpp"

#include <cmath>
#include <cstring>

#include "flowsr/errors.hpp"
#include "flowsr/rng.hpp"

namespace flowsr {

bool same_shapes(const ParamSet& a, const ParamSet& b) {
    if (a.size() != b.size()) {
        return false;
    }
    auto ia = a.begin();
    auto ib = b.begin();
    for (; ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) {
            return false;
        }
    }
    return true;
}

bool bitwise_equal(const ParamSet& a, const ParamSet& b) {
    if (!same_shapes(a, b)) {
        return false;
    }
    auto ia = a.begin();
    auto ib = b.begin();
    for (; ia != a.end(); ++ia, ++ib) {
        const auto& va = ia->second.vec();
        const auto& vb = ib->second.vec();
        if (std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) != 0) {
            return false;
        }
    }
    return true;
}

void ModelArch::validate() const {
    if (time_embed_dim <= 0 || time_embed_dim % 2 != 0) {
        throw ConfigError("arch: time_embed_dim must be positive and even");
    }
    if (kind == Backbone::Mlp) {
        if (data_dim <= 0) {
            throw ConfigError("arch: data_dim must be positive");
        }
        if (cond_dim < 0) {
            throw ConfigError("arch: cond_dim must be >= 0");
        }
        if (hidden.empty()) {
            throw ConfigError("arch: at least one hidden layer required");
        }
        for (int w : hidden) {
            if (w <= 0) {
                throw ConfigError("arch: zero-width layer");
            }
        }
    } else {
        if (height <= 0 || width <= 0 || channels <= 0) {
            throw ConfigError("arch: conv dims must be positive");
        }
        if (height % 2 != 0 || width % 2 != 0) {
            throw ConfigError("arch: conv backbone needs even spatial dims");
        }
        if (cond_channels < 0) {
            throw ConfigError("arch: cond_channels must be >= 0");
        }
        if (conv_channels.size() != 4) {
            throw ConfigError("arch: conv_channels must list 4 stage widths");
        }
        for (int c : conv_channels) {
            if (c <= 0) {
                throw ConfigError("arch: zero-width layer");
            }
        }
    }
}

std::size_t ModelArch::x_numel() const {
    if (kind == Backbone::Mlp) {
        return static_cast<std::size_t>(data_dim);
    }
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
}

Shape ModelArch::x_shape(std::size_t batch) const {
    if (kind == Backbone::Mlp) {
        return {batch, static_cast<std::size_t>(data_dim)};
    }
    return {batch, static_cast<std::size_t>(channels), static_cast<std::size_t>(height),
            static_cast<std::size_t>(width)};
}

Shape ModelArch::cond_shape(std::size_t batch) const {
    if (kind == Backbone::Mlp) {
        return {batch, static_cast<std::size_t>(cond_dim)};
    }
    return {batch, static_cast<std::size_t>(cond_channels), static_cast<std::size_t>(height),
            static_cast<std::size_t>(width)};
}

bool ModelArch::has_cond() const {
    return kind == Backbone::Mlp ? cond_dim > 0 : cond_channels > 0;
}

bool operator==(const ModelArch& a, const ModelArch& b) {
    return a.kind == b.kind && a.time_embed_dim == b.time_embed_dim && a.data_dim == b.data_dim &&
           a.cond_dim == b.cond_dim && a.hidden == b.hidden && a.height == b.height &&
           a.width == b.width && a.channels == b.channels && a.cond_channels == b.cond_channels &&
           a.conv_channels == b.conv_channels;
}

namespace {

Tensor fan_in_normal(Rng& rng, Shape shape, std::size_t fan_in) {
    Tensor t = Tensor::zeros(std::move(shape));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    rng.fill_normal(t.data(), t.numel(), stddev);
    return t;
}

struct MlpDims {
    // Per-layer input widths, embedding included.
    std::vector<std::size_t> in;
    std::vector<std::size_t> out;
};

MlpDims mlp_dims(const ModelArch& a) {
    MlpDims d;
    const std::size_t dt = static_cast<std::size_t>(a.time_embed_dim);
    std::size_t prev = static_cast<std::size_t>(a.data_dim + a.cond_dim) + dt;
    for (int w : a.hidden) {
        d.in.push_back(prev);
        d.out.push_back(static_cast<std::size_t>(w));
        prev = static_cast<std::size_t>(w) + dt;
    }
    // Output projection takes the last activation without the embedding.
    d.in.push_back(static_cast<std::size_t>(a.hidden.back()));
    d.out.push_back(static_cast<std::size_t>(a.data_dim));
    return d;
}

struct ConvStage {
    std::size_t cin, cout, k;
    int stride, pad;
};

std::vector<ConvStage> conv_stages(const ModelArch& a) {
    const std::size_t dt = static_cast<std::size_t>(a.time_embed_dim);
    const std::size_t c0 = static_cast<std::size_t>(a.channels + a.cond_channels) + dt;
    const std::size_t c1 = static_cast<std::size_t>(a.conv_channels[0]);
    const std::size_t c2 = static_cast<std::size_t>(a.conv_channels[1]);
    const std::size_t c3 = static_cast<std::size_t>(a.conv_channels[2]);
    const std::size_t c4 = static_cast<std::size_t>(a.conv_channels[3]);
    return {
        {c0, c1, 3, 2, 1},       // down
        {c1 + dt, c2, 3, 1, 1},  // half res
        {c2 + dt, c3, 3, 1, 1},  // half res
        {c3 + dt, c4, 3, 1, 1},  // full res after upsample
        {c4, static_cast<std::size_t>(a.channels), 1, 1, 0},  // projection
    };
}

}  // namespace

VelocityModel init_velocity_model(const ModelArch& arch, std::uint64_t seed) {
    arch.validate();
    VelocityModel m;
    m.arch = arch;
    Rng rng(seed);
    if (arch.kind == Backbone::Mlp) {
        const MlpDims d = mlp_dims(arch);
        const std::size_t n_layers = d.in.size();
        for (std::size_t i = 0; i + 1 < n_layers; ++i) {
            const std::string tag = "layer" + std::to_string(i);
            m.params[tag + ".w"] = fan_in_normal(rng, {d.out[i], d.in[i]}, d.in[i]);
            m.params[tag + ".b"] = Tensor::zeros({d.out[i]});
        }
        m.params["out.w"] = Tensor::zeros({d.out.back(), d.in.back()});
        m.params["out.b"] = Tensor::zeros({d.out.back()});
    } else {
        const auto stages = conv_stages(arch);
        for (std::size_t i = 0; i + 1 < stages.size(); ++i) {
            const ConvStage& s = stages[i];
            const std::string tag = "conv" + std::to_string(i);
            m.params[tag + ".w"] =
                fan_in_normal(rng, {s.cout, s.cin, s.k, s.k}, s.cin * s.k * s.k);
            m.params[tag + ".b"] = Tensor::zeros({s.cout});
        }
        const ConvStage& p = stages.back();
        m.params["proj.w"] = Tensor::zeros({p.cout, p.cin, p.k, p.k});
        m.params["proj.b"] = Tensor::zeros({p.cout});
    }
    m.ema = m.params;
    return m;
}

double time_embedding_max_freq(int d_t) {
    return d_t >= 4 ? 1e4 : 1.0;
}

Tensor time_embedding(double t, int d_t) {
    if (d_t <= 0 || d_t % 2 != 0) {
        throw ConfigError("time_embedding: d_t must be positive and even");
    }
    const int half = d_t / 2;
    Tensor e = Tensor::zeros({static_cast<std::size_t>(d_t)});
    for (int k = 0; k < half; ++k) {
        const double w =
            half > 1 ? std::pow(1e4, static_cast<double>(k) / static_cast<double>(half - 1)) : 1.0;
        e[2 * static_cast<std::size_t>(k)] = std::sin(w * t);
        e[2 * static_cast<std::size_t>(k) + 1] = std::cos(w * t);
    }
    return e;
}

namespace {

Tensor embedding_rows(const std::vector<double>& ts, int d_t) {
    Tensor e = Tensor::zeros({ts.size(), static_cast<std::size_t>(d_t)});
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const Tensor row = time_embedding(ts[i], d_t);
        std::memcpy(e.data() + i * static_cast<std::size_t>(d_t), row.data(),
                    static_cast<std::size_t>(d_t) * sizeof(double));
    }
    return e;
}

// Embedding broadcast over space: [B, d_t, H, W] constant channels.
Tensor embedding_channels(const std::vector<double>& ts, int d_t, std::size_t h, std::size_t w) {
    const std::size_t dt = static_cast<std::size_t>(d_t);
    Tensor e = Tensor::zeros({ts.size(), dt, h, w});
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const Tensor row = time_embedding(ts[i], d_t);
        for (std::size_t c = 0; c < dt; ++c) {
            double* dst = e.data() + (i * dt + c) * h * w;
            const double v = row[c];
            for (std::size_t p = 0; p < h * w; ++p) {
                dst[p] = v;
            }
        }
    }
    return e;
}

}  // namespace

Graph::NodeId record_velocity(Graph& g, const VelocityModel& model, WeightKind weights,
                              const Tensor& x, const Tensor* cond, const std::vector<double>& ts,
                              bool trainable, const std::string& param_key_prefix) {
    const Graph::NodeId x_node = g.constant(x);
    const Graph::NodeId cond_node = cond != nullptr ? g.constant(*cond) : -1;
    return record_velocity_node(g, model, weights, x_node, cond_node, ts, trainable,
                                param_key_prefix);
}

Graph::NodeId record_velocity_node(Graph& g, const VelocityModel& model, WeightKind weights,
                                   Graph::NodeId x_node, Graph::NodeId cond_node,
                                   const std::vector<double>& ts, bool trainable,
                                   const std::string& param_key_prefix) {
    const ModelArch& a = model.arch;
    const ParamSet& ps = weights == WeightKind::Live ? model.params : model.ema;
    const Tensor& x = g.value(x_node);
    const std::size_t batch = x.shape().empty() ? 0 : x.shape()[0];
    if (x.shape() != a.x_shape(batch)) {
        throw DimensionError("velocity: x shape " + shape_str(x.shape()) +
                             " does not match architecture");
    }
    if (a.has_cond()) {
        if (cond_node < 0 || g.value(cond_node).shape() != a.cond_shape(batch)) {
            throw DimensionError("velocity: condition shape mismatch");
        }
    } else if (cond_node >= 0 && g.value(cond_node).numel() != 0) {
        throw DimensionError("velocity: architecture takes no condition");
    }
    if (ts.size() != batch) {
        throw DimensionError("velocity: need one time per batch item");
    }
    for (double t : ts) {
        if (!(t >= 0.0 && t <= 1.0)) {
            throw ConfigError("velocity: t must lie in [0,1]");
        }
    }

    auto P = [&](const std::string& name) -> Graph::NodeId {
        const auto it = ps.find(name);
        if (it == ps.end()) {
            throw UsageError("velocity: missing parameter " + name);
        }
        return trainable ? g.param(param_key_prefix + "/" + name, it->second)
                         : g.constant(it->second);
    };

    if (a.kind == Backbone::Mlp) {
        const Graph::NodeId emb = g.constant(embedding_rows(ts, a.time_embed_dim));
        Graph::NodeId h = x_node;
        if (a.has_cond()) {
            h = g.concat_dim1(h, cond_node);
        }
        h = g.concat_dim1(h, emb);
        for (std::size_t i = 0; i < a.hidden.size(); ++i) {
            const std::string tag = "layer" + std::to_string(i);
            if (i > 0) {
                h = g.concat_dim1(h, emb);
            }
            h = g.silu(g.linear(h, P(tag + ".w"), P(tag + ".b")));
        }
        return g.linear(h, P("out.w"), P("out.b"));
    }

    const std::size_t H = static_cast<std::size_t>(a.height);
    const std::size_t W = static_cast<std::size_t>(a.width);
    const Graph::NodeId emb_full = g.constant(embedding_channels(ts, a.time_embed_dim, H, W));
    const Graph::NodeId emb_half =
        g.constant(embedding_channels(ts, a.time_embed_dim, H / 2, W / 2));

    Graph::NodeId h = x_node;
    if (a.has_cond()) {
        h = g.concat_dim1(h, cond_node);
    }
    h = g.concat_dim1(h, emb_full);
    h = g.silu(g.conv2d(h, P("conv0.w"), P("conv0.b"), 2, 1));
    h = g.concat_dim1(h, emb_half);
    h = g.silu(g.conv2d(h, P("conv1.w"), P("conv1.b"), 1, 1));
    h = g.concat_dim1(h, emb_half);
    h = g.silu(g.conv2d(h, P("conv2.w"), P("conv2.b"), 1, 1));
    h = g.upsample2x(h);
    h = g.concat_dim1(h, emb_full);
    h = g.silu(g.conv2d(h, P("conv3.w"), P("conv3.b"), 1, 1));
    return g.conv2d(h, P("proj.w"), P("proj.b"), 1, 0);
}

Tensor velocity_eval(const VelocityModel& model, WeightKind weights, const Tensor& x,
                     const Tensor* cond, const std::vector<double>& ts) {
    Graph g;
    const Graph::NodeId out = record_velocity(g, model, weights, x, cond, ts, false);
    return g.value(out);
}

Tensor velocity_forward(const VelocityModel& model, const Tensor& x, const Tensor* cond, double t,
                        WeightKind weights) {
    const std::size_t batch = 1;
    Tensor xb = Tensor::raw(model.arch.x_shape(batch), x.vec());
    Tensor cb;
    const Tensor* cp = nullptr;
    if (cond != nullptr && model.arch.has_cond()) {
        cb = Tensor::raw(model.arch.cond_shape(batch), cond->vec());
        cp = &cb;
    } else if (cond != nullptr) {
        cp = cond;  // shape check inside will reject
    }
    Tensor out = velocity_eval(model, weights, xb, cp, {t});
    return Tensor::raw(x.shape(), out.vec());
}

GradMap gradients(Graph& g, Graph::NodeId loss, const ParamSet& params,
                  const std::string& param_key_prefix) {
    if (!g.backward_done()) {
        g.backward(loss);
    }
    GradMap grads;
    for (const auto& [name, tensor] : params) {
        grads[name] = g.param_grad(param_key_prefix + "/" + name, tensor.shape());
    }
    return grads;
}

}  // namespace flowsr
