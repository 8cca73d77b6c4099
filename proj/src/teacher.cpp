#include "flowsr/teacher.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "flowsr/checkpoint.hpp"
#include "flowsr/errors.hpp"
#include "flowsr/optim.hpp"

namespace flowsr {

Discrepancy discrepancy_from_string(const std::string& s) {
    if (s == "l1") return Discrepancy::L1;
    if (s == "l2") return Discrepancy::L2;
    throw ConfigError("unknown discrepancy '" + s + "' (expected l1 or l2)");
}

std::string to_string(Discrepancy d) {
    return d == Discrepancy::L1 ? "l1" : "l2";
}

void TimeRange::validate() const {
    if (!(t_min >= 0.0 && t_max <= 1.0 && t_min < t_max)) {
        throw ConfigError("time range must satisfy 0 <= t_min < t_max <= 1");
    }
}

double sample_time(Rng& rng, const TimeRange& range) {
    range.validate();
    return rng.uniform(range.t_min, range.t_max);
}

Tensor perturb(const Tensor& x_lr, double sigma_p, const Tensor& eps) {
    if (!(sigma_p >= 0.0 && sigma_p <= 1.0)) {
        throw ConfigError("perturb: sigma_p must lie in [0,1]");
    }
    if (!x_lr.same_shape(eps)) {
        throw DimensionError("perturb: noise shape mismatch");
    }
    const double a = std::sqrt(1.0 - sigma_p * sigma_p);
    Tensor out = x_lr;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = a * out[i] + sigma_p * eps[i];
    }
    return out;
}

Tensor interpolate(const Tensor& x0, const Tensor& x1, double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw ConfigError("interpolate: t must lie in [0,1]");
    }
    if (!x0.same_shape(x1)) {
        throw DimensionError("interpolate: shape mismatch");
    }
    Tensor out = x0;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = (1.0 - t) * out[i] + t * x1[i];
    }
    return out;
}

void FlowConfig::validate() const {
    if (!(sigma_p >= 0.0 && sigma_p <= 1.0)) {
        throw ConfigError("flow: sigma_p must lie in [0,1]");
    }
    t_range.validate();
    if (batch < 1 || iterations < 0) {
        throw ConfigError("flow: batch must be >= 1 and iterations >= 0");
    }
    if (!(lr > 0.0) || warmup < 0) {
        throw ConfigError("flow: lr must be > 0 and warmup >= 0");
    }
    if (!(ema_ratio >= 0.0 && ema_ratio < 1.0)) {
        throw ConfigError("flow: ema ratio must lie in [0,1)");
    }
}

Tensor BatchSource::get(std::size_t) const {
    throw UsageError("BatchSource: random-access not supported by this source");
}

TensorSource::TensorSource(Tensor stacked) : stacked_(std::move(stacked)) {
    if (stacked_.shape().size() < 2 || stacked_.shape()[0] == 0) {
        throw UsageError("TensorSource: expects a non-empty [N, ...] tensor");
    }
    count_ = stacked_.shape()[0];
    sample_shape_.assign(stacked_.shape().begin() + 1, stacked_.shape().end());
    sample_len_ = shape_numel(sample_shape_);
}

Tensor TensorSource::draw(Rng& rng) const {
    return get(rng.uniform_index(count_));
}

Tensor TensorSource::get(std::size_t i) const {
    if (i >= count_) {
        throw UsageError("TensorSource: index out of range");
    }
    std::vector<double> v(stacked_.data() + i * sample_len_,
                          stacked_.data() + (i + 1) * sample_len_);
    return Tensor::raw(sample_shape_, std::move(v));
}

Tensor stack_batch(const BatchSource& src, Rng& rng, int batch) {
    if (batch < 1) {
        throw UsageError("stack_batch: empty batch");
    }
    Tensor first = src.draw(rng);
    Shape bs = first.shape();
    bs.insert(bs.begin(), static_cast<std::size_t>(batch));
    Tensor out = Tensor::zeros(bs);
    const std::size_t len = first.numel();
    std::memcpy(out.data(), first.data(), len * sizeof(double));
    for (int i = 1; i < batch; ++i) {
        Tensor s = src.draw(rng);
        if (s.numel() != len) {
            throw DimensionError("stack_batch: inconsistent sample shapes");
        }
        std::memcpy(out.data() + static_cast<std::size_t>(i) * len, s.data(),
                    len * sizeof(double));
    }
    return out;
}

Graph::NodeId ModelField::record(Graph& g, const Tensor& x, const Tensor* cond,
                                 const std::vector<double>& ts) const {
    return record_velocity(g, *model_, weights_, x, cond, ts, trainable_, prefix_);
}

Tensor ModelField::eval(const Tensor& x, const Tensor* cond,
                        const std::vector<double>& ts) const {
    return velocity_eval(*model_, weights_, x, cond, ts);
}

CondBatchVelocityFn ModelField::as_plain_fn() const {
    const VelocityModel* m = model_;
    const WeightKind w = weights_;
    return [m, w](const Tensor& x, const Tensor* cond, const std::vector<double>& ts) {
        return velocity_eval(*m, w, x, cond, ts);
    };
}

FlowBatch assemble_flow_batch(const Tensor& x1_batch, const DegradationSpec& deg, double sigma_p,
                              const TimeRange& range, Rng& rng) {
    if (x1_batch.shape().empty() || x1_batch.shape()[0] == 0) {
        throw UsageError("flow batch: empty batch");
    }
    if (!(sigma_p >= 0.0 && sigma_p <= 1.0)) {
        throw ConfigError("flow batch: sigma_p must lie in [0,1]");
    }
    range.validate();
    const std::size_t B = x1_batch.shape()[0];
    const std::size_t len = x1_batch.numel() / B;
    Shape sample_shape(x1_batch.shape().begin() + 1, x1_batch.shape().end());

    FlowBatch fb;
    fb.x1 = x1_batch;
    fb.x_lr = Tensor::zeros(x1_batch.shape());
    fb.x0 = Tensor::zeros(x1_batch.shape());
    fb.x_t = Tensor::zeros(x1_batch.shape());
    fb.target = Tensor::zeros(x1_batch.shape());
    fb.ts.resize(B);
    const double keep = std::sqrt(1.0 - sigma_p * sigma_p);
    for (std::size_t i = 0; i < B; ++i) {
        std::vector<double> xi(x1_batch.data() + i * len, x1_batch.data() + (i + 1) * len);
        Tensor x1 = Tensor::raw(sample_shape, std::move(xi));
        Tensor xlr = build_lr_condition(x1, deg, rng);
        const double t = sample_time(rng, range);
        fb.ts[i] = t;
        double* plr = fb.x_lr.data() + i * len;
        double* p0 = fb.x0.data() + i * len;
        double* pt = fb.x_t.data() + i * len;
        double* pg = fb.target.data() + i * len;
        for (std::size_t p = 0; p < len; ++p) {
            const double lr = xlr[p];
            const double x0 = keep * lr + sigma_p * rng.normal();
            plr[p] = lr;
            p0[p] = x0;
            pt[p] = (1.0 - t) * x0 + t * x1[p];
            pg[p] = x1[p] - x0;
        }
    }
    return fb;
}

namespace {

Graph::NodeId discrepancy_mean(Graph& g, Graph::NodeId residual, Discrepancy d) {
    return d == Discrepancy::L2 ? g.mean_all(g.square(residual)) : g.mean_all(g.abs(residual));
}

}  // namespace

Graph::NodeId flow_matching_loss(Graph& g, const RecordedField& field, const FlowBatch& batch,
                                 Discrepancy d) {
    const Tensor* cond = batch.conditional ? &batch.x_lr : nullptr;
    const Graph::NodeId v = field.record(g, batch.x_t, cond, batch.ts);
    const Graph::NodeId residual = g.sub(v, g.constant(batch.target));
    return discrepancy_mean(g, residual, d);
}

Graph::NodeId flow_matching_loss(Graph& g, const RecordedField& field, const Tensor& x1_batch,
                                 const DegradationSpec& deg, const FlowConfig& cfg, Rng& rng) {
    FlowBatch batch = assemble_flow_batch(x1_batch, deg, cfg.sigma_p, cfg.t_range, rng);
    batch.conditional = true;
    return flow_matching_loss(g, field, batch, cfg.discrepancy);
}

double flow_matching_loss_value(const CondBatchVelocityFn& field, const FlowBatch& batch,
                                Discrepancy d) {
    const Tensor* cond = batch.conditional ? &batch.x_lr : nullptr;
    const Tensor v = field(batch.x_t, cond, batch.ts);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.numel(); ++i) {
        const double r = v[i] - batch.target[i];
        acc += d == Discrepancy::L2 ? r * r : std::abs(r);
    }
    return acc / static_cast<double>(v.numel());
}

TeacherTrainResult train_teacher(const BatchSource& data, const TeacherTrainConfig& cfg) {
    cfg.arch.validate();
    cfg.degradation.validate();
    cfg.flow.validate();
    const bool conditional = cfg.arch.has_cond();

    TeacherTrainResult out;
    out.model = init_velocity_model(cfg.arch, cfg.flow.seed);
    AdamOptimizer opt({cfg.flow.lr, cfg.flow.warmup});
    Rng rng(cfg.flow.seed + 0x5eedULL);
    out.trace.reserve(static_cast<std::size_t>(cfg.flow.iterations));

    ParamSet last_good = out.model.params;
    ParamSet last_good_ema = out.model.ema;
    using Clock = std::chrono::steady_clock;

    for (int iter = 1; iter <= cfg.flow.iterations; ++iter) {
        const auto tick = Clock::now();
        const Tensor x1 = stack_batch(data, rng, cfg.flow.batch);
        FlowBatch batch =
            assemble_flow_batch(x1, cfg.degradation, cfg.flow.sigma_p, cfg.flow.t_range, rng);
        batch.conditional = conditional;

        Graph g;
        const ModelField field(out.model, WeightKind::Live, true);
        const Graph::NodeId loss = flow_matching_loss(g, field, batch, cfg.flow.discrepancy);
        const double loss_value = g.value(loss)[0];
        if (!std::isfinite(loss_value)) {
            if (!cfg.lastgood_path.empty()) {
                VelocityModel snapshot;
                snapshot.arch = cfg.arch;
                snapshot.params = last_good;
                snapshot.ema = last_good_ema;
                save_checkpoint(snapshot, cfg.lastgood_path, "stage = teacher\n");
            }
            throw TrainingError("teacher training: non-finite loss at iteration " +
                                std::to_string(iter) +
                                (cfg.lastgood_path.empty()
                                     ? ""
                                     : "; last good checkpoint written to " + cfg.lastgood_path));
        }
        last_good = out.model.params;
        last_good_ema = out.model.ema;

        const GradMap grads = gradients(g, loss, out.model.params);
        opt.step(out.model, grads);
        ema_update(out.model, cfg.flow.ema_ratio);

        const double ms =
            std::chrono::duration<double, std::milli>(Clock::now() - tick).count();
        out.trace.push_back({iter, loss_value, opt.effective_lr(iter), ms});
        if (cfg.log_every > 0 && iter % cfg.log_every == 0) {
            std::fprintf(stderr, "[teacher] iter %d/%d loss %.6f\n", iter, cfg.flow.iterations,
                         loss_value);
        }
    }
    return out;
}

}  // namespace flowsr
