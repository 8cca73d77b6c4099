#include "flowsr/distill.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "flowsr/checkpoint.hpp"
#include "flowsr/errors.hpp"
#include "flowsr/optim.hpp"

namespace flowsr {

DistillVariant distill_variant_from_string(const std::string& s) {
    if (s == "trajectory") return DistillVariant::Trajectory;
    if (s == "pinn") return DistillVariant::Pinn;
    if (s == "boot") return DistillVariant::Boot;
    throw ConfigError("unknown distillation variant '" + s + "'");
}

std::string to_string(DistillVariant v) {
    switch (v) {
        case DistillVariant::Trajectory: return "trajectory";
        case DistillVariant::Pinn: return "pinn";
        case DistillVariant::Boot: return "boot";
    }
    return "?";
}

void DistillConfig::validate() const {
    if (!(dt > 0.0)) {
        throw ConfigError("distill: dt must be > 0");
    }
    t_range.validate();
    if (!(t_range.t_min < t_upper())) {
        throw ConfigError("distill: empty time range after clamping t_max to 1 - dt");
    }
    if (!(lambda_align >= 0.0) || !(lambda_bc >= 0.0) || !std::isfinite(lambda_align) ||
        !std::isfinite(lambda_bc)) {
        throw ConfigError("distill: loss weights must be finite and >= 0");
    }
    if (slope_kind == SolverKind::Rk45) {
        throw ConfigError("distill: teacher slope must be a fixed-step scheme");
    }
    if (batch < 1 || iterations < 0) {
        throw ConfigError("distill: batch must be >= 1 and iterations >= 0");
    }
    if (!(lr > 0.0) || warmup < 0) {
        throw ConfigError("distill: lr must be > 0 and warmup >= 0");
    }
    if (!(ema_ratio >= 0.0 && ema_ratio < 1.0)) {
        throw ConfigError("distill: ema ratio must lie in [0,1)");
    }
}

double DistillConfig::t_upper() const {
    return std::min(t_range.t_max, 1.0 - dt);
}

Tensor one_step_from_velocity(const Tensor& x0, const Tensor& v) {
    return add(x0, v);
}

Tensor intermediate_from_velocity(const Tensor& x0, const Tensor& v,
                                  const std::vector<double>& ts) {
    if (x0.shape().empty() || x0.shape()[0] != ts.size()) {
        throw DimensionError("intermediate: need one t per batch item");
    }
    const std::size_t B = ts.size();
    const std::size_t len = x0.numel() / B;
    Tensor out = x0;
    for (std::size_t i = 0; i < B; ++i) {
        const double t = ts[i];
        double* dst = out.data() + i * len;
        const double* vs = v.data() + i * len;
        for (std::size_t p = 0; p < len; ++p) {
            dst[p] += t * vs[p];
        }
    }
    return out;
}

Tensor student_one_step(const VelocityModel& student, const Tensor& x0, const Tensor* cond,
                        const std::vector<double>& ts, WeightKind weights) {
    return one_step_from_velocity(x0, velocity_eval(student, weights, x0, cond, ts));
}

Tensor student_intermediate(const VelocityModel& student, const Tensor& x0, const Tensor* cond,
                            const std::vector<double>& ts, WeightKind weights) {
    return intermediate_from_velocity(x0, velocity_eval(student, weights, x0, cond, ts), ts);
}

double boot_lambda(double t, double s) {
    return 1.0 - t * (1.0 - s) / (s * (1.0 - t));
}

namespace {

void check_times(const std::vector<double>& ts, double dt) {
    if (!(dt > 0.0)) {
        throw ConfigError("distill loss: dt must be > 0");
    }
    for (double t : ts) {
        if (t + dt > 1.0 + 1e-12) {
            throw ConfigError("distill loss: s = t + dt exceeds 1 (t=" + std::to_string(t) + ")");
        }
    }
}

std::vector<double> shifted(const std::vector<double>& ts, double dt) {
    std::vector<double> ss(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        ss[i] = std::min(ts[i] + dt, 1.0);
    }
    return ss;
}

// Per-item weights broadcast over the sample elements.
Tensor broadcast_weights(const std::vector<double>& w, const Shape& like, std::size_t numel) {
    Tensor out = Tensor::zeros(like);
    const std::size_t len = numel / w.size();
    for (std::size_t i = 0; i < w.size(); ++i) {
        double* dst = out.data() + i * len;
        for (std::size_t p = 0; p < len; ++p) {
            dst[p] = w[i];
        }
    }
    return out;
}

BatchVelocityFn bind_cond(const CondBatchVelocityFn& teacher, const Tensor* cond) {
    return [&teacher, cond](const Tensor& x, const std::vector<double>& ts) {
        return teacher(x, cond, ts);
    };
}

}  // namespace

Graph::NodeId trajectory_distill_loss(Graph& g, const RecordedField& student,
                                      const CondBatchVelocityFn& bracket,
                                      const CondBatchVelocityFn& teacher, const Tensor& x0,
                                      const Tensor* cond, const std::vector<double>& ts, double dt,
                                      SolverKind slope_kind) {
    check_times(ts, dt);
    const std::vector<double> ss = shifted(ts, dt);
    const Graph::NodeId vs = student.record(g, x0, cond, ss);
    const Tensor vt_val = bracket(x0, cond, ts);
    const Tensor x_t = intermediate_from_velocity(x0, vt_val, ts);
    const Tensor k = teacher_slope_batch(bind_cond(teacher, cond), x_t, ts, dt, slope_kind);

    // Detached target vt + (dt/s)(k - vt), assembled outside the graph.
    Tensor target = vt_val;
    const std::size_t B = ts.size();
    const std::size_t len = target.numel() / B;
    for (std::size_t i = 0; i < B; ++i) {
        const double c = dt / ss[i];
        double* dst = target.data() + i * len;
        const double* kk = k.data() + i * len;
        for (std::size_t p = 0; p < len; ++p) {
            dst[p] += c * (kk[p] - dst[p]);
        }
    }
    return g.mean_all(g.square(g.sub(vs, g.constant(std::move(target)))));
}

Graph::NodeId trajectory_distill_loss(Graph& g, const RecordedField& student,
                                      const CondBatchVelocityFn& teacher, const Tensor& x0,
                                      const Tensor* cond, const std::vector<double>& ts, double dt,
                                      SolverKind slope_kind) {
    const CondBatchVelocityFn self = [&g, &student](const Tensor& x, const Tensor* c,
                                                    const std::vector<double>& t) {
        return g.value(student.record(g, x, c, t));
    };
    return trajectory_distill_loss(g, student, self, teacher, x0, cond, ts, dt, slope_kind);
}

Graph::NodeId pinn_distill_loss(Graph& g, const RecordedField& student,
                                const CondBatchVelocityFn& bracket,
                                const CondBatchVelocityFn& teacher, const Tensor& x0,
                                const Tensor* cond, const std::vector<double>& ts, double dt,
                                SolverKind slope_kind) {
    check_times(ts, dt);
    const std::vector<double> ss = shifted(ts, dt);
    const Graph::NodeId vs = student.record(g, x0, cond, ss);
    const Graph::NodeId vt = student.record(g, x0, cond, ts);
    const Tensor x_t = intermediate_from_velocity(x0, bracket(x0, cond, ts), ts);
    const Tensor k = teacher_slope_batch(bind_cond(teacher, cond), x_t, ts, dt, slope_kind);

    std::vector<double> w(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        w[i] = ss[i] / dt;
    }
    const Graph::NodeId scaled =
        g.mul(g.constant(broadcast_weights(w, x0.shape(), x0.numel())), g.sub(vs, vt));
    const Graph::NodeId lhs = g.add(scaled, vt);
    return g.mean_all(g.square(g.sub(lhs, g.constant(k))));
}

Graph::NodeId pinn_distill_loss(Graph& g, const RecordedField& student,
                                const CondBatchVelocityFn& teacher, const Tensor& x0,
                                const Tensor* cond, const std::vector<double>& ts, double dt,
                                SolverKind slope_kind) {
    const CondBatchVelocityFn self = [&g, &student](const Tensor& x, const Tensor* c,
                                                    const std::vector<double>& t) {
        return g.value(student.record(g, x, c, t));
    };
    return pinn_distill_loss(g, student, self, teacher, x0, cond, ts, dt, slope_kind);
}

Graph::NodeId boot_distill_loss(Graph& g, const RecordedField& student,
                                const CondBatchVelocityFn& bracket,
                                const CondBatchVelocityFn& teacher, const Tensor& x0,
                                const Tensor* cond, const std::vector<double>& ts, double dt) {
    check_times(ts, dt);
    for (double t : ts) {
        if (t >= 1.0) {
            throw ConfigError("boot loss: t must be < 1");
        }
    }
    const std::vector<double> ss = shifted(ts, dt);
    const Graph::NodeId vs = student.record(g, x0, cond, ss);
    const Tensor vt_val = bracket(x0, cond, ts);
    const Tensor x_t = intermediate_from_velocity(x0, vt_val, ts);
    const Tensor k1 = teacher(x_t, cond, ts);

    const std::size_t B = ts.size();
    const std::size_t len = x0.numel() / B;
    Tensor target = Tensor::zeros(x0.shape());
    std::vector<double> inv_lambda(B);
    for (std::size_t i = 0; i < B; ++i) {
        const double lam = boot_lambda(ts[i], ss[i]);
        if (lam == 0.0) {
            throw ConfigError("boot loss: degenerate lambda = 0 (s = t)");
        }
        inv_lambda[i] = 1.0 / lam;
        const double* p0 = x0.data() + i * len;
        const double* pv = vt_val.data() + i * len;
        const double* pxt = x_t.data() + i * len;
        const double* pk = k1.data() + i * len;
        double* dst = target.data() + i * len;
        const double one_minus_t = 1.0 - ts[i];
        for (std::size_t p = 0; p < len; ++p) {
            const double x_phi_t = p0[p] + pv[p];
            const double x_theta = pxt[p] + one_minus_t * pk[p];
            dst[p] = x_phi_t + lam * (x_theta - x_phi_t);
        }
    }
    // (1/lambda^2) ||x_phi(s) - target||^2, folded in as a per-item weight
    // inside the square.
    const Graph::NodeId x_phi_s = g.add(g.constant(x0), vs);
    const Graph::NodeId residual = g.sub(x_phi_s, g.constant(std::move(target)));
    const Graph::NodeId weighted =
        g.mul(g.constant(broadcast_weights(inv_lambda, x0.shape(), x0.numel())), residual);
    return g.mean_all(g.square(weighted));
}

Graph::NodeId boot_distill_loss(Graph& g, const RecordedField& student,
                                const CondBatchVelocityFn& teacher, const Tensor& x0,
                                const Tensor* cond, const std::vector<double>& ts, double dt) {
    const CondBatchVelocityFn self = [&g, &student](const Tensor& x, const Tensor* c,
                                                    const std::vector<double>& t) {
        return g.value(student.record(g, x, c, t));
    };
    return boot_distill_loss(g, student, self, teacher, x0, cond, ts, dt);
}

Graph::NodeId align_loss(Graph& g, const RecordedField& student,
                         const CondBatchVelocityFn& bracket, const CondBatchVelocityFn& teacher,
                         const Tensor& x0, const Tensor* cond, const std::vector<double>& ts) {
    for (double t : ts) {
        if (!(t >= 0.0 && t <= 1.0)) {
            throw ConfigError("align loss: t must lie in [0,1]");
        }
    }
    const Graph::NodeId vt = student.record(g, x0, cond, ts);
    const Tensor x_t = intermediate_from_velocity(x0, bracket(x0, cond, ts), ts);
    const Tensor k1 = teacher(x_t, cond, ts);
    std::vector<double> w(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        w[i] = 1.0 - ts[i];
    }
    const Graph::NodeId weighted =
        g.mul(g.constant(broadcast_weights(w, x0.shape(), x0.numel())), g.sub(vt, g.constant(k1)));
    return g.mean_all(g.square(weighted));
}

Graph::NodeId align_loss(Graph& g, const RecordedField& student,
                         const CondBatchVelocityFn& teacher, const Tensor& x0, const Tensor* cond,
                         const std::vector<double>& ts) {
    const CondBatchVelocityFn self = [&g, &student](const Tensor& x, const Tensor* c,
                                                    const std::vector<double>& t) {
        return g.value(student.record(g, x, c, t));
    };
    return align_loss(g, student, self, teacher, x0, cond, ts);
}

Graph::NodeId boundary_loss(Graph& g, const RecordedField& student,
                            const CondBatchVelocityFn& teacher, const Tensor& x0,
                            const Tensor* cond) {
    const std::vector<double> zeros(x0.shape().empty() ? 0 : x0.shape()[0], 0.0);
    const Graph::NodeId v0 = student.record(g, x0, cond, zeros);
    const Tensor k0 = teacher(x0, cond, zeros);
    return g.mean_all(g.square(g.sub(v0, g.constant(k0))));
}

Graph::NodeId total_loss(Graph& g, Graph::NodeId distill, Graph::NodeId align, Graph::NodeId bc,
                         double lambda_align, double lambda_bc) {
    return g.add(distill, g.add(g.scale(align, lambda_align), g.scale(bc, lambda_bc)));
}

DistillObjective build_distill_objective(Graph& g, const RecordedField& student,
                                         const CondBatchVelocityFn& teacher, const Tensor& x0,
                                         const Tensor* cond, const std::vector<double>& ts,
                                         const DistillConfig& cfg) {
    check_times(ts, cfg.dt);
    const std::vector<double> ss = shifted(ts, cfg.dt);
    const std::size_t B = ts.size();
    const std::size_t len = x0.numel() / B;

    const Graph::NodeId vs = student.record(g, x0, cond, ss);
    const Graph::NodeId vt = student.record(g, x0, cond, ts);
    const Tensor vt_val = g.value(vt);
    const Tensor x_t = intermediate_from_velocity(x0, vt_val, ts);

    // Shared teacher evaluation at (x_t, t): stage one of the slope and the
    // alignment target.
    const Tensor k1 = teacher(x_t, cond, ts);
    Tensor k_slope = k1;
    if (cfg.variant != DistillVariant::Boot && cfg.slope_kind != SolverKind::Euler) {
        double c2 = 0.5, b1 = 0.0, b2 = 1.0;
        if (cfg.slope_kind == SolverKind::Heun) {
            c2 = 1.0;
            b1 = b2 = 0.5;
        } else if (cfg.slope_kind == SolverKind::Ralston) {
            c2 = 2.0 / 3.0;
            b1 = 0.25;
            b2 = 0.75;
        }
        Tensor x_stage = axpy(c2 * cfg.dt, k1, x_t);
        std::vector<double> t_stage(B);
        for (std::size_t i = 0; i < B; ++i) {
            t_stage[i] = std::min(ts[i] + c2 * cfg.dt, 1.0);
        }
        const Tensor k2 = teacher(x_stage, cond, t_stage);
        k_slope = add(scale(k1, b1), scale(k2, b2));
    }

    DistillObjective obj;
    switch (cfg.variant) {
        case DistillVariant::Trajectory: {
            Tensor target = vt_val;
            for (std::size_t i = 0; i < B; ++i) {
                const double c = cfg.dt / ss[i];
                double* dst = target.data() + i * len;
                const double* kk = k_slope.data() + i * len;
                for (std::size_t p = 0; p < len; ++p) {
                    dst[p] += c * (kk[p] - dst[p]);
                }
            }
            obj.distill = g.mean_all(g.square(g.sub(vs, g.constant(std::move(target)))));
            break;
        }
        case DistillVariant::Pinn: {
            std::vector<double> w(B);
            for (std::size_t i = 0; i < B; ++i) {
                w[i] = ss[i] / cfg.dt;
            }
            const Graph::NodeId scaled =
                g.mul(g.constant(broadcast_weights(w, x0.shape(), x0.numel())), g.sub(vs, vt));
            obj.distill = g.mean_all(g.square(g.sub(g.add(scaled, vt), g.constant(k_slope))));
            break;
        }
        case DistillVariant::Boot: {
            Tensor target = Tensor::zeros(x0.shape());
            std::vector<double> inv_lambda(B);
            for (std::size_t i = 0; i < B; ++i) {
                const double lam = boot_lambda(ts[i], ss[i]);
                if (lam == 0.0) {
                    throw ConfigError("boot loss: degenerate lambda = 0");
                }
                inv_lambda[i] = 1.0 / lam;
                const double* p0 = x0.data() + i * len;
                const double* pv = vt_val.data() + i * len;
                const double* pxt = x_t.data() + i * len;
                const double* pk = k1.data() + i * len;
                double* dst = target.data() + i * len;
                const double one_minus_t = 1.0 - ts[i];
                for (std::size_t p = 0; p < len; ++p) {
                    const double x_phi_t = p0[p] + pv[p];
                    const double x_theta = pxt[p] + one_minus_t * pk[p];
                    dst[p] = x_phi_t + lam * (x_theta - x_phi_t);
                }
            }
            const Graph::NodeId x_phi_s = g.add(g.constant(x0), vs);
            const Graph::NodeId weighted =
                g.mul(g.constant(broadcast_weights(inv_lambda, x0.shape(), x0.numel())),
                      g.sub(x_phi_s, g.constant(std::move(target))));
            obj.distill = g.mean_all(g.square(weighted));
            break;
        }
    }

    {
        std::vector<double> w(B);
        for (std::size_t i = 0; i < B; ++i) {
            w[i] = 1.0 - ts[i];
        }
        const Graph::NodeId weighted = g.mul(
            g.constant(broadcast_weights(w, x0.shape(), x0.numel())), g.sub(vt, g.constant(k1)));
        obj.align = g.mean_all(g.square(weighted));
    }
    obj.bc = boundary_loss(g, student, teacher, x0, cond);
    obj.total = total_loss(g, obj.distill, obj.align, obj.bc, cfg.lambda_align, cfg.lambda_bc);
    return obj;
}

namespace {

struct DistillBatch {
    Tensor x0;
    Tensor x_lr;
    std::vector<double> ts;
};

// Same draw order as the stage-1 batch: LR noise, time, perturbation noise.
DistillBatch assemble_distill_batch(const Tensor& x1_batch, const DegradationSpec& deg,
                                    double sigma_p, const TimeRange& range, double t_upper,
                                    Rng& rng) {
    const std::size_t B = x1_batch.shape()[0];
    const std::size_t len = x1_batch.numel() / B;
    Shape sample_shape(x1_batch.shape().begin() + 1, x1_batch.shape().end());
    DistillBatch db;
    db.x0 = Tensor::zeros(x1_batch.shape());
    db.x_lr = Tensor::zeros(x1_batch.shape());
    db.ts.resize(B);
    const double keep = std::sqrt(1.0 - sigma_p * sigma_p);
    for (std::size_t i = 0; i < B; ++i) {
        std::vector<double> xi(x1_batch.data() + i * len, x1_batch.data() + (i + 1) * len);
        const Tensor x1 = Tensor::raw(sample_shape, std::move(xi));
        const Tensor xlr = build_lr_condition(x1, deg, rng);
        db.ts[i] = rng.uniform(range.t_min, t_upper);
        double* plr = db.x_lr.data() + i * len;
        double* p0 = db.x0.data() + i * len;
        for (std::size_t p = 0; p < len; ++p) {
            plr[p] = xlr[p];
            p0[p] = keep * xlr[p] + sigma_p * rng.normal();
        }
    }
    return db;
}

}  // namespace

DistillTrainResult distill_train(const VelocityModel& teacher, const BatchSource& data,
                                 const DistillTrainConfig& cfg,
                                 const VelocityModel* initial_student) {
    cfg.degradation.validate();
    cfg.distill.validate();
    if (!(cfg.sigma_p >= 0.0 && cfg.sigma_p <= 1.0)) {
        throw ConfigError("distill: sigma_p must lie in [0,1]");
    }

    DistillTrainResult out;
    if (initial_student != nullptr) {
        if (!(initial_student->arch == teacher.arch)) {
            throw ConfigError("distill: teacher/student architecture mismatch");
        }
        out.student = *initial_student;
        out.student.frozen = false;
    } else {
        // One-step student starts from the teacher's evaluation weights.
        out.student.arch = teacher.arch;
        out.student.params = teacher.ema;
        out.student.ema = teacher.ema;
        out.student.frozen = false;
    }

    const ModelField teacher_field(teacher, WeightKind::Ema, false);
    const CondBatchVelocityFn teacher_fn = teacher_field.as_plain_fn();
    const bool conditional = teacher.arch.has_cond();

    AdamOptimizer opt({cfg.distill.lr, cfg.distill.warmup});
    Rng rng(cfg.distill.seed + 0xd15711ULL);
    out.trace.reserve(static_cast<std::size_t>(cfg.distill.iterations));
    ParamSet last_good = out.student.params;
    ParamSet last_good_ema = out.student.ema;
    using Clock = std::chrono::steady_clock;

    for (int iter = 1; iter <= cfg.distill.iterations; ++iter) {
        const auto tick = Clock::now();
        const Tensor x1 = stack_batch(data, rng, cfg.distill.batch);
        const DistillBatch db =
            assemble_distill_batch(x1, cfg.degradation, cfg.sigma_p, cfg.distill.t_range,
                                   cfg.distill.t_upper(), rng);
        const Tensor* cond = conditional ? &db.x_lr : nullptr;

        Graph g;
        const ModelField student_field(out.student, WeightKind::Live, true, "student");
        const DistillObjective obj =
            build_distill_objective(g, student_field, teacher_fn, db.x0, cond, db.ts, cfg.distill);
        const double total_value = g.value(obj.total)[0];
        if (!std::isfinite(total_value)) {
            if (!cfg.lastgood_path.empty()) {
                VelocityModel snapshot;
                snapshot.arch = out.student.arch;
                snapshot.params = last_good;
                snapshot.ema = last_good_ema;
                save_checkpoint(snapshot, cfg.lastgood_path, "stage = distill\n");
            }
            throw TrainingError("distillation: non-finite loss at iteration " +
                                std::to_string(iter));
        }
        last_good = out.student.params;
        last_good_ema = out.student.ema;

        DistillTraceRow row;
        row.iteration = iter;
        row.distill = g.value(obj.distill)[0];
        row.align = g.value(obj.align)[0];
        row.bc = g.value(obj.bc)[0];
        row.total = total_value;

        const GradMap grads = gradients(g, obj.total, out.student.params, "student");
        opt.step(out.student, grads);
        ema_update(out.student, cfg.distill.ema_ratio);

        row.lr = opt.effective_lr(iter);
        row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - tick).count();
        out.trace.push_back(row);
        if (cfg.log_every > 0 && iter % cfg.log_every == 0) {
            std::fprintf(stderr, "[distill] iter %d/%d total %.6f\n", iter,
                         cfg.distill.iterations, row.total);
        }
    }
    return out;
}

}  // namespace flowsr
