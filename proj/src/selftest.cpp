#include "flowsr/selftest.hpp"

#include <cmath>
#include <sstream>

#include "flowsr/degradation.hpp"
#include "flowsr/distill.hpp"
#include "flowsr/errors.hpp"
#include "flowsr/oracles.hpp"
#include "flowsr/rng.hpp"
#include "flowsr/solvers.hpp"
#include "flowsr/teacher.hpp"

namespace flowsr {

double loss_value(const VelocityModel& model, const LossBuilder& builder) {
    Graph g;
    return g.value(builder(g, model))[0];
}

GradMap loss_gradients(const VelocityModel& model, const LossBuilder& builder) {
    Graph g;
    const Graph::NodeId loss = builder(g, model);
    return gradients(g, loss, model.params, "model");
}

GradMap fd_gradients(const VelocityModel& model, const LossBuilder& builder, double h) {
    VelocityModel probe = model;
    GradMap out;
    for (auto& [name, p] : probe.params) {
        Tensor grad = Tensor::zeros(p.shape());
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double saved = p[i];
            p[i] = saved + h;
            const double up = loss_value(probe, builder);
            p[i] = saved - h;
            const double down = loss_value(probe, builder);
            p[i] = saved;
            grad[i] = (up - down) / (2.0 * h);
        }
        out[name] = std::move(grad);
    }
    return out;
}

double max_rel_error(const GradMap& a, const GradMap& b, double floor) {
    double worst = 0.0;
    for (const auto& [name, ga] : a) {
        const Tensor& gb = b.at(name);
        for (std::size_t i = 0; i < ga.numel(); ++i) {
            const double denom = std::max({std::abs(ga[i]), std::abs(gb[i]), floor});
            worst = std::max(worst, std::abs(ga[i] - gb[i]) / denom);
        }
    }
    return worst;
}

void randomize_params(VelocityModel& model, std::uint64_t seed, double stddev) {
    Rng rng(seed);
    for (auto& [name, p] : model.params) {
        rng.fill_normal(p.data(), p.numel(), stddev);
    }
    model.ema = model.params;
}

bool all_pass(const std::vector<CheckLine>& lines) {
    for (const auto& l : lines) {
        if (!l.pass) {
            return false;
        }
    }
    return true;
}

double loglog_slope(const std::vector<double>& h, const std::vector<double>& err) {
    if (h.size() != err.size() || h.size() < 2) {
        throw UsageError("loglog_slope: need matching sequences of length >= 2");
    }
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double n = static_cast<double>(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double x = std::log(h[i]);
        const double y = std::log(err[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

struct GradCase {
    std::string name;
    LossBuilder builder;
};

// Small random models plus one fixed batch per architecture; every loss the
// training stages use, differentiated against central differences.
std::vector<CheckLine> grad_battery_for(const ModelArch& arch, const std::string& tag,
                                        std::uint64_t seed) {
    std::vector<CheckLine> lines;
    VelocityModel student = init_velocity_model(arch, seed);
    randomize_params(student, seed + 1);
    VelocityModel teacher = init_velocity_model(arch, seed + 2);
    randomize_params(teacher, seed + 3, 0.2);
    teacher.frozen = true;
    const ModelField teacher_field(teacher, WeightKind::Ema, false);
    const CondBatchVelocityFn teacher_fn = teacher_field.as_plain_fn();

    const std::size_t B = 3;
    Rng rng(seed + 4);
    Tensor x1 = Tensor::zeros(arch.x_shape(B));
    for (std::size_t i = 0; i < x1.numel(); ++i) {
        x1[i] = 0.8 * std::tanh(rng.normal());
    }
    DegradationSpec deg;
    deg.scale = arch.kind == Backbone::Conv ? 2 : 1;
    deg.sigma_n = 0.03;
    const TimeRange range{0.05, 0.9};
    FlowBatch batch = assemble_flow_batch(x1, deg, 0.4, range, rng);
    batch.conditional = arch.has_cond();
    const Tensor x0 = batch.x0;
    const Tensor* cond = batch.conditional ? &batch.x_lr : nullptr;
    const std::vector<double> ts = batch.ts;
    const double dt = 0.05;

    std::vector<GradCase> cases;
    cases.push_back({"flow_matching_l2", [batch](Graph& g, const VelocityModel& m) {
                         const ModelField f(m, WeightKind::Live, true);
                         return flow_matching_loss(g, f, batch, Discrepancy::L2);
                     }});
    cases.push_back({"flow_matching_l1", [batch](Graph& g, const VelocityModel& m) {
                         const ModelField f(m, WeightKind::Live, true);
                         return flow_matching_loss(g, f, batch, Discrepancy::L1);
                     }});
    cases.push_back({"distill_trajectory",
                     [x0, cond, ts, dt, teacher_fn](Graph& g, const VelocityModel& m) {
                         const ModelField f(m, WeightKind::Live, true);
                         return trajectory_distill_loss(g, f, teacher_fn, x0, cond, ts, dt,
                                                        SolverKind::Midpoint);
                     }});
    cases.push_back({"distill_pinn",
                     [x0, cond, ts, dt, teacher_fn](Graph& g, const VelocityModel& m) {
                         const ModelField f(m, WeightKind::Live, true);
                         return pinn_distill_loss(g, f, teacher_fn, x0, cond, ts, dt,
                                                  SolverKind::Euler);
                     }});
    cases.push_back({"distill_boot",
                     [x0, cond, ts, dt, teacher_fn](Graph& g, const VelocityModel& m) {
                         const ModelField f(m, WeightKind::Live, true);
                         return boot_distill_loss(g, f, teacher_fn, x0, cond, ts, dt);
                     }});
    cases.push_back({"align", [x0, cond, ts, teacher_fn](Graph& g, const VelocityModel& m) {
                         const ModelField f(m, WeightKind::Live, true);
                         return align_loss(g, f, teacher_fn, x0, cond, ts);
                     }});
    cases.push_back({"boundary", [x0, cond, teacher_fn](Graph& g, const VelocityModel& m) {
                         const ModelField f(m, WeightKind::Live, true);
                         return boundary_loss(g, f, teacher_fn, x0, cond);
                     }});
    cases.push_back({"total", [x0, cond, ts, dt, teacher_fn](Graph& g, const VelocityModel& m) {
                         const ModelField f(m, WeightKind::Live, true);
                         DistillConfig dc;
                         dc.dt = dt;
                         const DistillObjective obj =
                             build_distill_objective(g, f, teacher_fn, x0, cond, ts, dc);
                         return obj.total;
                     }});

    for (const auto& c : cases) {
        const GradMap ad = loss_gradients(student, c.builder);
        const GradMap fd = fd_gradients(student, c.builder, 1e-5);
        const double err = max_rel_error(ad, fd);
        lines.push_back({tag + "/" + c.name, err <= 1e-5, "max rel err " + fmt(err)});
    }
    return lines;
}

}  // namespace

std::vector<CheckLine> check_grad_battery() {
    ModelArch mlp;
    mlp.kind = Backbone::Mlp;
    mlp.data_dim = 2;
    mlp.cond_dim = 2;
    mlp.hidden = {8, 8};
    mlp.time_embed_dim = 4;

    ModelArch conv;
    conv.kind = Backbone::Conv;
    conv.height = 8;
    conv.width = 8;
    conv.channels = 1;
    conv.cond_channels = 1;
    conv.conv_channels = {4, 6, 4, 3};
    conv.time_embed_dim = 4;

    std::vector<CheckLine> lines = grad_battery_for(mlp, "mlp", 101);
    std::vector<CheckLine> conv_lines = grad_battery_for(conv, "conv", 202);
    lines.insert(lines.end(), conv_lines.begin(), conv_lines.end());
    return lines;
}

std::vector<CheckLine> check_adjoint_battery() {
    std::vector<CheckLine> lines;
    Rng rng(7);
    DegradationSpec spec;
    spec.scale = 4;

    double worst_adjoint = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor x = Tensor::zeros({1, 16, 16});
        Tensor y = Tensor::zeros({1, 4, 4});
        rng.fill_normal(x.data(), x.numel());
        rng.fill_normal(y.data(), y.numel());
        const double lhs = dot(downsample(x, spec), y);
        const double rhs = dot(x, transpose_upsample(y, spec));
        worst_adjoint = std::max(worst_adjoint, std::abs(lhs - rhs));
    }
    lines.push_back({"adjoint_identity", worst_adjoint <= 1e-10,
                     "max |<Hx,y> - <x,HTy>| = " + fmt(worst_adjoint)});

    double worst_right_inverse = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor y = Tensor::zeros({1, 4, 4});
        rng.fill_normal(y.data(), y.numel());
        const Tensor round = downsample(lift(y, spec), spec);
        worst_right_inverse = std::max(worst_right_inverse, max_abs_diff(round, y));
    }
    lines.push_back({"lift_right_inverse", worst_right_inverse <= 1e-12,
                     "max |H(lift(y)) - y| = " + fmt(worst_right_inverse)});

    // H H^T = (1/s^2) I on the LR space, checked on basis vectors.
    double worst_hht = 0.0;
    for (std::size_t j = 0; j < 16; ++j) {
        Tensor e = Tensor::zeros({1, 4, 4});
        e[j] = 1.0;
        const Tensor out = downsample(transpose_upsample(e, spec), spec);
        for (std::size_t i = 0; i < out.numel(); ++i) {
            const double expected = i == j ? 1.0 / 16.0 : 0.0;
            worst_hht = std::max(worst_hht, std::abs(out[i] - expected));
        }
    }
    lines.push_back({"hht_scaled_identity", worst_hht <= 1e-14,
                     "max |HHT - I/s^2| = " + fmt(worst_hht)});

    double worst_proj = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = Tensor::zeros({1, 16, 16});
        rng.fill_normal(x.data(), x.numel());
        const Tensor once = lift(downsample(x, spec), spec);
        const Tensor twice = lift(downsample(once, spec), spec);
        worst_proj = std::max(worst_proj, max_abs_diff(once, twice));
    }
    lines.push_back({"lift_h_projection", worst_proj <= 1e-12,
                     "max |P^2 - P| = " + fmt(worst_proj)});

    // Variance-preserving perturbation keeps the per-pixel second moment.
    {
        Rng vp_rng(99);
        const double sigma_p = 0.5;
        const double keep = std::sqrt(1.0 - sigma_p * sigma_p);
        double acc = 0.0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) {
            const double xlr = vp_rng.normal();  // unit second moment
            const double x0 = keep * xlr + sigma_p * vp_rng.normal();
            acc += x0 * x0;
        }
        const double second_moment = acc / n;
        const bool ok = std::abs(second_moment - 1.0) <= 0.02;
        lines.push_back(
            {"vp_second_moment", ok, "E[x0^2] = " + fmt(second_moment) + " over 1e5 draws"});
    }
    return lines;
}

std::vector<CheckLine> check_solver_order_battery() {
    std::vector<CheckLine> lines;
    const VelocityFn field = [](const Tensor& x, double) { return x; };
    const double exact = std::exp(1.0);

    const struct {
        SolverKind kind;
        double expect;
        double tol;
    } fixed[] = {
        {SolverKind::Euler, 1.0, 0.1},
        {SolverKind::Midpoint, 2.0, 0.15},
        {SolverKind::Heun, 2.0, 0.15},
        {SolverKind::Ralston, 2.0, 0.15},
    };
    for (const auto& fc : fixed) {
        std::vector<double> hs, errs;
        for (int p = 3; p <= 8; ++p) {
            const int steps = 1 << p;
            SolverSpec spec;
            spec.kind = fc.kind;
            spec.steps = steps;
            const SolveResult res = solve(field, Tensor::full({1}, 1.0), spec);
            hs.push_back(1.0 / static_cast<double>(steps));
            errs.push_back(std::abs(res.x1[0] - exact));
            const std::int64_t expected_nfe =
                static_cast<std::int64_t>(steps) * (fc.kind == SolverKind::Euler ? 1 : 2);
            if (res.trajectory.nfe != expected_nfe) {
                lines.push_back({"nfe_" + to_string(fc.kind), false,
                                 "nfe " + std::to_string(res.trajectory.nfe) + " != " +
                                     std::to_string(expected_nfe)});
            }
        }
        const double slope = loglog_slope(hs, errs);
        lines.push_back({"order_" + to_string(fc.kind), std::abs(slope - fc.expect) <= fc.tol,
                         "slope " + fmt(slope)});
    }

    bool nfe_ok = true;
    std::string nfe_detail;
    bool tol_ok = true;
    double prev_err = -1.0;
    bool monotone_ok = true;
    for (double tol : {1e-3, 5e-4, 2.5e-4, 1e-4, 1e-5, 1e-6}) {
        SolverSpec spec;
        spec.kind = SolverKind::Rk45;
        spec.tol = tol;
        const SolveResult res = solve(field, Tensor::full({1}, 1.0), spec);
        const double err = std::abs(res.x1[0] - exact);
        if (err > 10.0 * tol) {
            tol_ok = false;
        }
        if (prev_err >= 0.0 && err > prev_err) {
            monotone_ok = false;
        }
        prev_err = err;
        const std::int64_t expected =
            1 + 6 * (res.trajectory.accepted + res.trajectory.rejected);
        if (res.trajectory.nfe != expected) {
            nfe_ok = false;
            nfe_detail = "nfe " + std::to_string(res.trajectory.nfe) + " != " +
                         std::to_string(expected);
        }
    }
    lines.push_back({"rk45_tolerance", tol_ok, "endpoint error <= 10*tol at each tol"});
    lines.push_back({"rk45_tol_monotone", monotone_ok, "halving tol never increased error"});
    lines.push_back({"rk45_nfe_accounting", nfe_ok,
                     nfe_ok ? "nfe = 1 + 6*(accepted+rejected)" : nfe_detail});
    return lines;
}

std::vector<CheckLine> check_oracle_battery() {
    std::vector<CheckLine> lines;
    // Analytic-vs-MC agreement is the oracle's construction gate.
    bool gate_ok = true;
    std::string gate_detail = "analytic matches MC on the validation grid";
    try {
        (void)GaussianFlowOracle::make({1.0, 1.0});
    } catch (const std::exception& e) {
        gate_ok = false;
        gate_detail = e.what();
    }
    lines.push_back({"gaussian_oracle_gate", gate_ok, gate_detail});

    // The analytic field transports N(0, sigma0^2) to N(0, sigma1^2).
    {
        const GaussianFlowSpec spec{1.0, 2.0};
        const VelocityFn field = [&spec](const Tensor& x, double t) {
            return scale(x, gaussian_velocity_slope(spec, t));
        };
        Rng rng(31);
        double acc = 0.0;
        const int n = 10000;
        SolverSpec s;
        s.kind = SolverKind::Midpoint;
        s.steps = 64;
        for (int i = 0; i < n; ++i) {
            const double x0 = spec.sigma0 * rng.normal();
            const SolveResult res = solve(field, Tensor::full({1}, x0), s);
            acc += res.x1[0] * res.x1[0];
        }
        const double var = acc / n;
        const double target = spec.sigma1 * spec.sigma1;
        const bool ok = std::abs(var - target) <= 0.03 * target;
        lines.push_back({"transport_variance", ok,
                         "endpoint var " + fmt(var) + " vs " + fmt(target)});
    }

    // Exact linear-ODE solution against an independent RK45 integration.
    {
        const GaussianFlowSpec spec{1.0, 1.0};
        const TimeCoefficientFn a = [&spec](double t) {
            return gaussian_velocity_slope(spec, t);
        };
        const double closed = linear_ode_solution(a, 1.3, 1.0);
        SolverSpec s;
        s.kind = SolverKind::Rk45;
        s.tol = 1e-9;
        const SolveResult res =
            solve([&a](const Tensor& x, double t) { return scale(x, a(t)); },
                  Tensor::full({1}, 1.3), s);
        const double diff = std::abs(closed - res.x1[0]);
        lines.push_back({"linear_ode_cross_check", diff <= 1e-8,
                         "|closed - rk45| = " + fmt(diff)});
    }
    return lines;
}

}  // namespace flowsr
