#include "flowsr/solvers.hpp"

#include <algorithm>
#include <cmath>

#include "flowsr/errors.hpp"

namespace flowsr {

SolverKind solver_kind_from_string(const std::string& s) {
    if (s == "euler") return SolverKind::Euler;
    if (s == "midpoint") return SolverKind::Midpoint;
    if (s == "heun") return SolverKind::Heun;
    if (s == "ralston") return SolverKind::Ralston;
    if (s == "rk45") return SolverKind::Rk45;
    throw ConfigError("unknown solver kind '" + s + "'");
}

std::string to_string(SolverKind k) {
    switch (k) {
        case SolverKind::Euler: return "euler";
        case SolverKind::Midpoint: return "midpoint";
        case SolverKind::Heun: return "heun";
        case SolverKind::Ralston: return "ralston";
        case SolverKind::Rk45: return "rk45";
    }
    return "?";
}

void SolverSpec::validate() const {
    if (kind == SolverKind::Rk45) {
        if (!(tol > 0.0)) {
            throw ConfigError("solver: rk45 tolerance must be > 0");
        }
    } else if (steps < 1) {
        throw ConfigError("solver: fixed-step solvers need steps >= 1");
    }
    if (record_stride < 0) {
        throw ConfigError("solver: record_stride must be >= 0");
    }
}

namespace {

void record_state(Trajectory& traj, const SolverSpec& spec, std::int64_t step_index, double t,
                  const Tensor& x, bool force) {
    if (!force && (spec.record_stride == 0 || step_index % spec.record_stride != 0)) {
        return;
    }
    traj.times.push_back(t);
    traj.states.push_back(x);
}

struct FixedStepScheme {
    // stage offset c2 and weights (b1, b2); Euler encoded as b2 = 0.
    double c2, b1, b2;
};

FixedStepScheme scheme_for(SolverKind kind) {
    switch (kind) {
        case SolverKind::Euler: return {0.0, 1.0, 0.0};
        case SolverKind::Midpoint: return {0.5, 0.0, 1.0};
        case SolverKind::Heun: return {1.0, 0.5, 0.5};
        case SolverKind::Ralston: return {2.0 / 3.0, 0.25, 0.75};
        case SolverKind::Rk45: break;
    }
    throw UsageError("scheme_for: not a fixed-step kind");
}

SolveResult solve_fixed(const VelocityFn& v, const Tensor& x0, const SolverSpec& spec) {
    const FixedStepScheme sch = scheme_for(spec.kind);
    SolveResult res;
    res.trajectory.times.reserve(2);
    Tensor x = x0;
    const double h = 1.0 / static_cast<double>(spec.steps);
    record_state(res.trajectory, spec, 0, 0.0, x, true);
    for (int i = 0; i < spec.steps; ++i) {
        const double t = static_cast<double>(i) * h;
        Tensor k1 = v(x, t);
        ++res.trajectory.nfe;
        Tensor slope;
        if (sch.b2 == 0.0) {
            slope = std::move(k1);
        } else {
            Tensor k2 = v(axpy(sch.c2 * h, k1, x), t + sch.c2 * h);
            ++res.trajectory.nfe;
            slope = add(scale(k1, sch.b1), scale(k2, sch.b2));
        }
        x = axpy(h, slope, x);
        ++res.trajectory.accepted;
        const double t_next = static_cast<double>(i + 1) * h;
        record_state(res.trajectory, spec, i + 1, t_next, x, i + 1 == spec.steps);
    }
    res.x1 = std::move(x);
    return res;
}

// Dormand-Prince 5(4) coefficients.
constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
constexpr double kB5[7] = {35.0 / 384,    0.0,        500.0 / 1113, 125.0 / 192,
                           -2187.0 / 6784, 11.0 / 84, 0.0};
constexpr double kB4[7] = {5179.0 / 57600,    0.0,          7571.0 / 16695, 393.0 / 640,
                           -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};

SolveResult solve_rk45(const VelocityFn& v, const Tensor& x0, const SolverSpec& spec) {
    SolveResult res;
    Trajectory& traj = res.trajectory;
    const double t_end = 1.0;
    const double atol = spec.tol;
    const double rtol = spec.tol;
    const double safety = 0.9;
    const double min_factor = 0.2;
    const double max_factor = 5.0;
    const double h_floor = 1e-10;
    // Hairer-style PI exponents for a 4th-order error estimate.
    const double beta = 0.04;
    const double expo = 0.2 - beta * 0.75;

    Tensor x = x0;
    double t = 0.0;
    double h = (t_end - 0.0) / 100.0;
    double err_prev = 1e-4;

    record_state(traj, spec, 0, t, x, true);
    Tensor k[7];
    k[0] = v(x, t);  // the +1 initial evaluation; FSAL reuses stage 7 afterwards
    ++traj.nfe;

    std::int64_t step_index = 0;
    while (t < t_end) {
        h = std::min(h, t_end - t);
        if (h < h_floor) {
            throw NumericError("rk45: step size fell below 1e-10 at t=" + std::to_string(t) +
                               " (stiff field)");
        }
        for (int s = 1; s < 7; ++s) {
            Tensor xs = x;
            for (int j = 0; j < s; ++j) {
                if (kA[s][j] != 0.0) {
                    for (std::size_t i = 0; i < xs.numel(); ++i) {
                        xs[i] += h * kA[s][j] * k[j][i];
                    }
                }
            }
            k[s] = v(xs, t + kC[s] * h);
            ++traj.nfe;
        }
        Tensor x5 = x;
        for (int s = 0; s < 7; ++s) {
            if (kB5[s] != 0.0) {
                for (std::size_t i = 0; i < x5.numel(); ++i) {
                    x5[i] += h * kB5[s] * k[s][i];
                }
            }
        }
        // Scaled RMS of the embedded error.
        double err_sq = 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            double e = 0.0;
            for (int s = 0; s < 7; ++s) {
                e += (kB5[s] - kB4[s]) * k[s][i];
            }
            e *= h;
            const double sc = atol + rtol * std::max(std::abs(x[i]), std::abs(x5[i]));
            err_sq += (e / sc) * (e / sc);
        }
        const double err = std::sqrt(err_sq / static_cast<double>(x.numel()));

        if (err <= 1.0) {
            t += h;
            x = std::move(x5);
            ++traj.accepted;
            ++step_index;
            record_state(traj, spec, step_index, t, x, t >= t_end);
            k[0] = k[6];  // FSAL
            const double e = std::max(err, 1e-10);
            double factor = safety * std::pow(e, -expo) * std::pow(err_prev, beta);
            factor = std::clamp(factor, min_factor, max_factor);
            h *= factor;
            err_prev = e;
        } else {
            ++traj.rejected;
            const double factor =
                std::clamp(safety * std::pow(err, -0.2), min_factor, 1.0);
            h *= factor;
        }
    }
    res.x1 = std::move(x);
    return res;
}

}  // namespace

SolveResult solve(const VelocityFn& v, const Tensor& x0, const SolverSpec& spec) {
    spec.validate();
    if (!x0.all_finite()) {
        throw NumericError("solve: initial state is not finite");
    }
    if (spec.kind == SolverKind::Rk45) {
        return solve_rk45(v, x0, spec);
    }
    return solve_fixed(v, x0, spec);
}

Tensor estimate_final(const Tensor& x_t, double t, const Tensor& v_value) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw ConfigError("estimate_final: t must lie in [0,1]");
    }
    return axpy(1.0 - t, v_value, x_t);
}

Tensor teacher_slope_batch(const BatchVelocityFn& v, const Tensor& x,
                           const std::vector<double>& ts, double dt, SolverKind kind) {
    if (kind == SolverKind::Rk45) {
        throw ConfigError("teacher_slope: kind must be a fixed-step scheme");
    }
    for (double t : ts) {
        if (t + dt > 1.0 + 1e-12) {
            throw ConfigError("teacher_slope: t + dt exceeds 1");
        }
    }
    const FixedStepScheme sch = scheme_for(kind);
    Tensor k1 = v(x, ts);
    if (sch.b2 == 0.0) {
        return k1;
    }
    std::vector<double> ts2(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        ts2[i] = std::min(ts[i] + sch.c2 * dt, 1.0);
    }
    Tensor k2 = v(axpy(sch.c2 * dt, k1, x), ts2);
    return add(scale(k1, sch.b1), scale(k2, sch.b2));
}

Tensor teacher_slope(const VelocityFn& v, const Tensor& x, double t, double dt, SolverKind kind) {
    BatchVelocityFn bf = [&v](const Tensor& xs, const std::vector<double>& ts) {
        return v(xs, ts[0]);
    };
    return teacher_slope_batch(bf, x, {t}, dt, kind);
}

double straightness(const CondBatchVelocityFn& v, const CouplingSampler& sampler, int time_points,
                    int samples_per_point, std::uint64_t seed) {
    if (time_points < 1 || samples_per_point < 1) {
        throw ConfigError("straightness: K and N must be >= 1");
    }
    Rng rng(seed);
    const std::size_t n = static_cast<std::size_t>(samples_per_point);
    double total = 0.0;
    for (int j = 0; j < time_points; ++j) {
        const double t = (static_cast<double>(j) + 0.5) / static_cast<double>(time_points);
        // Assemble one batch of interpolated states per time point.
        Tensor xt, chord, cond;
        bool has_cond = false;
        std::size_t sample_len = 0, cond_len = 0;
        for (std::size_t i = 0; i < n; ++i) {
            Coupling c = sampler(rng);
            if (i == 0) {
                sample_len = c.x0.numel();
                has_cond = c.cond.numel() > 0;
                cond_len = c.cond.numel();
                Shape bs = c.x0.shape();
                bs.insert(bs.begin(), n);
                xt = Tensor::zeros(bs);
                chord = Tensor::zeros(bs);
                if (has_cond) {
                    Shape cs = c.cond.shape();
                    cs.insert(cs.begin(), n);
                    cond = Tensor::zeros(cs);
                }
            }
            double* xdst = xt.data() + i * sample_len;
            double* cdst = chord.data() + i * sample_len;
            for (std::size_t p = 0; p < sample_len; ++p) {
                cdst[p] = c.x1[p] - c.x0[p];
                xdst[p] = c.x0[p] + t * cdst[p];
            }
            if (has_cond) {
                std::copy(c.cond.data(), c.cond.data() + cond_len,
                          cond.data() + i * cond_len);
            }
        }
        const Tensor vel = v(xt, has_cond ? &cond : nullptr, std::vector<double>(n, t));
        double acc = 0.0;
        for (std::size_t p = 0; p < vel.numel(); ++p) {
            const double d = vel[p] - chord[p];
            acc += d * d;
        }
        total += acc / static_cast<double>(n);
    }
    return total / static_cast<double>(time_points);
}

}  // namespace flowsr
