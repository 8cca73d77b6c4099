#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flowsr/rng.hpp"
#include "flowsr/tensor.hpp"

namespace flowsr {

enum class SolverKind { Euler, Midpoint, Heun, Ralston, Rk45 };

SolverKind solver_kind_from_string(const std::string& s);
std::string to_string(SolverKind k);

struct SolverSpec {
    SolverKind kind = SolverKind::Rk45;
    int steps = 32;       // fixed-step kinds
    double tol = 1e-3;    // rk45: absolute and relative tolerance
    int record_stride = 0;  // 0: endpoints only; k: keep every k-th state

    void validate() const;
};

// Ordered (t, x) states with strictly increasing t from 0 to 1, plus solver
// effort counters. nfe counts every velocity evaluation.
struct Trajectory {
    std::vector<double> times;
    std::vector<Tensor> states;
    std::int64_t nfe = 0;
    std::int64_t accepted = 0;
    std::int64_t rejected = 0;
};

// Velocity field on a single state; the condition, if any, is bound inside.
using VelocityFn = std::function<Tensor(const Tensor& x, double t)>;
// Batched field with one time per item.
using BatchVelocityFn =
    std::function<Tensor(const Tensor& x, const std::vector<double>& ts)>;

struct SolveResult {
    Tensor x1;
    Trajectory trajectory;
};

// Integrates dx/dt = v(x,t) from t=0 to t=1. Fixed-step kinds take exactly
// `steps` uniform steps; rk45 is embedded Dormand-Prince 5(4) with FSAL and a
// PI controller (safety 0.9, growth clamp [0.2, 5]). A step size below 1e-10
// raises NumericError.
SolveResult solve(const VelocityFn& v, const Tensor& x0, const SolverSpec& spec);

// Final-state estimate from one evaluation: x + (1-t) * v.
Tensor estimate_final(const Tensor& x_t, double t, const Tensor& v_value);

// Effective slope k of one explicit step of size dt, so the implied update is
// x + dt*k. Euler: v(x,t); Midpoint: v at t+dt/2; Heun: average of endpoint
// slopes; Ralston: 1/4 k1 + 3/4 k2 with the stage at t + 2dt/3.
Tensor teacher_slope(const VelocityFn& v, const Tensor& x, double t, double dt, SolverKind kind);
// Batched variant with a per-item t and a shared dt.
Tensor teacher_slope_batch(const BatchVelocityFn& v, const Tensor& x,
                           const std::vector<double>& ts, double dt, SolverKind kind);

// One coupling draw: per-sample endpoint tensors (no batch dimension) and an
// optional per-sample condition (empty when the field is unconditional).
struct Coupling {
    Tensor x0;
    Tensor x1;
    Tensor cond;
};
using CouplingSampler = std::function<Coupling(Rng&)>;

// Conditional batched field: cond is nullptr for unconditional fields.
using CondBatchVelocityFn =
    std::function<Tensor(const Tensor& x, const Tensor* cond, const std::vector<double>& ts)>;

// S(v) = integral over t of E || v(x_t,t) - (x1 - x0) ||^2, estimated by a
// midpoint rule over K uniform time points with N Monte-Carlo couplings each.
// The squared norm sums over dimensions; the expectation averages over draws.
double straightness(const CondBatchVelocityFn& v, const CouplingSampler& sampler, int time_points,
                    int samples_per_point, std::uint64_t seed);

}  // namespace flowsr
