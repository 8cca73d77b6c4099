#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flowsr/degradation.hpp"
#include "flowsr/graph.hpp"
#include "flowsr/model.hpp"
#include "flowsr/rng.hpp"
#include "flowsr/solvers.hpp"
#include "flowsr/tensor.hpp"

namespace flowsr {

enum class Discrepancy { L1, L2 };
Discrepancy discrepancy_from_string(const std::string& s);
std::string to_string(Discrepancy d);

struct TimeRange {
    double t_min = 0.01;
    double t_max = 0.99;

    void validate() const;
};

// Uniform draw on [t_min, t_max].
double sample_time(Rng& rng, const TimeRange& range);

// Variance-preserving perturbation: sqrt(1 - sigma_p^2) * x_lr + sigma_p * eps.
Tensor perturb(const Tensor& x_lr, double sigma_p, const Tensor& eps);

// Convex combination (1-t) x0 + t x1.
Tensor interpolate(const Tensor& x0, const Tensor& x1, double t);

// Stage-1 training hyperparameters.
struct FlowConfig {
    double sigma_p = 0.1;      // in [0,1]
    Discrepancy discrepancy = Discrepancy::L1;
    TimeRange t_range;
    int batch = 32;
    int iterations = 1000;
    double lr = 1e-4;
    int warmup = 1000;
    double ema_ratio = 0.9999;
    std::uint64_t seed = 0;

    void validate() const;
};

// One HR sample per draw; `size`/`get` expose finite held-out sets and return
// 0 / throw for purely synthetic sources.
class BatchSource {
public:
    virtual ~BatchSource() = default;
    virtual Tensor draw(Rng& rng) const = 0;
    virtual std::size_t size() const { return 0; }
    virtual Tensor get(std::size_t) const;
};

// View over a stacked [N, ...] tensor.
class TensorSource : public BatchSource {
public:
    explicit TensorSource(Tensor stacked);
    Tensor draw(Rng& rng) const override;
    std::size_t size() const override { return count_; }
    Tensor get(std::size_t i) const override;
    const Tensor& stacked() const { return stacked_; }

private:
    Tensor stacked_;
    Shape sample_shape_;
    std::size_t count_ = 0;
    std::size_t sample_len_ = 0;
};

Tensor stack_batch(const BatchSource& src, Rng& rng, int batch);

// A velocity that can be recorded into a graph (for losses differentiated
// through the model) -- the model is one implementation, test fields another.
class RecordedField {
public:
    virtual ~RecordedField() = default;
    virtual Graph::NodeId record(Graph& g, const Tensor& x, const Tensor* cond,
                                 const std::vector<double>& ts) const = 0;
};

class ModelField : public RecordedField {
public:
    ModelField(const VelocityModel& model, WeightKind weights, bool trainable,
               std::string prefix = "model")
        : model_(&model), weights_(weights), trainable_(trainable), prefix_(std::move(prefix)) {}
    Graph::NodeId record(Graph& g, const Tensor& x, const Tensor* cond,
                         const std::vector<double>& ts) const override;
    // Plain batched evaluation of the same weights.
    Tensor eval(const Tensor& x, const Tensor* cond, const std::vector<double>& ts) const;
    CondBatchVelocityFn as_plain_fn() const;

private:
    const VelocityModel* model_;
    WeightKind weights_;
    bool trainable_;
    std::string prefix_;
};

// Wraps an arbitrary recording function (oracles, rigged fields in tests).
class FnField : public RecordedField {
public:
    using Fn = std::function<Graph::NodeId(Graph&, const Tensor&, const Tensor*,
                                           const std::vector<double>&)>;
    explicit FnField(Fn fn) : fn_(std::move(fn)) {}
    Graph::NodeId record(Graph& g, const Tensor& x, const Tensor* cond,
                         const std::vector<double>& ts) const override {
        return fn_(g, x, cond, ts);
    }

private:
    Fn fn_;
};

// All per-iteration sampled quantities of the stage-1 objective.
struct FlowBatch {
    Tensor x1;      // [B, ...] HR samples
    Tensor x_lr;    // HR-resolution condition
    Tensor x0;      // perturbed start state
    Tensor x_t;     // interpolated state
    Tensor target;  // x1 - x0
    std::vector<double> ts;
    bool conditional = false;
};

// Draw order per item: LR noise, time, perturbation noise.
FlowBatch assemble_flow_batch(const Tensor& x1_batch, const DegradationSpec& deg, double sigma_p,
                              const TimeRange& range, Rng& rng);

// Mean discrepancy over batch and elements between the recorded velocity at
// (x_t, x_lr, t) and the chord x1 - x0.
Graph::NodeId flow_matching_loss(Graph& g, const RecordedField& field, const FlowBatch& batch,
                                 Discrepancy d);
// Convenience: assembles the batch internally.
Graph::NodeId flow_matching_loss(Graph& g, const RecordedField& field, const Tensor& x1_batch,
                                 const DegradationSpec& deg, const FlowConfig& cfg, Rng& rng);
// Plain evaluation for arbitrary fields (loss-floor oracles).
double flow_matching_loss_value(const CondBatchVelocityFn& field, const FlowBatch& batch,
                                Discrepancy d);

struct TraceRow {
    std::int64_t iteration = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

struct TeacherTrainConfig {
    ModelArch arch;
    DegradationSpec degradation;
    FlowConfig flow;
    // When set, a non-finite loss writes the last good parameters here before
    // aborting.
    std::string lastgood_path;
    // Progress lines to stderr every `log_every` iterations (0: quiet).
    int log_every = 0;
};

struct TeacherTrainResult {
    VelocityModel model;
    std::vector<TraceRow> trace;
};

TeacherTrainResult train_teacher(const BatchSource& data, const TeacherTrainConfig& cfg);

}  // namespace flowsr
