#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowsr/graph.hpp"
#include "flowsr/tensor.hpp"

namespace flowsr {

// Named parameters with deterministic iteration order.
using ParamSet = std::map<std::string, Tensor>;

bool same_shapes(const ParamSet& a, const ParamSet& b);
bool bitwise_equal(const ParamSet& a, const ParamSet& b);

enum class Backbone { Mlp, Conv };

// Velocity-field architecture. The state x and the condition are concatenated
// at the input; the sinusoidal time embedding is concatenated to the input of
// every hidden layer (as constant channels for the conv backbone).
struct ModelArch {
    Backbone kind = Backbone::Mlp;
    int time_embed_dim = 8;  // even

    // Mlp: x is [B, data_dim], condition [B, cond_dim] (cond_dim may be 0).
    int data_dim = 0;
    int cond_dim = 0;
    std::vector<int> hidden;  // widths

    // Conv: x is [B, channels, height, width], condition [B, cond_channels, H, W].
    int height = 0;
    int width = 0;
    int channels = 0;
    int cond_channels = 0;
    // Stage widths {c1, c2, c3, c4}: strided conv (H -> H/2), two 3x3 convs at
    // half resolution, nearest-neighbour upsample back, one 3x3 conv at full
    // resolution, then a 1x1 projection to `channels`.
    std::vector<int> conv_channels = {16, 24, 16, 8};

    void validate() const;
    std::size_t x_numel() const;
    Shape x_shape(std::size_t batch) const;
    Shape cond_shape(std::size_t batch) const;
    bool has_cond() const;
};

bool operator==(const ModelArch& a, const ModelArch& b);

// v(x, cond, t) with trainable parameters and an EMA shadow used for all
// sampling and evaluation. Frozen models reject every update.
struct VelocityModel {
    ModelArch arch;
    ParamSet params;
    ParamSet ema;
    bool frozen = false;
};

// Hidden weights are fan-in scaled normals (std 1/sqrt(fan_in)); the output
// projection starts at zero so the initial field is identically zero. The
// EMA copy starts equal to the parameters. Identical seeds give bit-identical
// parameters.
VelocityModel init_velocity_model(const ModelArch& arch, std::uint64_t seed);

// Length d_t vector [sin(w_k t), cos(w_k t)] with geometric frequencies
// spanning [1, 1e4].
Tensor time_embedding(double t, int d_t);
double time_embedding_max_freq(int d_t);

enum class WeightKind { Live, Ema };

// Records a batched forward pass. x: arch batch shape, cond: nullptr when the
// arch has no condition, ts: one time per batch item. With trainable=true the
// selected weights enter the graph as gradient leaves under `param_key_prefix`.
Graph::NodeId record_velocity(Graph& g, const VelocityModel& model, WeightKind weights,
                              const Tensor& x, const Tensor* cond, const std::vector<double>& ts,
                              bool trainable, const std::string& param_key_prefix = "model");

// Same, but on an existing graph node, so gradients can flow through the
// state input itself. cond_node < 0 means no condition.
Graph::NodeId record_velocity_node(Graph& g, const VelocityModel& model, WeightKind weights,
                                   Graph::NodeId x_node, Graph::NodeId cond_node,
                                   const std::vector<double>& ts, bool trainable,
                                   const std::string& param_key_prefix = "model");

// Plain (non-recorded) batched evaluation.
Tensor velocity_eval(const VelocityModel& model, WeightKind weights, const Tensor& x,
                     const Tensor* cond, const std::vector<double>& ts);

// Single-sample convenience: x and cond without the batch dimension.
Tensor velocity_forward(const VelocityModel& model, const Tensor& x, const Tensor* cond, double t,
                        WeightKind weights = WeightKind::Ema);

// Gradients of a recorded scalar with respect to `params`; parameters that do
// not reach the loss get zero gradients.
GradMap gradients(Graph& g, Graph::NodeId loss, const ParamSet& params,
                  const std::string& param_key_prefix = "model");

}  // namespace flowsr
