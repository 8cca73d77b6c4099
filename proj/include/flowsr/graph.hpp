#pragma once

#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowsr/tensor.hpp"

namespace flowsr {

// Reverse-mode tape. Nodes are coarse operations (whole linear/conv layers,
// elementwise maps, reductions); creation order is a topological order, so
// the backward pass is a single reverse sweep. One Graph per loss evaluation.
class Graph {
public:
    using NodeId = int;

    // Leaves.
    NodeId constant(Tensor value);
    NodeId leaf(Tensor value);  // gradient-tracked input (tests, probes)
    // Gradient-tracked leaf cached by key, so repeated forward passes through
    // the same parameter accumulate into one gradient slot.
    NodeId param(const std::string& key, const Tensor& value);
    bool has_param(const std::string& key) const;
    NodeId param_node(const std::string& key) const;

    // Elementwise / structural ops.
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId square(NodeId a);
    NodeId abs(NodeId a);
    NodeId silu(NodeId a);
    NodeId stop_gradient(NodeId a);
    NodeId mean_all(NodeId a);  // -> scalar shape {1}

    // x: [B, in], w: [out, in], b: [out] -> [B, out]
    NodeId linear(NodeId x, NodeId w, NodeId b);
    // x: [B, Cin, H, W], w: [Cout, Cin, k, k], b: [Cout]; square kernel.
    NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
    // Nearest-neighbour 2x upsampling of [B, C, H, W].
    NodeId upsample2x(NodeId x);
    // Concatenate along dim 1 ([B, a] + [B, b] or [B, Ca, H, W] + [B, Cb, H, W]).
    NodeId concat_dim1(NodeId a, NodeId b);

    const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    // Zero-shaped gradient until backward touches the node.
    const Tensor& grad(NodeId id) const;
    bool needs_grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    // Seeds d(loss)/d(loss)=1 and sweeps the tape once. `loss` must be scalar.
    void backward(NodeId loss);
    bool backward_done() const { return backward_done_; }

    // Gradient of a cached parameter; zeros if the key was never recorded or
    // never reached by the sweep.
    Tensor param_grad(const std::string& key, const Shape& shape) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until needed
        std::vector<NodeId> parents;
        std::function<void(Graph&, NodeId)> backprop;
        bool needs_grad = false;
    };

    NodeId push(Tensor value, std::vector<NodeId> parents, bool force_grad,
                std::function<void(Graph&, NodeId)> backprop);
    Tensor& ensure_grad(NodeId id);
    Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }

    std::vector<Node> nodes_;
    std::unordered_map<std::string, NodeId> param_cache_;
    bool backward_done_ = false;
};

// name -> gradient tensor, shaped like the parameter map it came from.
using GradMap = std::map<std::string, Tensor>;

}  // namespace flowsr
