#pragma once

#include <functional>
#include <span>
#include <string>
#include <deque>
#include <unordered_map>
#include <vector>

#include "bimvfi/tensor.hpp"

namespace bimvfi {

class ParamStore;

namespace ag {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] Graph* graph() const { return graph_; }
  [[nodiscard]] int id() const { return id_; }
  [[nodiscard]] bool valid() const { return graph_ != nullptr; }

  [[nodiscard]] int channels() const { return value().channels(); }
  [[nodiscard]] int height() const { return value().height(); }
  [[nodiscard]] int width() const { return value().width(); }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// creation order is a valid topological order for backpropagation.
class Graph {
 public:
  /// Receives the gradient of the node's output and accumulates into inputs
  /// via Graph::grad_of.
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Differentiable leaf (an input whose gradient the caller wants back).
  Var leaf(Tensor value);
  /// Leaf bound to a stored parameter. Each parameter maps to exactly one
  /// node per graph no matter how many times it is requested.
  Var parameter(const ParamStore& store, int index);

  Var make(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  [[nodiscard]] const Tensor& value(int id) const { return nodes_[id].value; }
  [[nodiscard]] bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of node `id`, allocated (zeroed) on first access.
  Tensor& grad_of(int id);
  [[nodiscard]] const Tensor* grad_if_any(int id) const;

  /// Backpropagates from a scalar (1x1x1) node with seed gradient 1.
  void backward(Var scalar);

  /// Parameter index -> node id for every parameter read by this graph.
  [[nodiscard]] const std::unordered_map<int, int>& parameter_nodes() const { return param_nodes_; }
  /// Adds the gradients of all parameter leaves into `grads` (indexed like the store).
  void accumulate_parameter_grads(std::vector<Tensor>& grads) const;

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  std::unordered_map<int, int> param_nodes_;
};

// -- elementwise ------------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var silu(Var a);
Var sigmoid(Var a);
/// Gradient barrier: same value, no backward edge.
Var detach(Var a);

// -- shape ------------------------------------------------------------------
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice_channels(Var a, int first, int count);

// -- reductions ---------------------------------------------------------------
Var sum_all(Var a);
Var add_scalars(std::span<const Var> terms);
/// Sum of a * w for a constant weight tensor (a linear probe of a tensor).
Var dot_constant(Var a, const Tensor& w);

// -- layers -------------------------------------------------------------------
/// weight: (out, in, k*k) with square kernel k; bias: (out, 1, 1) or invalid.
Var conv2d(Var x, Var weight, Var bias, int stride, int padding);

// -- sampling -----------------------------------------------------------------
Var warp(Var src, Var flow);
Var resize(Var a, int out_h, int out_w);
/// Bilinear resample of a flow grid by `factor`, with displacement values scaled by it.
Var resample_flow(Var flow, double factor);
/// Softmax over the 9 neighbour weights of each of the `groups` sub-pixel slots.
Var softmax_groups9(Var logits);
Var convex_upsample(Var flow, Var kernels, int factor);
/// Local correlation volume; see pyramid_net for the layout.
Var cost_volume(Var a, Var b, int radius);

}  // namespace ag
}  // namespace bimvfi
