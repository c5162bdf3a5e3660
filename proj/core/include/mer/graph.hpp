#pragma once

#include <functional>
#include <vector>

#include "mer/tensor.hpp"

namespace mer {

// Handle to a node of a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Every op appends a node holding its value and a closure
// that pushes the node's gradient to its inputs. Nodes whose inputs do not
// require gradients record no closure.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_grad)>;

  Var constant(Tensor<T> value);
  Var parameter(Tensor<T> value);
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1; root must hold a single element.
  void backward(Var root);
  void backward(Var root, const Tensor<T>& seed);
  bool has_gradients() const { return backward_done_; }

  // Gradient of a node after backward(). Zero tensor if nothing reached it.
  const Tensor<T>& grad(Var v);

  // For op implementations: accumulate into an input's gradient buffer.
  Tensor<T>& grad_buffer(Var v);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
  };
  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---- element-wise ----
template <typename T> Var add(Graph<T>& g, Var a, Var b);
template <typename T> Var sub(Graph<T>& g, Var a, Var b);
template <typename T> Var mul(Graph<T>& g, Var a, Var b);
template <typename T> Var div(Graph<T>& g, Var a, Var b);
template <typename T> Var scale(Graph<T>& g, Var a, double c);
template <typename T> Var add_scalar(Graph<T>& g, Var a, double c);
template <typename T> Var relu(Graph<T>& g, Var a);
template <typename T> Var leaky_relu(Graph<T>& g, Var a, double slope);
template <typename T> Var sigmoid(Graph<T>& g, Var a);
template <typename T> Var exp(Graph<T>& g, Var a);
template <typename T> Var abs(Graph<T>& g, Var a);
template <typename T> Var square(Graph<T>& g, Var a);
// max(a, floor); gradient passes only where a > floor.
template <typename T> Var floor_at(Graph<T>& g, Var a, double floor);

// ---- reductions ----
template <typename T> Var sum(Graph<T>& g, Var a);
template <typename T> Var mean(Graph<T>& g, Var a);
// NCHW -> N1HW
template <typename T> Var sum_channels(Graph<T>& g, Var a);
// Forward difference along H (axis 2) or W (axis 3); that axis shrinks by one.
template <typename T> Var shift_diff(Graph<T>& g, Var a, int axis);

// ---- spatial / structural ----
template <typename T> Var conv2d(Graph<T>& g, Var x, Var weight, Var bias, int stride, int pad);
template <typename T> Var upsample2(Graph<T>& g, Var x);
template <typename T> Var max_pool2(Graph<T>& g, Var x);
template <typename T> Var concat_channels(Graph<T>& g, const std::vector<Var>& parts);
// Per-sample Gram matrix F F^T / (C*H*W): NCHW -> [N, C, C].
template <typename T> Var gram(Graph<T>& g, Var f);
// Scaled dot-product attention over spatial positions.
// q,k: [N,d,H,W]; v: [N,C,H,W]; returns [N,C,H,W] with
// out[:, i] = sum_j softmax_j(q_i . k_j / sqrt(d)) v[:, j].
// If `weights` is non-null it receives the row-stochastic [N, P, P] matrix.
template <typename T> Var attend(Graph<T>& g, Var q, Var k, Var v, Tensor<T>* weights = nullptr);
// W / ||W^T u||, W flattened to [out, rest]; u is held fixed.
template <typename T> Var spectral_weight(Graph<T>& g, Var weight, const std::vector<T>& u);

}  // namespace mer
