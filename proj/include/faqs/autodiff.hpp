#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "faqs/tensor.hpp"

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A graph is built eagerly by calling the ops below; `backward(loss)` walks it
// in reverse topological order and accumulates gradients into every node that
// requires one. Leaves created with `parameter()` persist across steps; call
// `zero_grad()` on them between steps. A graph belongs to one thread.
namespace faqs::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty-shaped until first accumulation
  bool has_grad = false;
  bool requires_grad = false;
  std::string_view op;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }

  // Zero tensor of the value's shape if no gradient has flowed here.
  const Tensor& grad() const { return node_->grad_buffer(); }
  void zero_grad();
  bool requires_grad() const { return node_->requires_grad; }
  bool valid() const { return node_ != nullptr; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var parameter(Tensor value);
Var constant(Tensor value);
Var scalar_constant(double v);

// Reverse sweep from a scalar loss. Throws UsageError for non-scalar losses.
void backward(const Var& loss);

// Elementwise. Binary ops accept equal shapes or a scalar on either side.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scalar_mul(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu6(const Var& x);
Var sigmoid(const Var& x);

// Multiplies by a fixed 0/1 (or any constant) mask of identical shape.
Var mask(const Var& x, std::shared_ptr<const Tensor> m);

Var sum(const Var& x);
Var squared_l2(const Var& x);

// Forward value `forward`, backward gradient passed through to `x` unchanged.
Var straight_through(const Var& x, Tensor forward);

// input [N,C,H,W], weight [Co,C,1,1], optional bias [Co].
Var conv2d_pointwise(const Var& input, const Var& weight);
Var conv2d_pointwise(const Var& input, const Var& weight, const Var& bias);

// input [N,C,H,W], weight [C,k,k] with odd k, stride 1 or 2, same padding.
Var conv2d_depthwise(const Var& input, const Var& weight, int stride);

// out[n,c,h,w] = scale[c] * in[n,c,h,w] + shift[c]
Var affine_channel(const Var& input, const Var& scale, const Var& shift);

// [N,C,H,W] -> [N,C]
Var global_avg_pool(const Var& input);

// x [N,F], weight [O,F], bias [O] -> [N,O]
Var dense(const Var& x, const Var& weight, const Var& bias);

// Mean cross-entropy over the batch; logits [N,K], labels in [0,K).
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

}  // namespace faqs::ad
