#pragma once

// Minimal tape-free reverse-mode automatic differentiation over dense
// double-precision tensors. Each operation records its parents and a
// backward closure; `backward` walks the graph in reverse topological order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rainrecon::ag {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_string(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> value() const { return node_->value; }
  std::span<double> mutable_value() { return node_->value; }
  // Empty until a backward pass reached this node.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }
  double item() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Leaf constructors.
Var constant(Shape shape, std::vector<double> values);
Var constant_scalar(double v);
Var zeros(Shape shape);
Var parameter(Shape shape, std::vector<double> values);

// Seeds d(root)/d(root) = 1 and accumulates gradients into every node that
// requires them. Root must hold exactly one element.
void backward(const Var& root);

// Elementwise, identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// s must hold one element; returns s * a.
Var scale_by(const Var& a, const Var& s);
Var add_scalar(const Var& a, double s);
Var one_minus(const Var& a);

Var relu(const Var& a);
Var elu(const Var& a, double alpha = 1.0);
Var leaky_relu(const Var& a, double slope = 0.2);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);

// Same data, new shape with equal element count.
Var reshape(const Var& a, Shape shape);
// out.flat[i] = a.flat[index[i]]; backward scatters.
Var gather(const Var& a, std::vector<std::size_t> index, Shape shape);

// 2-D matrix algebra; matrices are row-major [rows, cols].
Var matmul(const Var& a, const Var& b);     // [m,k] x [k,n]
Var matmul_bt(const Var& a, const Var& b);  // [m,k] x [n,k]^T
Var add_bias(const Var& x, const Var& bias);  // [m,n] + [n]
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var transpose(const Var& a);

// Row softmax; columns with admissible[j] == 0 get exactly zero weight.
// An empty admissible span means every column is admissible. Every row must
// have at least one admissible column.
Var softmax_rows(const Var& scores, std::span<const std::uint8_t> admissible = {});

// Image ops on [N, C, H, W] tensors.
// Square kernel [Co, Ci, k, k] with odd k, zero "same" padding. bias may be
// undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias);
// Depthwise 1-D convolution along the leading axis of [T, C, H, W] with a
// [C, kt] kernel (odd kt), zero "same" padding, and [C] bias.
Var temporal_conv(const Var& x, const Var& kernel, const Var& bias);
Var avg_pool(const Var& x, std::size_t factor);
Var upsample_nearest(const Var& x, std::size_t factor);

// out[t,c,h,w] = x[t,c,h,w] + temporal[t,c] + spatial[h*W+w, c].
Var add_spacetime(const Var& x, const Var& temporal, const Var& spatial);

// Graph attention aggregation. wh: [N, D]; src, dst: [N, 1] attention
// logits; groups[i] lists the nodes node i aggregates over.
// out_i = sum_j softmax_j(leaky_relu(src_i + dst_j)) wh_j.
Var graph_attention(const Var& wh, const Var& src, const Var& dst,
                    const std::vector<std::vector<int>>& groups, double slope = 0.2);

// Per-query attention over a query-specific subset of key rows:
// out_q = sum_{j in groups[q]} softmax_j(scale * q . k_j) v_j.
Var subset_attention(const Var& q, const Var& k, const Var& v,
                     const std::vector<std::vector<int>>& groups, double scale);

// Cosine similarity between rows pairs[p].first and pairs[p].second of x;
// a pair involving a zero-norm row has similarity 0 and no gradient.
Var pair_cosine(const Var& x, const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

// Mean of (pred - target)^2 over entries with mask != 0 (empty mask: all).
Var masked_mse(const Var& pred, const Var& target, std::span<const std::uint8_t> mask = {});

}  // namespace rainrecon::ag
