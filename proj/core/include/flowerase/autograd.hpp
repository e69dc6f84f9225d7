#pragma once

// Reverse-mode automatic differentiation over dense row-major float64 tensors.
//
// A Tensor is a shared handle onto a node of a dynamic tape: each op records
// its inputs and a backward closure while gradient recording is enabled.
// Shapes are explicit; the only broadcasting is scalar-tensor in the
// elementwise binary ops.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace flowerase::ag {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches the node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;  // reads self.grad, accumulates into inputs

  bool is_leaf() const { return !backward; }
  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_node(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access; only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// New leaf sharing no storage with this tensor.
  Tensor clone() const;
  /// New leaf holding the same values, cut off from the tape.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// True while ops record backward closures (thread-local, default on).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Populates grad on every requires_grad leaf reachable from a scalar root.
/// Leaf gradients accumulate across calls; intermediate gradients are reset.
void backward(const Tensor& root);

// Elementwise. Binary ops require equal shapes, or one operand with numel 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor square(const Tensor& a);

// Linear algebra (rank 2).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// x · wᵀ, with w stored [out, in].
Tensor linear(const Tensor& x, const Tensor& w);
Tensor dot(const Tensor& a, const Tensor& b);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis);  // removes the axis
Tensor l2_norm_squared(const Tensor& a);

// Normalization.
Tensor softmax(const Tensor& a, std::size_t axis);
/// Per-row standardization of a rank-2 tensor, no affine parameters.
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-6);

// Layout.
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t end);
/// [1, D] -> [n, D].
Tensor repeat_rows(const Tensor& a, std::size_t n);
/// out[i] = a[indices[i]]; backward scatter-adds. Covers embedding lookup
/// (row gathers) and the patchify/unpatchify permutations.
Tensor gather(const Tensor& a, std::span<const std::size_t> indices, Shape shape);
/// Zeroes the listed indices of the last axis everywhere, without renormalizing.
Tensor mask_last_axis(const Tensor& a, std::span<const std::size_t> columns);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace flowerase::ag
