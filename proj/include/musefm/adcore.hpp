#pragma once

// Minimal reverse-mode automatic differentiation over row-major float64 tensors.
//
// Tensors are rank 0, 1 or 2. Rank-1 tensors behave as a single row wherever a matrix is expected.
// Binary elementwise ops accept identical shapes, a row vector broadcast over the rows of the
// left operand, or a single-element right operand.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace musefm::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // pushes this->grad into parents
  const char* op = "leaf";
};

class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Data tensor; never receives gradient.
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);
  /// Trainable leaf.
  static Tensor leaf(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::vector<double>& mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double>& mutable_grad() { return node_->grad; }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  void zero_grad();
  const std::shared_ptr<Node>& node() const { return node_; }

private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};
bool grad_enabled();

// Linear algebra and structure
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);

// Reductions and row-wise ops
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// axis 0 -> [1, cols], axis 1 -> [rows, 1]
Tensor sum_axis(const Tensor& a, int axis);
Tensor mean_rows(const Tensor& a);
Tensor softmax(const Tensor& a);
Tensor layer_norm(const Tensor& a, double eps = 1e-5);
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

// Losses (mean over elements)
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor bce_with_logits_loss(const Tensor& logits, const Tensor& targets);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

/// Accumulates d(loss)/d(x) into every reachable tensor that requires grad.
/// Leaf gradients accumulate across calls; intermediate gradients are recomputed.
void backward(const Tensor& loss);

}  // namespace musefm::ad
