#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every op records its parents and a backward closure unless a
// NoGradGuard is active or none of its inputs requires a gradient.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace aspectcl::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  Matrix& ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  static Var scalar(double v) { return Var(Matrix::Constant(1, 1, v)); }

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Zero-sized until a backward pass reaches this node.
  const Matrix& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const { return node_->value(0, 0); }
  bool defined() const { return node_ != nullptr; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
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

// Seeds d(root)/d(root) with `seed` (1x1 roots) and propagates to every
// reachable node that requires a gradient. Gradients accumulate.
void backward(const Var& root, double seed = 1.0);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // broadcast 1xC over rows
Var scale(const Var& a, double s);
Var relu(const Var& a);
Var rms_norm(const Var& x, const Var& gain, double eps = 1e-6);
Var gather_rows(const Var& table, std::span<const int> ids);
Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
Var mean_rows(const Var& a);
Var dropout(const Var& a, double p, std::mt19937_64& rng);

// Multi-head scaled dot-product attention. q: n x d, k and v: m x d, d
// divisible by `heads`. With `causal`, query i attends to keys <= i.
Var attention(const Var& q, const Var& k, const Var& v, int heads, bool causal);

enum class Reduction { kSum, kMean };

// Softmax cross-entropy of each logit row against `targets`; rows whose
// target is negative are ignored. Returns a 1x1 Var (0 when nothing counts).
Var cross_entropy(const Var& logits, std::span<const int> targets, Reduction reduction);

// (pred - target)^2 for a 1x1 prediction.
Var squared_error(const Var& pred, double target);

// A 1x1 node with a precomputed value whose backward pass injects
// upstream * input_grads[k] into inputs[k].
Var custom_scalar(std::span<const Var> inputs, double value, std::vector<Matrix> input_grads);

}  // namespace aspectcl::ag
