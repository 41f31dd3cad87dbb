#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 matrices.
//
// Every operation records its inputs and a backward rule that is itself
// written in terms of recorded operations, so gradients can be differentiated
// again (needed when a loss depends on input gradients). Outside of graph
// construction the backward pass runs with recording disabled.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace uimer::ag {

using Matrix = Eigen::MatrixXd;

class Var;

struct Node {
  Matrix value;
  std::vector<Var> parents;
  // Given the node's own output and the incoming gradient, returns one
  // gradient per parent (an empty Var where the parent needs none).
  std::function<std::vector<Var>(const Var& out, const Var& grad_out)> backward;
  bool requires_grad = false;
  bool is_leaf = true;
  Matrix grad;  // accumulated by backward() on leaves
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& value() const { return node_->value; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Leaf accessors used by optimizers.
  Matrix& mutable_value() { return node_->value; }
  Matrix& grad() { return node_->grad; }
  const Matrix& grad() const { return node_->grad; }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording for the lifetime of the guard.
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

Var constant(Matrix value);
Var scalar(double value);
Var parameter(Matrix value);
Var detach(const Var& x);

// Elementwise, with broadcasting of 1xC, Rx1 and 1x1 operands.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var exp(const Var& a);
Var log(const Var& a);
Var log2(const Var& a);
Var recip(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var abs(const Var& a);
Var relu(const Var& a);
Var square(const Var& a);
// Values outside [lo, hi] are clamped and receive zero gradient.
Var clamp(const Var& a, double lo, double hi);

Var sum_rows(const Var& a);  // -> 1 x C
Var sum_cols(const Var& a);  // -> R x 1
Var sum(const Var& a);       // -> 1 x 1
Var mean(const Var& a);

Var gather_rows(const Var& a, std::span<const int> rows);
Var scatter_rows(const Var& a, std::span<const int> rows, Eigen::Index out_rows);
Var gather_cols(const Var& a, std::span<const int> cols);
Var row(const Var& a, int r);
Var at(const Var& a, int r, int c);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

Var log_softmax_rows(const Var& a);
Var softmax_rows(const Var& a);

// Gradients of scalar `y` with respect to `xs`. Inputs `y` does not reach get
// zero gradients. With create_graph the result is itself differentiable.
std::vector<Var> grad(const Var& y, std::span<const Var> xs, bool create_graph = false);

// Accumulates d(y)/d(leaf) into the .grad() of every reachable leaf that
// requires gradients.
void backward(const Var& y);

}  // namespace uimer::ag
