#pragma once

// Dense double-precision tensors with reverse-mode gradients.
//
// A Tensor is an immutable handle to a graph node. Operations on tensors that
// require gradients record their inputs and a backward closure; backward() on a
// scalar walks the recorded graph in reverse topological order. Graphs are
// per-thread values: independent sentences can be processed concurrently, each
// building its own graph over the same (read-only) parameters.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "latsa/rng.hpp"

namespace latsa {

class Parameter;

enum class Mode { train, infer };

class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> value;
  const double* external = nullptr;  // parameter leaves read the parameter's storage
  std::vector<double> grad;
  bool requires_grad = false;
  const Parameter* param = nullptr;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  const double* data() const { return external ? external : value.data(); }
  std::size_t numel() const;
  double* grad_buffer();  // allocates zeros on first use
};

}  // namespace detail

class Tensor {
public:
  Tensor() = default;

  /// Constant (no gradient) tensor of rank 1 to 3.
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor scalar(double v);
  /// Leaf that participates in gradients without being a Parameter.
  static Tensor variable(std::vector<std::size_t> shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Rank-1 tensors are treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t numel() const { return node_->numel(); }

  std::span<const double> values() const { return {node_->data(), node_->numel()}; }
  double operator()(std::size_t r, std::size_t c) const { return node_->data()[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient accumulated by the last backward() through this tensor (zeros if none).
  std::vector<double> grad() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread while alive.
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

/// Named trainable tensor. Values are mutated only by the optimizer, never
/// while graphs that read them are alive on other threads.
class Parameter {
public:
  Parameter(std::string name, std::vector<std::size_t> shape, std::vector<double> value);

  const std::string& name() const { return name_; }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t numel() const { return value_.size(); }
  std::vector<double>& value() { return value_; }
  const std::vector<double>& value() const { return value_; }

  /// Fresh graph leaf reading this parameter's values.
  Tensor var() const;

private:
  std::string name_;
  std::vector<std::size_t> shape_;
  std::vector<double> value_;
};

/// Parameter gradients collected by backward(); additive across uses.
class Gradients {
public:
  std::vector<double>& at(const Parameter& p);
  const std::vector<double>* find(const Parameter& p) const;

  /// this += other, visiting other's entries in a caller-independent order.
  void accumulate(const Gradients& other);
  void scale(double s);
  bool empty() const { return grads_.empty(); }

  const std::unordered_map<const Parameter*, std::vector<double>>& entries() const { return grads_; }

private:
  std::unordered_map<const Parameter*, std::vector<double>> grads_;
};

/// Reverse pass from a scalar. Throws ShapeError for non-scalar losses.
Gradients backward(const Tensor& loss);

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// a (m x n) + row (1 x n) broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor select_row(const Tensor& a, std::size_t r);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sum(const Tensor& a);
/// 1 x n mean over rows.
Tensor mean_rows(const Tensor& a);
/// Sum of w_i * parts_i with constant weights; all parts share one shape.
Tensor weighted_sum(const std::vector<Tensor>& parts, std::span<const double> weights);
/// Rows of `table` picked by id (embedding lookup).
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

/// Row-wise softmax of (scores + mask). `mask` is a constant m x n block in
/// [-inf, 0]; -inf entries receive exactly zero weight. In train mode with
/// dropout_rate > 0, inverted dropout is applied to the finite entries of
/// (scores + mask) before the softmax; -inf entries are never dropped.
/// Throws std::domain_error if a row has no finite entry.
Tensor masked_softmax_rows(const Tensor& scores, std::span<const double> mask, double dropout_rate = 0.0,
                           Mode mode = Mode::infer, Rng* rng = nullptr);

/// All heads of masked scaled dot-product attention in one node. `qkv` is
/// n x 3d with columns [Q_0 .. Q_{h-1} | K_0 .. | V_0 ..], each block d/h wide;
/// head k computes softmax(dropout(scale * Q_k K_k^T + masks[k])) V_k with the
/// same masking and dropout rules as masked_softmax_rows. Returns n x d with
/// the heads side by side. When `weights` is given it receives each head's
/// n x n attention matrix.
Tensor multi_head_attention(const Tensor& qkv, std::span<const double* const> masks, double scale,
                            double dropout_rate = 0.0, Mode mode = Mode::infer, Rng* rng = nullptr,
                            std::vector<std::vector<double>>* weights = nullptr);

/// Per-row normalization to zero mean and unit variance (epsilon 1e-6 inside
/// the square root), then gain * x + bias with 1 x n gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
inline constexpr double kLayerNormEpsilon = 1e-6;

/// Inverted dropout in train mode; identity in infer mode or at rate 0.
Tensor dropout(const Tensor& x, double rate, Mode mode, Rng* rng);

/// max(0, x W1 + b1) W2 + b2, row-wise.
Tensor feed_forward(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2);

/// Summed label-smoothed cross-entropy over rows of `logits` (m x V):
/// -(1 - eps) log p[target] - (eps / V) * sum_k log p[k].
Tensor smoothed_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets, double epsilon);

/// Row-wise log-softmax values (no gradient).
std::vector<double> log_softmax_row(std::span<const double> logits);

}  // namespace latsa
