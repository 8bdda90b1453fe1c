#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cetrec {

/// Dense row-major float64 array. Rank 0 (scalar), 1 and 2 are used in
/// practice; every primitive below works on the (rows, cols) view where a
/// rank-1 tensor of length n is a 1 x n row.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor scalar(double value);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  [[nodiscard]] const std::vector<std::size_t>& shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::size_t rows() const;
  [[nodiscard]] std::size_t cols() const;
  [[nodiscard]] std::span<const double> data() const { return data_; }
  [[nodiscard]] std::span<double> data() { return data_; }
  [[nodiscard]] const double* ptr() const { return data_.data(); }
  [[nodiscard]] double* ptr() { return data_.data(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  /// Value of a single-element tensor.
  [[nodiscard]] double item() const;

  [[nodiscard]] bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool flag) { requires_grad_ = flag; }

  [[nodiscard]] bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  [[nodiscard]] std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  [[nodiscard]] const Tensor& value() const;
};

/// Reverse-mode computation record. Nodes are appended in evaluation order, so
/// the node list is already topologically sorted and backward simply walks it
/// in reverse, visiting each node once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends the result of a primitive. `backward` is dropped when no input
  /// requires a gradient. Throws NonFiniteError if `value` holds NaN/Inf.
  Var push(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  [[nodiscard]] const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  [[nodiscard]] const Tensor& value(Var v) const { return value(v.id); }
  [[nodiscard]] bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Gradient accumulator of node `id`, zero-initialised on first access.
  Tensor& grad_buffer(int id);
  /// Upstream gradient of node `id` during backward.
  [[nodiscard]] const Tensor& grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// d(loss)/d(v) after backward(); zeros if v did not participate.
  [[nodiscard]] Tensor grad(Var v) const;

  void backward(Var loss);
  /// Clears accumulated gradients so backward() may run again.
  void reset_grads();

  [[nodiscard]] std::size_t node_count() const { return nodes_.size(); }
  [[nodiscard]] bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// Primitives. All shape checks throw DimensionError naming both shapes.

Var matmul(Var a, Var b);
/// x * w^T with w stored (out, in), the usual linear-layer layout.
Var linear(Var x, Var w);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Adds a 1 x n row to every row of x (the only broadcast supported).
Var add_rowwise(Var x, Var row);
Var sum(Var a);
Var silu(Var a);
/// Row-wise RMS normalisation with a per-column gain.
Var rms_norm(Var x, Var gain, double eps = 1e-6);
/// Rows of `table` selected by `ids`.
Var embedding(Var table, std::span<const int> ids);
Var gather_rows(Var x, std::span<const int> rows);

/// Row visibility for masked multi-head attention. Each row sees itself and
/// the chain of its ancestors; a plain causal sequence is parent[r] = r - 1.
/// Trees let several continuations share one prefix in a single pass.
class AttentionLayout {
 public:
  static AttentionLayout causal(std::size_t n);
  static AttentionLayout from_parents(std::vector<int> parents);

  [[nodiscard]] std::size_t rows() const { return parents_.size(); }
  [[nodiscard]] int parent(std::size_t r) const { return parents_[r]; }
  /// Ascending list of rows visible from row r (ancestors then r itself).
  [[nodiscard]] std::span<const int> visible(std::size_t r) const {
    return {visible_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
  }
  [[nodiscard]] std::size_t total_visible() const { return visible_.size(); }

 private:
  std::vector<int> parents_;
  std::vector<std::size_t> offsets_;
  std::vector<int> visible_;
};

/// softmax(q k^T / sqrt(dh)) v per head, restricted by `layout`.
Var masked_attention(Var q, Var k, Var v, std::shared_ptr<const AttentionLayout> layout, std::size_t n_heads);

/// sum_i weights[i] * -log softmax(logits[i])[targets[i]].
Var softmax_cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights);
/// Single-row convenience: -log softmax(logits)[target].
Var softmax_cross_entropy(Var logits_row, int target);

/// Numerically stabilised softmax of each row (value-level helper, no tape).
Tensor softmax_rows(const Tensor& logits);
/// Row-wise log-softmax (value-level helper).
Tensor log_softmax_rows(const Tensor& logits);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t param_index = 0;
  std::size_t coord_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares tape gradients of `f` against central differences over every
/// coordinate of every parameter. Relative error per coordinate is
/// |a - n| / (|a| + |n| + 1e-12).
GradCheckResult grad_check(const ScalarFunction& f, const std::vector<Tensor>& params, double eps = 1e-5);

}  // namespace cetrec
