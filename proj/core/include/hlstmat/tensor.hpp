#pragma once

// Dense float64 tensors with a reverse-mode gradient tape.
//
// Every operation that has at least one input with requires_grad() set, and
// that runs while the calling thread's tape is active, appends a node to that
// thread-local tape. backward() replays the tape in reverse. Leaves accumulate
// gradients across calls until zero_grad() is invoked; intermediate buffers
// are reset at the start of every backward pass.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hlstmat {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct TensorImpl;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access. Only meaningful on leaves (parameters, inputs);
  // mutating a taped intermediate invalidates its recorded backward.
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;

  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool on_tape() const;

  // Same values, no gradient tracking.
  Tensor detach() const;
  // Shares no storage with *this.
  Tensor clone(bool requires_grad) const;

  bool same_object(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const noexcept { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  // Index of the producing node on its tape, valid while tape_generation
  // matches the owning tape's generation.
  std::size_t tape_node = 0;
  std::uint64_t tape_generation = 0;
  bool has_node = false;
  bool touched = false;

  void ensure_grad();
};

}  // namespace detail

/// Append-only record of differentiable operations for one thread.
class Tape {
 public:
  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void(const Node&)> backward;
  };

  /// The calling thread's tape.
  static Tape& current();

  bool active() const noexcept { return active_; }
  void set_active(bool active) noexcept { active_ = active; }

  std::size_t size() const noexcept { return nodes_.size(); }
  std::uint64_t generation() const noexcept { return generation_; }

  /// Drops every node. Tensors recorded before the call can no longer be
  /// backpropagated through.
  void clear();

  void record(std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
              const std::shared_ptr<detail::TensorImpl>& output,
              std::function<void(const Node&)> backward);

  void backward(const Tensor& loss);

 private:
  std::vector<Node> nodes_;
  bool active_ = true;
  std::uint64_t generation_ = 1;
};

/// Disables recording on the current thread's tape for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(Tape::current().active()) { Tape::current().set_active(false); }
  ~NoGradGuard() { Tape::current().set_active(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Populates grad() of every requires_grad leaf reachable from `loss`.
/// Throws ContractError when `loss` is not a single-element tensor on the
/// active tape.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops require identical shapes; the only
// implicit broadcast is a rank-0 tensor against any shape.

/// [m×k]·[k×n] → [m×n]; [m×k]·[k] → [m]; [k]·[k×n] → [n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

enum class ElementwiseOp { add, sub, mul, div, sigmoid, tanh, exp, log, sqrt, relu, neg };

Tensor elementwise(ElementwiseOp op, const Tensor& a);
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);

/// Softmax over a rank-1 tensor, max-subtracted.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis = 0);

/// Sum of all entries, rank-0 result.
Tensor sum(const Tensor& a);
/// Mean over axis 0 of a rank-2 tensor.
Tensor mean_rows(const Tensor& a);
/// Largest entry, rank-0 result; the gradient flows to the first maximiser.
Tensor max_all(const Tensor& a);

/// Rank-0 view of element i of a rank-1 tensor.
Tensor index(const Tensor& a, std::size_t i);
/// Row `i` of a rank-2 tensor.
Tensor row(const Tensor& a, std::size_t i);
/// Stacks the selected rows of a rank-2 tensor.
Tensor gather_rows(const Tensor& a, std::span<const int> ids);
/// Contiguous slice [begin, begin+length) of a rank-1 tensor.
Tensor slice(const Tensor& a, std::size_t begin, std::size_t length);
/// Adds a rank-1 tensor to every row of a rank-2 tensor.
Tensor add_row_broadcast(const Tensor& m, const Tensor& v);
Tensor reshape(const Tensor& a, Shape shape);
/// Stacks rank-1 tensors of equal length into a matrix.
Tensor stack_rows(const std::vector<Tensor>& rows);

}  // namespace hlstmat
