#include "hlstmat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hlstmat/errors.hpp"

namespace hlstmat {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

namespace {

ImplPtr make_impl(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_to_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return impl;
}

const TensorImpl& checked(const Tensor& t, const char* what) {
  if (!t.defined()) throw ContractError(std::string(what) + ": undefined tensor");
  return *t.impl();
}

// Gradient buffer of an input, or nullptr when the input does not track
// gradients.
double* grad_of(const ImplPtr& impl) {
  if (!impl->requires_grad) return nullptr;
  impl->ensure_grad();
  impl->touched = true;
  return impl->grad.data();
}

Tensor finish(Shape shape, std::vector<double> values, std::vector<ImplPtr> inputs,
              std::function<void(const Tape::Node&)> backward_fn) {
  auto out = make_impl(std::move(shape), std::move(values));
  Tape& tape = Tape::current();
  const bool track =
      tape.active() && std::any_of(inputs.begin(), inputs.end(),
                                   [](const ImplPtr& p) { return p->requires_grad; });
  if (track) {
    out->requires_grad = true;
    tape.record(std::move(inputs), out, std::move(backward_fn));
  }
  return Tensor(out);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  auto impl = make_impl(std::move(shape), std::move(values));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return from({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return from({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return checked(*this, "shape").shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("dim: axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(*this, "numel").data.size(); }

std::span<const double> Tensor::data() const { return checked(*this, "data").data; }

std::span<double> Tensor::mutable_data() {
  checked(*this, "mutable_data");
  return impl_->data;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  const auto& impl = checked(*this, "item");
  if (impl.data.size() != 1) {
    throw DimensionError("item: tensor of shape " + shape_to_string(impl.shape) +
                         " is not a single value");
  }
  return impl.data[0];
}

double Tensor::at(std::size_t i) const {
  const auto& impl = checked(*this, "at");
  if (i >= impl.data.size()) throw DimensionError("at: index out of range");
  return impl.data[i];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  const auto& impl = checked(*this, "at");
  if (impl.shape.size() != 2 || r >= impl.shape[0] || c >= impl.shape[1]) {
    throw DimensionError("at: (" + std::to_string(r) + "," + std::to_string(c) +
                         ") invalid for " + shape_to_string(impl.shape));
  }
  return impl.data[r * impl.shape[1] + c];
}

bool Tensor::requires_grad() const { return checked(*this, "requires_grad").requires_grad; }

bool Tensor::has_grad() const {
  const auto& impl = checked(*this, "has_grad");
  return !impl.grad.empty() || impl.data.empty();
}

std::span<const double> Tensor::grad() const {
  const auto& impl = checked(*this, "grad");
  if (impl.grad.size() != impl.data.size()) {
    throw ContractError("grad: tensor " + shape_to_string(impl.shape) + " has no gradient");
  }
  return impl.grad;
}

std::span<double> Tensor::mutable_grad() {
  checked(*this, "mutable_grad");
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  checked(*this, "zero_grad");
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::on_tape() const {
  const auto& impl = checked(*this, "on_tape");
  return impl.has_node && impl.tape_generation == Tape::current().generation();
}

Tensor Tensor::detach() const { return clone(false); }

Tensor Tensor::clone(bool requires_grad) const {
  const auto& impl = checked(*this, "clone");
  return from(impl.shape, impl.data, requires_grad);
}

// ---------------------------------------------------------------------------
// Tape

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

void Tape::record(std::vector<ImplPtr> inputs, const ImplPtr& output,
                  std::function<void(const Node&)> backward_fn) {
  output->has_node = true;
  output->tape_node = nodes_.size();
  output->tape_generation = generation_;
  nodes_.push_back(Node{std::move(inputs), output, std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss");
  const auto& impl = loss.impl();
  if (impl->data.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_to_string(impl->shape));
  }
  if (!impl->has_node || impl->tape_generation != generation_ || impl->tape_node >= nodes_.size() ||
      nodes_[impl->tape_node].output != impl) {
    throw ContractError("backward: loss is not on the active tape");
  }
  const std::size_t last = impl->tape_node;
  for (std::size_t i = 0; i <= last; ++i) {
    auto& out = *nodes_[i].output;
    out.grad.assign(out.data.size(), 0.0);
    out.touched = false;
  }
  impl->grad[0] = 1.0;
  impl->touched = true;
  for (std::size_t i = last + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.output->touched) continue;
    node.backward(node);
  }
}

void backward(const Tensor& loss) { Tape::current().backward(loss); }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& A = checked(a, "matmul");
  const auto& B = checked(b, "matmul");
  auto mismatch = [&] {
    return DimensionError("matmul: shape mismatch " + shape_to_string(A.shape) + " vs " +
                          shape_to_string(B.shape));
  };
  if (A.shape.size() == 2 && B.shape.size() == 2) {
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    if (B.shape[0] != k) throw mismatch();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A.data[i * k + p];
        const double* brow = &B.data[p * n];
        double* orow = &out[i * n];
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
    return finish({m, n}, std::move(out), {a.impl(), b.impl()}, [m, k, n](const Tape::Node& node) {
      const auto& g = node.output->grad;
      const auto& Ad = node.inputs[0]->data;
      const auto& Bd = node.inputs[1]->data;
      if (double* ga = grad_of(node.inputs[0])) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * Bd[p * n + j];
            ga[i * k + p] += acc;
          }
      }
      if (double* gb = grad_of(node.inputs[1])) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = Ad[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
          }
      }
    });
  }
  if (A.shape.size() == 2 && B.shape.size() == 1) {
    const std::size_t m = A.shape[0], k = A.shape[1];
    if (B.shape[0] != k) throw mismatch();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      const double* arow = &A.data[i * k];
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * B.data[p];
      out[i] = acc;
    }
    return finish({m}, std::move(out), {a.impl(), b.impl()}, [m, k](const Tape::Node& node) {
      const auto& g = node.output->grad;
      const auto& Ad = node.inputs[0]->data;
      const auto& x = node.inputs[1]->data;
      if (double* ga = grad_of(node.inputs[0])) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += g[i] * x[p];
      }
      if (double* gx = grad_of(node.inputs[1])) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) gx[p] += Ad[i * k + p] * g[i];
      }
    });
  }
  if (A.shape.size() == 1 && B.shape.size() == 2) {
    const std::size_t k = A.shape[0], n = B.shape[1];
    if (B.shape[0] != k) throw mismatch();
    std::vector<double> out(n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A.data[p];
      for (std::size_t j = 0; j < n; ++j) out[j] += av * B.data[p * n + j];
    }
    return finish({n}, std::move(out), {a.impl(), b.impl()}, [k, n](const Tape::Node& node) {
      const auto& g = node.output->grad;
      const auto& x = node.inputs[0]->data;
      const auto& Bd = node.inputs[1]->data;
      if (double* gx = grad_of(node.inputs[0])) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += Bd[p * n + j] * g[j];
          gx[p] += acc;
        }
      }
      if (double* gb = grad_of(node.inputs[1])) {
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x[p] * g[j];
      }
    });
  }
  throw mismatch();
}

Tensor transpose(const Tensor& a) {
  const auto& A = checked(a, "transpose");
  if (A.shape.size() != 2) {
    throw DimensionError("transpose: expected a matrix, got " + shape_to_string(A.shape));
  }
  const std::size_t r = A.shape[0], c = A.shape[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A.data[i * c + j];
  return finish({c, r}, std::move(out), {a.impl()}, [r, c](const Tape::Node& node) {
    const auto& g = node.output->grad;
    if (double* ga = grad_of(node.inputs[0])) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

const char* op_name(ElementwiseOp op) {
  switch (op) {
    case ElementwiseOp::add: return "add";
    case ElementwiseOp::sub: return "sub";
    case ElementwiseOp::mul: return "mul";
    case ElementwiseOp::div: return "div";
    case ElementwiseOp::sigmoid: return "sigmoid";
    case ElementwiseOp::tanh: return "tanh";
    case ElementwiseOp::exp: return "exp";
    case ElementwiseOp::log: return "log";
    case ElementwiseOp::sqrt: return "sqrt";
    case ElementwiseOp::relu: return "relu";
    case ElementwiseOp::neg: return "neg";
  }
  return "?";
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor elementwise(ElementwiseOp op, const Tensor& a) {
  const auto& A = checked(a, op_name(op));
  const std::size_t n = A.data.size();
  std::vector<double> out(n);
  switch (op) {
    case ElementwiseOp::sigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = stable_sigmoid(A.data[i]);
      break;
    case ElementwiseOp::tanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(A.data[i]);
      break;
    case ElementwiseOp::exp:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(A.data[i]);
      break;
    case ElementwiseOp::log:
      for (std::size_t i = 0; i < n; ++i) {
        if (!(A.data[i] > 0.0)) {
          throw DomainError("log: non-positive entry " + std::to_string(A.data[i]) + " at index " +
                            std::to_string(i));
        }
        out[i] = std::log(A.data[i]);
      }
      break;
    case ElementwiseOp::sqrt:
      for (std::size_t i = 0; i < n; ++i) {
        if (A.data[i] < 0.0) {
          throw DomainError("sqrt: negative entry " + std::to_string(A.data[i]) + " at index " +
                            std::to_string(i));
        }
        out[i] = std::sqrt(A.data[i]);
      }
      break;
    case ElementwiseOp::relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = A.data[i] > 0.0 ? A.data[i] : 0.0;
      break;
    case ElementwiseOp::neg:
      for (std::size_t i = 0; i < n; ++i) out[i] = -A.data[i];
      break;
    default:
      throw ContractError(std::string("elementwise: ") + op_name(op) + " is binary");
  }
  return finish(A.shape, std::move(out), {a.impl()}, [op, n](const Tape::Node& node) {
    double* ga = grad_of(node.inputs[0]);
    if (!ga) return;
    const auto& g = node.output->grad;
    const auto& y = node.output->data;
    const auto& x = node.inputs[0]->data;
    switch (op) {
      case ElementwiseOp::sigmoid:
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      case ElementwiseOp::tanh:
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      case ElementwiseOp::exp:
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i];
        break;
      case ElementwiseOp::log:
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / x[i];
        break;
      case ElementwiseOp::sqrt:
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / (2.0 * y[i]);
        break;
      case ElementwiseOp::relu:
        for (std::size_t i = 0; i < n; ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
        break;
      case ElementwiseOp::neg:
        for (std::size_t i = 0; i < n; ++i) ga[i] -= g[i];
        break;
      default:
        break;
    }
  });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  const auto& A = checked(a, op_name(op));
  const auto& B = checked(b, op_name(op));
  switch (op) {
    case ElementwiseOp::add:
    case ElementwiseOp::sub:
    case ElementwiseOp::mul:
    case ElementwiseOp::div:
      break;
    default:
      throw ContractError(std::string("elementwise: ") + op_name(op) + " is unary");
  }
  const bool a_scalar = A.shape.empty() && A.shape != B.shape;
  const bool b_scalar = B.shape.empty() && A.shape != B.shape;
  if (A.shape != B.shape && !a_scalar && !b_scalar) {
    throw DimensionError(std::string(op_name(op)) + ": shape mismatch " +
                         shape_to_string(A.shape) + " vs " + shape_to_string(B.shape));
  }
  const Shape out_shape = a_scalar ? B.shape : A.shape;
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = A.data[a_scalar ? 0 : i];
    const double y = B.data[b_scalar ? 0 : i];
    switch (op) {
      case ElementwiseOp::add: out[i] = x + y; break;
      case ElementwiseOp::sub: out[i] = x - y; break;
      case ElementwiseOp::mul: out[i] = x * y; break;
      case ElementwiseOp::div:
        if (y == 0.0) throw DomainError("div: division by zero at index " + std::to_string(i));
        out[i] = x / y;
        break;
      default: break;
    }
  }
  return finish(out_shape, std::move(out), {a.impl(), b.impl()},
                [op, n, a_scalar, b_scalar](const Tape::Node& node) {
                  const auto& g = node.output->grad;
                  const auto& xa = node.inputs[0]->data;
                  const auto& xb = node.inputs[1]->data;
                  double* ga = grad_of(node.inputs[0]);
                  double* gb = grad_of(node.inputs[1]);
                  for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t ia = a_scalar ? 0 : i;
                    const std::size_t ib = b_scalar ? 0 : i;
                    switch (op) {
                      case ElementwiseOp::add:
                        if (ga) ga[ia] += g[i];
                        if (gb) gb[ib] += g[i];
                        break;
                      case ElementwiseOp::sub:
                        if (ga) ga[ia] += g[i];
                        if (gb) gb[ib] -= g[i];
                        break;
                      case ElementwiseOp::mul:
                        if (ga) ga[ia] += g[i] * xb[ib];
                        if (gb) gb[ib] += g[i] * xa[ia];
                        break;
                      case ElementwiseOp::div:
                        if (ga) ga[ia] += g[i] / xb[ib];
                        if (gb) gb[ib] -= g[i] * xa[ia] / (xb[ib] * xb[ib]);
                        break;
                      default: break;
                    }
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::div, a, b); }
Tensor neg(const Tensor& a) { return elementwise(ElementwiseOp::neg, a); }
Tensor sigmoid(const Tensor& a) { return elementwise(ElementwiseOp::sigmoid, a); }
Tensor tanh(const Tensor& a) { return elementwise(ElementwiseOp::tanh, a); }
Tensor exp(const Tensor& a) { return elementwise(ElementwiseOp::exp, a); }
Tensor log(const Tensor& a) { return elementwise(ElementwiseOp::log, a); }
Tensor sqrt(const Tensor& a) { return elementwise(ElementwiseOp::sqrt, a); }
Tensor relu(const Tensor& a) { return elementwise(ElementwiseOp::relu, a); }

Tensor scale(const Tensor& a, double factor) {
  const auto& A = checked(a, "scale");
  std::vector<double> out(A.data);
  for (double& v : out) v *= factor;
  return finish(A.shape, std::move(out), {a.impl()}, [factor](const Tape::Node& node) {
    if (double* ga = grad_of(node.inputs[0])) {
      const auto& g = node.output->grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    }
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  const auto& A = checked(a, "add_scalar");
  std::vector<double> out(A.data);
  for (double& v : out) v += value;
  return finish(A.shape, std::move(out), {a.impl()}, [](const Tape::Node& node) {
    if (double* ga = grad_of(node.inputs[0])) {
      const auto& g = node.output->grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

void check_softmax_input(const TensorImpl& X, const char* what) {
  if (X.shape.size() != 1) {
    throw DimensionError(std::string(what) + ": expected a vector, got " +
                         shape_to_string(X.shape));
  }
  if (X.data.empty()) throw DimensionError(std::string(what) + ": empty input");
  for (double v : X.data) {
    if (!std::isfinite(v)) throw DomainError(std::string(what) + ": non-finite entry");
  }
}

}  // namespace

Tensor softmax(const Tensor& x) {
  const auto& X = checked(x, "softmax");
  check_softmax_input(X, "softmax");
  const double mx = *std::max_element(X.data.begin(), X.data.end());
  std::vector<double> out(X.data.size());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(X.data[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return finish(X.shape, std::move(out), {x.impl()}, [](const Tape::Node& node) {
    double* gx = grad_of(node.inputs[0]);
    if (!gx) return;
    const auto& g = node.output->grad;
    const auto& y = node.output->data;
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += y[i] * (g[i] - dot);
  });
}

Tensor log_softmax(const Tensor& x) {
  const auto& X = checked(x, "log_softmax");
  check_softmax_input(X, "log_softmax");
  const double mx = *std::max_element(X.data.begin(), X.data.end());
  double total = 0.0;
  for (double v : X.data) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(X.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X.data[i] - lse;
  return finish(X.shape, std::move(out), {x.impl()}, [](const Tape::Node& node) {
    double* gx = grad_of(node.inputs[0]);
    if (!gx) return;
    const auto& g = node.output->grad;
    const auto& y = node.output->data;
    double gsum = 0.0;
    for (double v : g) gsum += v;
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] - std::exp(y[i]) * gsum;
  });
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  std::vector<ImplPtr> inputs;
  for (const auto& p : parts) {
    const auto& P = checked(p, "concat");
    if (P.data.empty()) continue;
    inputs.push_back(p.impl());
  }
  if (inputs.empty()) {
    if (parts.empty()) throw ContractError("concat: no tensors given");
    return parts.front().detach();
  }
  const Shape& first = inputs.front()->shape;
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " invalid for " +
                         shape_to_string(first));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  std::vector<std::size_t> widths;
  std::size_t total_axis = 0;
  for (const auto& in : inputs) {
    bool ok = in->shape.size() == first.size();
    for (std::size_t d = 0; ok && d < first.size(); ++d) {
      if (d != axis && in->shape[d] != first[d]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: mismatched non-axis dimension " + shape_to_string(first) +
                           " vs " + shape_to_string(in->shape) + " along axis " +
                           std::to_string(axis));
    }
    widths.push_back(in->shape[axis] * inner);
    total_axis += in->shape[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_axis;
  const std::size_t row_width = total_axis * inner;
  std::vector<double> out(outer * row_width);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(&inputs[k]->data[o * widths[k]], widths[k], &out[o * row_width + offset]);
    }
    offset += widths[k];
  }
  return finish(std::move(out_shape), std::move(out), inputs,
                [widths, outer, row_width](const Tape::Node& node) {
                  const auto& g = node.output->grad;
                  std::size_t off = 0;
                  for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                    if (double* gk = grad_of(node.inputs[k])) {
                      for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                          gk[o * widths[k] + j] += g[o * row_width + off + j];
                    }
                    off += widths[k];
                  }
                });
}

Tensor sum(const Tensor& a) {
  const auto& A = checked(a, "sum");
  double total = 0.0;
  for (double v : A.data) total += v;
  return finish({}, {total}, {a.impl()}, [](const Tape::Node& node) {
    if (double* ga = grad_of(node.inputs[0])) {
      const double g = node.output->grad[0];
      for (std::size_t i = 0; i < node.inputs[0]->data.size(); ++i) ga[i] += g;
    }
  });
}

Tensor mean_rows(const Tensor& a) {
  const auto& A = checked(a, "mean_rows");
  if (A.shape.size() != 2) {
    throw DimensionError("mean_rows: expected a matrix, got " + shape_to_string(A.shape));
  }
  const std::size_t r = A.shape[0], c = A.shape[1];
  if (r == 0) throw EmptyInputError("mean_rows: zero rows");
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += A.data[i * c + j];
  for (double& v : out) v /= static_cast<double>(r);
  return finish({c}, std::move(out), {a.impl()}, [r, c](const Tape::Node& node) {
    if (double* ga = grad_of(node.inputs[0])) {
      const auto& g = node.output->grad;
      const double inv = 1.0 / static_cast<double>(r);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j] * inv;
    }
  });
}

Tensor max_all(const Tensor& a) {
  const auto& A = checked(a, "max_all");
  if (A.data.empty()) throw EmptyInputError("max_all: empty tensor");
  const auto it = std::max_element(A.data.begin(), A.data.end());
  const std::size_t arg = static_cast<std::size_t>(it - A.data.begin());
  return finish({}, {*it}, {a.impl()}, [arg](const Tape::Node& node) {
    if (double* ga = grad_of(node.inputs[0])) ga[arg] += node.output->grad[0];
  });
}

Tensor index(const Tensor& a, std::size_t i) {
  const auto& A = checked(a, "index");
  if (A.shape.size() != 1 || i >= A.shape[0]) {
    throw DimensionError("index: " + std::to_string(i) + " invalid for " +
                         shape_to_string(A.shape));
  }
  return finish({}, {A.data[i]}, {a.impl()}, [i](const Tape::Node& node) {
    if (double* ga = grad_of(node.inputs[0])) ga[i] += node.output->grad[0];
  });
}

Tensor row(const Tensor& a, std::size_t i) {
  const auto& A = checked(a, "row");
  if (A.shape.size() != 2 || i >= A.shape[0]) {
    throw DimensionError("row: " + std::to_string(i) + " invalid for " +
                         shape_to_string(A.shape));
  }
  const std::size_t c = A.shape[1];
  std::vector<double> out(A.data.begin() + static_cast<std::ptrdiff_t>(i * c),
                          A.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
  return finish({c}, std::move(out), {a.impl()}, [i, c](const Tape::Node& node) {
    if (double* ga = grad_of(node.inputs[0])) {
      const auto& g = node.output->grad;
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j];
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const int> ids) {
  const auto& A = checked(a, "gather_rows");
  if (A.shape.size() != 2) {
    throw DimensionError("gather_rows: expected a matrix, got " + shape_to_string(A.shape));
  }
  const std::size_t r = A.shape[0], c = A.shape[1];
  std::vector<int> rows(ids.begin(), ids.end());
  std::vector<double> out(rows.size() * c);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || static_cast<std::size_t>(rows[k]) >= r) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[k]) + " out of range for " +
                           shape_to_string(A.shape));
    }
    std::copy_n(&A.data[static_cast<std::size_t>(rows[k]) * c], c, &out[k * c]);
  }
  return finish({rows.size(), c}, std::move(out), {a.impl()}, [rows, c](const Tape::Node& node) {
    if (double* ga = grad_of(node.inputs[0])) {
      const auto& g = node.output->grad;
      for (std::size_t k = 0; k < rows.size(); ++k)
        for (std::size_t j = 0; j < c; ++j)
          ga[static_cast<std::size_t>(rows[k]) * c + j] += g[k * c + j];
    }
  });
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t length) {
  const auto& A = checked(a, "slice");
  if (A.shape.size() != 1 || begin + length > A.shape[0]) {
    throw DimensionError("slice: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + length) + ") invalid for " +
                         shape_to_string(A.shape));
  }
  std::vector<double> out(A.data.begin() + static_cast<std::ptrdiff_t>(begin),
                          A.data.begin() + static_cast<std::ptrdiff_t>(begin + length));
  return finish({length}, std::move(out), {a.impl()}, [begin, length](const Tape::Node& node) {
    if (double* ga = grad_of(node.inputs[0])) {
      const auto& g = node.output->grad;
      for (std::size_t j = 0; j < length; ++j) ga[begin + j] += g[j];
    }
  });
}

Tensor add_row_broadcast(const Tensor& m, const Tensor& v) {
  const auto& M = checked(m, "add_row_broadcast");
  const auto& V = checked(v, "add_row_broadcast");
  if (M.shape.size() != 2 || V.shape.size() != 1 || M.shape[1] != V.shape[0]) {
    throw DimensionError("add_row_broadcast: shape mismatch " + shape_to_string(M.shape) +
                         " vs " + shape_to_string(V.shape));
  }
  const std::size_t r = M.shape[0], c = M.shape[1];
  std::vector<double> out(M.data);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += V.data[j];
  return finish(M.shape, std::move(out), {m.impl(), v.impl()}, [r, c](const Tape::Node& node) {
    const auto& g = node.output->grad;
    if (double* gm = grad_of(node.inputs[0])) {
      for (std::size_t i = 0; i < r * c; ++i) gm[i] += g[i];
    }
    if (double* gv = grad_of(node.inputs[1])) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  const auto& A = checked(a, "reshape");
  if (shape_numel(shape) != A.data.size()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(A.shape) + " as " +
                         shape_to_string(shape));
  }
  return finish(std::move(shape), A.data, {a.impl()}, [](const Tape::Node& node) {
    if (double* ga = grad_of(node.inputs[0])) {
      const auto& g = node.output->grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw EmptyInputError("stack_rows: no rows");
  std::vector<Tensor> as_matrices;
  as_matrices.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.rank() != 1) {
      throw DimensionError("stack_rows: expected vectors, got " + shape_to_string(r.shape()));
    }
    as_matrices.push_back(reshape(r, {1, r.dim(0)}));
  }
  return concat(as_matrices, 0);
}

}  // namespace hlstmat
