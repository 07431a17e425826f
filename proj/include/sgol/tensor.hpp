#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgol {

using Shape = std::vector<std::size_t>;

/// Thrown on shape mismatches, domain errors (log of non-positive values)
/// and non-finite results.
class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorNode;
}

/// Dense row-major array of doubles with reverse-mode autodiff.
///
/// A Tensor is a cheap shared handle; ops on tensors that require gradients
/// record their inputs and a backward rule on the result node. backward()
/// replays the recorded graph in reverse topological order and accumulates
/// d(root)/d(leaf) into each requires-grad leaf. The graph is confined to
/// the thread that built it.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  bool is_scalar() const { return size() == 1; }

  const std::vector<double>& data() const;
  std::vector<double>& data();
  double value() const;  // single-element tensors only
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  const std::vector<double>& grad() const;
  std::vector<double>* mutable_grad();
  void zero_grad();

  /// Accumulates d(this)/d(leaf) into every requires-grad leaf reachable
  /// from this node. Repeated calls accumulate. Requires a scalar root.
  void backward() const;

  bool defined() const { return node_ != nullptr; }

 private:
  friend Tensor custom_op(std::string, Shape, std::vector<double>,
                          std::vector<Tensor>,
                          std::function<void(const std::vector<double>&)>);
  friend struct detail::TensorNode;
  explicit Tensor(std::shared_ptr<detail::TensorNode> node);
  std::shared_ptr<detail::TensorNode> node_;
};

/// While alive on a thread, ops do not record backward rules. Used by the
/// finite-difference driver to re-evaluate functions cheaply.
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

// Elementwise operations. Binary ops broadcast right-aligned with size-1
// expansion. Results must be finite or TensorError is thrown.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor softplus(const Tensor& a);  // log(1 + e^x), overflow-safe
Tensor pow_scalar(const Tensor& a, double exponent);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);
Tensor operator-(const Tensor& a);

/// 2-D matrix product.
Tensor matmul(const Tensor& a, const Tensor& b);

// Reductions. Empty axis list means reduce over all axes; the reduced axes
// are removed unless keepdims is set. max routes the gradient to the first
// maximal element in row-major order.
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, const std::vector<std::size_t>& axes,
           bool keepdims = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, const std::vector<std::size_t>& axes,
            bool keepdims = false);
Tensor max(const Tensor& a);
Tensor max(const Tensor& a, const std::vector<std::size_t>& axes,
           bool keepdims = false);

// Structural operations.
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose2d(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t length);
Tensor broadcast_to(const Tensor& a, Shape shape);

/// Numerically stable softmax / log-softmax along one axis.
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);

/// Escape hatch for modules that add differentiable primitives (convolution,
/// box overlap, ...). `backward_fn` receives the output gradient and must
/// accumulate into the inputs' grad buffers. Recorded only when some input
/// requires a gradient and grads are enabled.
Tensor custom_op(std::string name, Shape shape, std::vector<double> data,
                 std::vector<Tensor> inputs,
                 std::function<void(const std::vector<double>&)> backward_fn);

/// max over params of |analytic - central difference| / max(1, |analytic|).
/// `f` must be a deterministic scalar function of `params`; it is evaluated
/// twice up front and a mismatch is an error.
double finite_difference_check(const std::function<Tensor()>& f,
                               const std::vector<Tensor>& params,
                               double epsilon = 1e-5);

Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace sgol
