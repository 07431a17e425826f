#include "sgol/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace sgol {

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(const std::vector<double>&)> backward_fn;
  std::string op_name;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

using detail::TensorNode;

namespace {

thread_local bool g_grad_enabled = true;

void check(bool cond, const std::string& msg) {
  if (!cond) throw TensorError(msg);
}

void ensure_finite(const char* op, const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw TensorError(std::string(op) + ": non-finite result");
    }
  }
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  return strides;
}

// Strides of `shape` right-aligned against `out`, with 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& shape,
                                           const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  auto base = row_major_strides(shape);
  std::size_t offset = out.size() - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i) {
    strides[offset + i] = (shape[i] == 1) ? 0 : base[i];
  }
  return strides;
}

// Maps every linear index of `out_shape` to a linear index of the
// broadcast input. Identity when shapes match.
std::vector<std::size_t> broadcast_index_map(const Shape& in_shape,
                                             const Shape& out_shape) {
  std::size_t n = shape_numel(out_shape);
  std::vector<std::size_t> map(n);
  if (in_shape == out_shape) {
    for (std::size_t i = 0; i < n; ++i) map[i] = i;
    return map;
  }
  auto strides = broadcast_strides(in_shape, out_shape);
  std::vector<std::size_t> index(out_shape.size(), 0);
  for (std::size_t lin = 0; lin < n; ++lin) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < out_shape.size(); ++d) src += index[d] * strides[d];
    map[lin] = src;
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      if (++index[d] < out_shape[d]) break;
      index[d] = 0;
    }
  }
  return map;
}

std::shared_ptr<TensorNode> make_leaf(Shape shape, std::vector<double> data,
                                      bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw TensorError("broadcast: incompatible shapes " + shape_str(a) +
                        " and " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tensor handle

Tensor::Tensor() = default;
Tensor::Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0),
                          requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value),
                          requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  check(shape_numel(shape) == data.size(),
        "from_data: shape " + shape_str(shape) + " expects " +
            std::to_string(shape_numel(shape)) + " values, got " +
            std::to_string(data.size()));
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

const Shape& Tensor::shape() const {
  check(node_ != nullptr, "use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::size() const {
  check(node_ != nullptr, "use of undefined tensor");
  return node_->data.size();
}

const std::vector<double>& Tensor::data() const {
  check(node_ != nullptr, "use of undefined tensor");
  return node_->data;
}

std::vector<double>& Tensor::data() {
  check(node_ != nullptr, "use of undefined tensor");
  return node_->data;
}

double Tensor::value() const {
  check(size() == 1, "value(): tensor has " + std::to_string(size()) +
                         " elements, expected 1");
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  check(index.size() == s.size(), "at(): rank mismatch");
  auto strides = row_major_strides(s);
  std::size_t lin = 0, d = 0;
  for (std::size_t i : index) {
    check(i < s[d], "at(): index out of range");
    lin += i * strides[d++];
  }
  return node_->data[lin];
}

bool Tensor::requires_grad() const {
  return node_ != nullptr && node_->requires_grad;
}

void Tensor::set_requires_grad(bool flag) {
  check(node_ != nullptr, "use of undefined tensor");
  node_->requires_grad = flag;
  if (flag) node_->ensure_grad();
}

const std::vector<double>& Tensor::grad() const {
  check(requires_grad(), "grad(): tensor does not require gradients");
  node_->ensure_grad();
  return node_->grad;
}

std::vector<double>* Tensor::mutable_grad() {
  if (!requires_grad()) return nullptr;
  node_->ensure_grad();
  return &node_->grad;
}

void Tensor::zero_grad() {
  if (requires_grad()) node_->grad.assign(node_->data.size(), 0.0);
}

void Tensor::backward() const {
  check(node_ != nullptr, "backward: undefined tensor");
  check(size() == 1, "backward: root must be scalar, got " +
                         shape_str(node_->shape));
  check(node_->requires_grad, "backward: root does not require gradients");

  // Iterative post-order DFS; children appear after all their parents.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior nodes restart from zero on every pass; leaves accumulate.
  for (TensorNode* node : order) {
    if (!node->requires_grad) continue;
    node->ensure_grad();
    if (!node->parents.empty() && node != node_.get()) {
      std::fill(node->grad.begin(), node->grad.end(), 0.0);
    }
  }
  if (node_->requires_grad) {
    node_->ensure_grad();
    if (!node_->parents.empty()) {
      std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }
    node_->grad[0] += 1.0;
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward_fn && node->requires_grad) {
      node->backward_fn(node->grad);
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor custom_op(std::string name, Shape shape, std::vector<double> data,
                 std::vector<Tensor> inputs,
                 std::function<void(const std::vector<double>&)> backward_fn) {
  check(shape_numel(shape) == data.size(),
        name + ": output data does not match declared shape");
  ensure_finite(name.c_str(), data);
  bool track = false;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) track = track || t.requires_grad();
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op_name = std::move(name);
  if (track) {
    node->requires_grad = true;
    node->ensure_grad();
    for (const Tensor& t : inputs) {
      if (t.node_) node->parents.push_back(t.node_);
    }
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class Unary {
  kNeg,
  kRelu,
  kSigmoid,
  kLog,
  kExp,
  kAbs,
  kSqrt,
  kSoftplus
};

double softplus_stable(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Tensor unary_op(const char* name, Unary kind, const Tensor& a) {
  const auto& in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    double x = in[i];
    switch (kind) {
      case Unary::kNeg: out[i] = -x; break;
      case Unary::kRelu: out[i] = x > 0.0 ? x : 0.0; break;
      case Unary::kSigmoid:
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                          : std::exp(x) / (1.0 + std::exp(x));
        break;
      case Unary::kLog:
        check(x > 0.0, "log: non-positive input");
        out[i] = std::log(x);
        break;
      case Unary::kExp: out[i] = std::exp(x); break;
      case Unary::kAbs: out[i] = std::abs(x); break;
      case Unary::kSqrt:
        check(x >= 0.0, "sqrt: negative input");
        out[i] = std::sqrt(x);
        break;
      case Unary::kSoftplus: out[i] = softplus_stable(x); break;
    }
  }

  // sigmoid/exp/sqrt differentiate through their own output; keep a copy
  // for the backward rule instead of keeping the whole result node alive.
  bool track = g_grad_enabled && a.requires_grad();
  bool needs_y = kind == Unary::kSigmoid || kind == Unary::kExp ||
                 kind == Unary::kSqrt;
  std::vector<double> y_copy;
  if (track && needs_y) y_copy = out;

  Tensor a_copy = a;
  auto bw = [a_copy, kind, y = std::move(y_copy)](
                const std::vector<double>& g) mutable {
    auto* ga = a_copy.mutable_grad();
    if (!ga) return;
    const auto& x = a_copy.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double d = 0.0;
      switch (kind) {
        case Unary::kNeg: d = -1.0; break;
        case Unary::kRelu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
        case Unary::kSigmoid: d = y[i] * (1.0 - y[i]); break;
        case Unary::kLog: d = 1.0 / x[i]; break;
        case Unary::kExp: d = y[i]; break;
        case Unary::kAbs:
          d = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
          break;
        case Unary::kSqrt: d = 0.5 / y[i]; break;
        case Unary::kSoftplus:
          d = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                          : std::exp(x[i]) / (1.0 + std::exp(x[i]));
          break;
      }
      (*ga)[i] += g[i] * d;
    }
  };
  return custom_op(name, a.shape(), std::move(out), {a}, std::move(bw));
}

enum class Binary { kAdd, kSub, kMul, kDiv, kMin, kMax };

Tensor binary_op(const char* name, Binary kind, const Tensor& a,
                 const Tensor& b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  std::size_t n = shape_numel(out_shape);
  const auto& da = a.data();
  const auto& db = b.data();

  bool same_a = a.shape() == out_shape;
  bool same_b = b.shape() == out_shape;
  std::vector<std::size_t> map_a, map_b;
  if (!same_a) map_a = broadcast_index_map(a.shape(), out_shape);
  if (!same_b) map_b = broadcast_index_map(b.shape(), out_shape);

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = da[same_a ? i : map_a[i]];
    double y = db[same_b ? i : map_b[i]];
    switch (kind) {
      case Binary::kAdd: out[i] = x + y; break;
      case Binary::kSub: out[i] = x - y; break;
      case Binary::kMul: out[i] = x * y; break;
      case Binary::kDiv:
        check(y != 0.0, "div: division by zero");
        out[i] = x / y;
        break;
      case Binary::kMin: out[i] = x <= y ? x : y; break;
      case Binary::kMax: out[i] = x >= y ? x : y; break;
    }
  }
  ensure_finite(name, out);

  bool track =
      g_grad_enabled && (a.requires_grad() || b.requires_grad());
  if (!track) {
    return custom_op(name, std::move(out_shape), std::move(out), {}, nullptr);
  }

  Tensor a_copy = a, b_copy = b;
  Shape out_shape_copy = out_shape;
  auto bw = [a_copy, b_copy, kind, out_shape_copy, same_a, same_b, map_a,
             map_b](const std::vector<double>& g) mutable {
    const auto& da2 = a_copy.data();
    const auto& db2 = b_copy.data();
    auto* ga = a_copy.mutable_grad();
    auto* gb = b_copy.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      std::size_t ia = same_a ? i : map_a[i];
      std::size_t ib = same_b ? i : map_b[i];
      double x = da2[ia], y = db2[ib], dx = 0.0, dy = 0.0;
      switch (kind) {
        case Binary::kAdd: dx = 1.0; dy = 1.0; break;
        case Binary::kSub: dx = 1.0; dy = -1.0; break;
        case Binary::kMul: dx = y; dy = x; break;
        case Binary::kDiv: dx = 1.0 / y; dy = -x / (y * y); break;
        case Binary::kMin:
          dx = x <= y ? 1.0 : 0.0;
          dy = x <= y ? 0.0 : 1.0;
          break;
        case Binary::kMax:
          dx = x >= y ? 1.0 : 0.0;
          dy = x >= y ? 0.0 : 1.0;
          break;
      }
      if (ga) (*ga)[ia] += g[i] * dx;
      if (gb) (*gb)[ib] += g[i] * dy;
    }
  };
  return custom_op(name, std::move(out_shape), std::move(out),
                   {a_copy, b_copy}, std::move(bw));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", Binary::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", Binary::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", Binary::kMul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op("div", Binary::kDiv, a, b); }
Tensor minimum(const Tensor& a, const Tensor& b) { return binary_op("min", Binary::kMin, a, b); }
Tensor maximum(const Tensor& a, const Tensor& b) { return binary_op("max", Binary::kMax, a, b); }

Tensor neg(const Tensor& a) { return unary_op("neg", Unary::kNeg, a); }
Tensor relu(const Tensor& a) { return unary_op("relu", Unary::kRelu, a); }
Tensor sigmoid(const Tensor& a) { return unary_op("sigmoid", Unary::kSigmoid, a); }
Tensor log(const Tensor& a) { return unary_op("log", Unary::kLog, a); }
Tensor exp(const Tensor& a) { return unary_op("exp", Unary::kExp, a); }
Tensor abs(const Tensor& a) { return unary_op("abs", Unary::kAbs, a); }
Tensor sqrt(const Tensor& a) { return unary_op("sqrt", Unary::kSqrt, a); }
Tensor softplus(const Tensor& a) { return unary_op("softplus", Unary::kSoftplus, a); }

Tensor pow_scalar(const Tensor& a, double exponent) {
  const auto& in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    check(in[i] >= 0.0, "pow_scalar: negative base");
    out[i] = std::pow(in[i], exponent);
  }
  ensure_finite("pow_scalar", out);
  Tensor a_copy = a;
  auto bw = [a_copy, exponent](const std::vector<double>& g) mutable {
    auto* ga = a_copy.mutable_grad();
    if (!ga) return;
    const auto& x = a_copy.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double d = exponent * std::pow(x[i], exponent - 1.0);
      (*ga)[i] += g[i] * d;
    }
  };
  return custom_op("pow_scalar", a.shape(), std::move(out), {a}, std::move(bw));
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul: expects 2-D operands, got " +
                                            shape_str(a.shape()) + " and " +
                                            shape_str(b.shape()));
  std::size_t m = a.shape()[0], k = a.shape()[1];
  std::size_t k2 = b.shape()[0], n = b.shape()[1];
  check(k == k2, "matmul: inner dimensions differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));

  const auto& da = a.data();
  const auto& db = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double aip = da[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &db[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  ensure_finite("matmul", out);

  Tensor a_copy = a, b_copy = b;
  auto bw = [a_copy, b_copy, m, k, n](const std::vector<double>& g) mutable {
    const auto& da2 = a_copy.data();
    const auto& db2 = b_copy.data();
    if (auto* ga = a_copy.mutable_grad()) {
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = &g[i * n];
          const double* brow = &db2[p * n];
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          (*ga)[i * k + p] += acc;
        }
      }
    }
    if (auto* gb = b_copy.mutable_grad()) {
      // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          double aip = da2[i * k + p];
          if (aip == 0.0) continue;
          double* gbrow = &(*gb)[p * n];
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  };
  return custom_op("matmul", {m, n}, std::move(out), {a, b}, std::move(bw));
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

std::vector<std::size_t> normalize_axes(const Tensor& a,
                                        const std::vector<std::size_t>& axes) {
  std::vector<std::size_t> out = axes;
  if (out.empty()) {
    out.resize(a.rank());
    for (std::size_t i = 0; i < a.rank(); ++i) out[i] = i;
    return out;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  for (std::size_t axis : out) {
    check(axis < a.rank(), "reduce: axis " + std::to_string(axis) +
                               " out of range for " + shape_str(a.shape()));
  }
  return out;
}

Shape reduced_shape(const Shape& in, const std::vector<std::size_t>& axes,
                    bool keepdims) {
  Shape out;
  std::size_t ai = 0;
  for (std::size_t d = 0; d < in.size(); ++d) {
    bool reduced = ai < axes.size() && axes[ai] == d;
    if (reduced) {
      ++ai;
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(in[d]);
    }
  }
  return out;
}

enum class Reduce { kSum, kMean, kMax };

Tensor reduce_op(const char* name, Reduce kind, const Tensor& a,
                 const std::vector<std::size_t>& axes_in, bool keepdims) {
  auto axes = normalize_axes(a, axes_in);
  Shape out_shape = reduced_shape(a.shape(), axes, keepdims);
  std::size_t out_n = shape_numel(out_shape);
  std::size_t group = a.size() == 0 ? 0 : a.size() / std::max<std::size_t>(out_n, 1);

  // Map each input linear index to its output bucket.
  const Shape& in_shape = a.shape();
  auto in_strides = row_major_strides(in_shape);
  Shape kept_shape = reduced_shape(in_shape, axes, false);
  auto kept_strides = row_major_strides(kept_shape);
  std::vector<bool> is_reduced(in_shape.size(), false);
  for (std::size_t axis : axes) is_reduced[axis] = true;
  std::vector<std::size_t> out_stride_of_dim(in_shape.size(), 0);
  {
    std::size_t kd = 0;
    for (std::size_t d = 0; d < in_shape.size(); ++d) {
      if (!is_reduced[d]) out_stride_of_dim[d] = kept_strides[kd++];
    }
  }

  const auto& in = a.data();
  std::vector<double> out;
  std::vector<std::size_t> argmax;
  if (kind == Reduce::kMax) {
    check(group > 0, "max: empty reduction");
    out.assign(out_n, -std::numeric_limits<double>::infinity());
    argmax.assign(out_n, 0);
  } else {
    out.assign(out_n, 0.0);
  }

  std::vector<std::size_t> index(in_shape.size(), 0);
  for (std::size_t lin = 0; lin < in.size(); ++lin) {
    std::size_t bucket = 0;
    for (std::size_t d = 0; d < in_shape.size(); ++d) {
      bucket += index[d] * out_stride_of_dim[d];
    }
    switch (kind) {
      case Reduce::kSum:
      case Reduce::kMean: out[bucket] += in[lin]; break;
      case Reduce::kMax:
        if (in[lin] > out[bucket]) {
          out[bucket] = in[lin];
          argmax[bucket] = lin;
        }
        break;
    }
    for (std::size_t d = in_shape.size(); d-- > 0;) {
      if (++index[d] < in_shape[d]) break;
      index[d] = 0;
    }
  }
  if (kind == Reduce::kMean) {
    for (double& v : out) v /= static_cast<double>(group);
  }
  ensure_finite(name, out);

  Tensor a_copy = a;
  auto out_stride_copy = out_stride_of_dim;
  auto in_shape_copy = in_shape;
  auto bw = [a_copy, kind, group, argmax, out_stride_copy,
             in_shape_copy](const std::vector<double>& g) mutable {
    auto* ga = a_copy.mutable_grad();
    if (!ga) return;
    if (kind == Reduce::kMax) {
      for (std::size_t b = 0; b < g.size(); ++b) (*ga)[argmax[b]] += g[b];
      return;
    }
    double scale = kind == Reduce::kMean ? 1.0 / static_cast<double>(group) : 1.0;
    std::vector<std::size_t> index(in_shape_copy.size(), 0);
    for (std::size_t lin = 0; lin < ga->size(); ++lin) {
      std::size_t bucket = 0;
      for (std::size_t d = 0; d < in_shape_copy.size(); ++d) {
        bucket += index[d] * out_stride_copy[d];
      }
      (*ga)[lin] += g[bucket] * scale;
      for (std::size_t d = in_shape_copy.size(); d-- > 0;) {
        if (++index[d] < in_shape_copy[d]) break;
        index[d] = 0;
      }
    }
  };
  return custom_op(name, std::move(out_shape), std::move(out), {a},
                   std::move(bw));
}

}  // namespace

Tensor sum(const Tensor& a) { return reduce_op("sum", Reduce::kSum, a, {}, false); }
Tensor sum(const Tensor& a, const std::vector<std::size_t>& axes, bool keepdims) {
  return reduce_op("sum", Reduce::kSum, a, axes, keepdims);
}
Tensor mean(const Tensor& a) { return reduce_op("mean", Reduce::kMean, a, {}, false); }
Tensor mean(const Tensor& a, const std::vector<std::size_t>& axes, bool keepdims) {
  return reduce_op("mean", Reduce::kMean, a, axes, keepdims);
}
Tensor max(const Tensor& a) { return reduce_op("max", Reduce::kMax, a, {}, false); }
Tensor max(const Tensor& a, const std::vector<std::size_t>& axes, bool keepdims) {
  return reduce_op("max", Reduce::kMax, a, axes, keepdims);
}

// ---------------------------------------------------------------------------
// Structural

Tensor reshape(const Tensor& a, Shape shape) {
  check(shape_numel(shape) == a.size(),
        "reshape: cannot view " + shape_str(a.shape()) + " as " +
            shape_str(shape));
  Tensor a_copy = a;
  auto bw = [a_copy](const std::vector<double>& g) mutable {
    auto* ga = a_copy.mutable_grad();
    if (!ga) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  };
  return custom_op("reshape", std::move(shape), a.data(), {a}, std::move(bw));
}

Tensor transpose2d(const Tensor& a) {
  check(a.rank() == 2, "transpose2d: expects 2-D tensor");
  std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto& in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  }
  Tensor a_copy = a;
  auto bw = [a_copy, m, n](const std::vector<double>& g) mutable {
    auto* ga = a_copy.mutable_grad();
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += g[j * m + i];
    }
  };
  return custom_op("transpose2d", {n, m}, std::move(out), {a}, std::move(bw));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  check(!parts.empty(), "concat: no inputs");
  const Shape& first = parts[0].shape();
  check(axis < first.size(), "concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& t : parts) {
    check(t.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis) {
        check(t.shape()[d] == first[d],
              "concat: non-axis dimensions must agree");
      }
    }
    out_shape[axis] += t.shape()[axis];
  }

  // outer x axis x inner layout
  std::size_t inner = 1, outer = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];

  std::vector<double> out(shape_numel(out_shape));
  std::size_t axis_total = out_shape[axis];
  std::size_t axis_offset = 0;
  for (const Tensor& t : parts) {
    std::size_t axis_len = t.shape()[axis];
    const auto& in = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = &in[o * axis_len * inner];
      double* dst = &out[(o * axis_total + axis_offset) * inner];
      std::copy(src, src + axis_len * inner, dst);
    }
    axis_offset += axis_len;
  }

  std::vector<Tensor> inputs = parts;
  auto bw = [inputs, outer, inner, axis_total,
             axis](const std::vector<double>& g) mutable {
    std::size_t axis_offset = 0;
    for (Tensor& t : inputs) {
      std::size_t axis_len = t.shape()[axis];
      if (auto* gt = t.mutable_grad()) {
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = &g[(o * axis_total + axis_offset) * inner];
          double* dst = &(*gt)[o * axis_len * inner];
          for (std::size_t i = 0; i < axis_len * inner; ++i) dst[i] += src[i];
        }
      }
      axis_offset += axis_len;
    }
  };
  return custom_op("concat", std::move(out_shape), std::move(out), parts,
                   std::move(bw));
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t length) {
  check(axis < a.rank(), "slice: axis out of range");
  check(start + length <= a.shape()[axis],
        "slice: range [" + std::to_string(start) + ", " +
            std::to_string(start + length) + ") exceeds axis size " +
            std::to_string(a.shape()[axis]));
  const Shape& in_shape = a.shape();
  std::size_t inner = 1, outer = 1;
  for (std::size_t d = axis + 1; d < in_shape.size(); ++d) inner *= in_shape[d];
  for (std::size_t d = 0; d < axis; ++d) outer *= in_shape[d];
  std::size_t axis_total = in_shape[axis];

  Shape out_shape = in_shape;
  out_shape[axis] = length;
  std::vector<double> out(shape_numel(out_shape));
  const auto& in = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = &in[(o * axis_total + start) * inner];
    std::copy(src, src + length * inner, &out[o * length * inner]);
  }

  Tensor a_copy = a;
  auto bw = [a_copy, outer, inner, axis_total, start,
             length](const std::vector<double>& g) mutable {
    auto* ga = a_copy.mutable_grad();
    if (!ga) return;
    for (std::size_t o = 0; o < outer; ++o) {
      double* dst = &(*ga)[(o * axis_total + start) * inner];
      const double* src = &g[o * length * inner];
      for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
    }
  };
  return custom_op("slice", std::move(out_shape), std::move(out), {a},
                   std::move(bw));
}

Tensor broadcast_to(const Tensor& a, Shape shape) {
  Shape merged = broadcast_shape(a.shape(), shape);
  check(merged == shape, "broadcast_to: cannot expand " +
                             shape_str(a.shape()) + " to " + shape_str(shape));
  auto map = broadcast_index_map(a.shape(), shape);
  const auto& in = a.data();
  std::vector<double> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = in[map[i]];

  Tensor a_copy = a;
  auto bw = [a_copy, map](const std::vector<double>& g) mutable {
    auto* ga = a_copy.mutable_grad();
    if (!ga) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[map[i]] += g[i];
  };
  return custom_op("broadcast_to", std::move(shape), std::move(out), {a},
                   std::move(bw));
}

// ---------------------------------------------------------------------------
// Softmax

namespace {

struct LaneLayout {
  std::size_t lanes;      // number of independent softmax lanes
  std::size_t lane_len;   // elements per lane
  std::size_t stride;     // element stride within a lane
  std::size_t outer;      // lanes in the leading block
  std::size_t inner;      // lanes in the trailing block
};

LaneLayout lane_layout(const Shape& shape, std::size_t axis) {
  LaneLayout layout{};
  layout.lane_len = shape[axis];
  layout.inner = 1;
  for (std::size_t d = axis + 1; d < shape.size(); ++d) layout.inner *= shape[d];
  layout.outer = 1;
  for (std::size_t d = 0; d < axis; ++d) layout.outer *= shape[d];
  layout.lanes = layout.outer * layout.inner;
  layout.stride = layout.inner;
  return layout;
}

template <typename Fn>
void for_each_lane(const LaneLayout& l, Fn&& fn) {
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      fn(o * l.lane_len * l.inner + i);
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& a, std::size_t axis) {
  check(axis < a.rank(), "softmax: axis out of range");
  for (double v : a.data()) {
    check(std::isfinite(v), "softmax: non-finite input");
  }
  LaneLayout l = lane_layout(a.shape(), axis);
  const auto& in = a.data();
  std::vector<double> out(in.size());
  for_each_lane(l, [&](std::size_t base) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < l.lane_len; ++j) {
      m = std::max(m, in[base + j * l.stride]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < l.lane_len; ++j) {
      double e = std::exp(in[base + j * l.stride] - m);
      out[base + j * l.stride] = e;
      z += e;
    }
    for (std::size_t j = 0; j < l.lane_len; ++j) out[base + j * l.stride] /= z;
  });

  Tensor a_copy = a;
  Shape shape = a.shape();
  std::vector<double> out_copy = out;
  auto bw = [a_copy, l, out_copy](const std::vector<double>& g) mutable {
    auto* ga = a_copy.mutable_grad();
    if (!ga) return;
    for_each_lane(l, [&](std::size_t base) {
      double dot = 0.0;
      for (std::size_t j = 0; j < l.lane_len; ++j) {
        std::size_t idx = base + j * l.stride;
        dot += g[idx] * out_copy[idx];
      }
      for (std::size_t j = 0; j < l.lane_len; ++j) {
        std::size_t idx = base + j * l.stride;
        (*ga)[idx] += out_copy[idx] * (g[idx] - dot);
      }
    });
  };
  return custom_op("softmax", std::move(shape), std::move(out), {a},
                   std::move(bw));
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  check(axis < a.rank(), "log_softmax: axis out of range");
  for (double v : a.data()) {
    check(std::isfinite(v), "log_softmax: non-finite input");
  }
  LaneLayout l = lane_layout(a.shape(), axis);
  const auto& in = a.data();
  std::vector<double> out(in.size());
  for_each_lane(l, [&](std::size_t base) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < l.lane_len; ++j) {
      m = std::max(m, in[base + j * l.stride]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < l.lane_len; ++j) {
      z += std::exp(in[base + j * l.stride] - m);
    }
    double lse = m + std::log(z);
    for (std::size_t j = 0; j < l.lane_len; ++j) {
      out[base + j * l.stride] = in[base + j * l.stride] - lse;
    }
  });

  Tensor a_copy = a;
  Shape shape = a.shape();
  std::vector<double> out_copy = out;
  auto bw = [a_copy, l, out_copy](const std::vector<double>& g) mutable {
    auto* ga = a_copy.mutable_grad();
    if (!ga) return;
    for_each_lane(l, [&](std::size_t base) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < l.lane_len; ++j) {
        gsum += g[base + j * l.stride];
      }
      for (std::size_t j = 0; j < l.lane_len; ++j) {
        std::size_t idx = base + j * l.stride;
        (*ga)[idx] += g[idx] - std::exp(out_copy[idx]) * gsum;
      }
    });
  };
  return custom_op("log_softmax", std::move(shape), std::move(out), {a},
                   std::move(bw));
}

// ---------------------------------------------------------------------------
// Finite differences

double finite_difference_check(const std::function<Tensor()>& f,
                               const std::vector<Tensor>& params,
                               double epsilon) {
  check(epsilon > 0.0, "finite_difference_check: epsilon must be positive");

  double probe;
  {
    NoGradGuard guard;
    probe = f().value();
    double again = f().value();
    check(probe == again,
          "finite_difference_check: function is not deterministic");
  }

  std::vector<Tensor> leaves = params;
  for (Tensor& p : leaves) p.zero_grad();
  Tensor loss = f();
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (Tensor& p : leaves) analytic.push_back(p.grad());

  double worst = 0.0;
  NoGradGuard guard;
  for (std::size_t pi = 0; pi < leaves.size(); ++pi) {
    Tensor& p = leaves[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      double saved = p.data()[i];
      p.data()[i] = saved + epsilon;
      double up = f().value();
      p.data()[i] = saved - epsilon;
      double down = f().value();
      p.data()[i] = saved;
      double numeric = (up - down) / (2.0 * epsilon);
      double a = analytic[pi][i];
      double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace sgol
