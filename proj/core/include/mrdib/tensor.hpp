#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mrdib::num {

namespace detail {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // non-empty iff requires_grad
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::size_t size() const { return rows * cols; }
};

}  // namespace detail

/// Dense row-major matrix of doubles with optional gradient tracking.
///
/// Tensor is a shared handle: copies alias the same storage and graph node.
/// Every tensor is two-dimensional; scalars are 1x1 and vectors are 1xn or
/// nx1. Operations on tensors that require gradients record a backward
/// closure; `backward()` walks that graph in reverse topological order.
class Tensor {
 public:
  Tensor();
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor row(std::vector<double> values);
  /// Leaf tensor whose gradient is accumulated by backward().
  static Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }
  std::vector<std::size_t> shape() const { return {rows(), cols()}; }

  std::span<double> values() { return node_->value; }
  std::span<const double> values() const { return node_->value; }
  std::span<double> grad() { return node_->grad; }
  std::span<const double> grad() const { return node_->grad; }

  double& at(std::size_t r, std::size_t c) { return node_->value[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op() const { return node_->op; }

  /// Turns a leaf into a parameter (allocates a zero gradient).
  void set_requires_grad(bool on);
  void zero_grad();

  /// Copy of the values with no graph attached.
  Tensor detach() const;
  Tensor clone_parameter() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // internal
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode pass from a scalar root. Leaf parameters accumulate into
/// their existing gradient (callers zero explicitly); interior gradients are
/// reset on every call. Returns the leaf parameters that were reached.
std::vector<Tensor> backward(const Tensor& root);

/// While alive on this thread, operations do not record backward closures.
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

// ---- operations -----------------------------------------------------------
// Binary elementwise operations broadcast along any extent equal to 1.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
/// Gradient passes only where lo <= a <= hi.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum over columns: rows x 1.
Tensor row_sum(const Tensor& a);
Tensor logsumexp(const Tensor& a);
/// Per-row logsumexp: rows x 1.
Tensor row_logsumexp(const Tensor& a);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor index_select_rows(const Tensor& a, std::span<const std::size_t> rows);
Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

std::string describe_shape(const Tensor& t);

}  // namespace mrdib::num
