#include "mrdib/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "mrdib/errors.hpp"

namespace mrdib::num {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool g_grad_enabled = true;

NodePtr make_node(std::size_t rows, std::size_t cols) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(rows * cols, 0.0);
  return n;
}

bool tracks(const NodePtr& n) { return n->requires_grad; }

// Attach graph bookkeeping to a freshly computed result. The closure is only
// stored when some input requires a gradient and recording is enabled.
Tensor finish(NodePtr out, const char* op, std::vector<NodePtr> parents,
              std::function<void(Node&)> fn) {
  out->op = op;
  bool any = false;
  for (const auto& p : parents) any = any || tracks(p);
  if (any && g_grad_enabled) {
    out->requires_grad = true;
    out->is_leaf = false;
    out->parents = std::move(parents);
    out->backward = std::move(fn);
  }
  return Tensor(std::move(out));
}

void ensure_grad(Node& n) {
  if (n.grad.size() != n.size()) n.grad.assign(n.size(), 0.0);
}

double dot_contiguous(const double* x, const double* y, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i] * y[i];
    s1 += x[i + 1] * y[i + 1];
    s2 += x[i + 2] * y[i + 2];
    s3 += x[i + 3] * y[i + 3];
  }
  for (; i < n; ++i) s0 += x[i] * y[i];
  return (s0 + s1) + (s2 + s3);
}

std::size_t broadcast_extent(std::size_t a, std::size_t b, const char* op) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ContractViolation(std::string(op) + ": incompatible extents " + std::to_string(a) +
                          " and " + std::to_string(b));
}

// Sum `g` (rows x cols) down to a (tr x tc) target, accumulating into dst.
void reduce_into(std::vector<double>& dst, std::size_t tr, std::size_t tc,
                 const std::vector<double>& g, std::size_t rows, std::size_t cols,
                 const std::vector<double>* factor = nullptr, std::size_t fr = 0,
                 std::size_t fc = 0) {
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t rr = tr == 1 ? 0 : r;
    const std::size_t frr = fr == 1 ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) {
      double v = g[r * cols + c];
      if (factor) v *= (*factor)[frr * fc + (fc == 1 ? 0 : c)];
      dst[rr * tc + (tc == 1 ? 0 : c)] += v;
    }
  }
}

template <typename F>
NodePtr broadcast_apply(const Node& a, const Node& b, const char* op, F f) {
  const std::size_t rows = broadcast_extent(a.rows, b.rows, op);
  const std::size_t cols = broadcast_extent(a.cols, b.cols, op);
  auto out = make_node(rows, cols);
  if (a.rows == b.rows && a.cols == b.cols) {
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = f(a.value[i], b.value[i]);
    return out;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = a.value.data() + (a.rows == 1 ? 0 : r) * a.cols;
    const double* br = b.value.data() + (b.rows == 1 ? 0 : r) * b.cols;
    double* o = out->value.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = f(ar[a.cols == 1 ? 0 : c], br[b.cols == 1 ? 0 : c]);
    }
  }
  return out;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  const NodePtr& a = x.node();
  auto out = make_node(a->rows, a->cols);
  for (std::size_t i = 0; i < a->value.size(); ++i) out->value[i] = fwd(a->value[i]);
  Node* ap = a.get();
  return finish(out, op, {a}, [ap, deriv](Node& self) {
    ensure_grad(*ap);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ap->grad[i] += self.grad[i] * deriv(ap->value[i], self.value[i]);
    }
  });
}

double softplus_value(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor() : node_(make_node(0, 0)) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill) : node_(make_node(rows, cols)) {
  std::fill(node_->value.begin(), node_->value.end(), fill);
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : node_(std::make_shared<Node>()) {
  require(values.size() == rows * cols, "Tensor: value count " + std::to_string(values.size()) +
                                            " does not match shape " + std::to_string(rows) + "x" +
                                            std::to_string(cols));
  node_->rows = rows;
  node_->cols = cols;
  node_->value = std::move(values);
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
  Tensor t(rows, cols, std::move(values));
  t.set_requires_grad(true);
  return t;
}

double Tensor::item() const {
  require(size() == 1, "Tensor::item on non-scalar " + describe_shape(*this));
  return node_->value[0];
}

void Tensor::set_requires_grad(bool on) {
  require(node_->is_leaf, "set_requires_grad on a non-leaf tensor");
  node_->requires_grad = on;
  if (on) {
    node_->grad.assign(size(), 0.0);
  } else {
    node_->grad.clear();
  }
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor(rows(), cols(), node_->value);
}

Tensor Tensor::clone_parameter() const {
  Tensor t = detach();
  t.set_requires_grad(requires_grad());
  return t;
}

std::string describe_shape(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- backward --------------------------------------------------------------

std::vector<Tensor> backward(const Tensor& root) {
  require(root.size() == 1, "backward: root must be scalar, got " + describe_shape(root));
  std::vector<Tensor> leaves;
  const NodePtr& r = root.node();
  if (!r->requires_grad) return leaves;

  // iterative post-order DFS
  std::vector<NodePtr> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(r, 0);
  seen.insert(r.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      NodePtr p = top.first->parents[top.second++];
      if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  for (const auto& n : order) {
    if (!n->is_leaf) n->grad.assign(n->size(), 0.0);
  }
  ensure_grad(*r);
  r->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    for (double g : n.grad) {
      if (!std::isfinite(g)) {
        throw NumericalError(std::string("non-finite gradient at node '") + n.op + "' (" +
                             std::to_string(n.rows) + "x" + std::to_string(n.cols) + ")");
      }
    }
    if (n.is_leaf) continue;
    for (double v : n.value) {
      if (!std::isfinite(v)) {
        throw NumericalError(std::string("non-finite value at node '") + n.op + "'");
      }
    }
    n.backward(n);
  }

  for (auto& n : order) {
    if (n->is_leaf) {
      leaves.emplace_back(n);
    } else {
      // interior gradients are scratch space
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
  return leaves;
}

// ---- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& x, const Tensor& y) {
  const NodePtr& a = x.node();
  const NodePtr& b = y.node();
  require(a->cols == b->rows,
          "matmul: inner extents differ (" + describe_shape(x) + " * " + describe_shape(y) + ")");
  const std::size_t m = a->rows, k = a->cols, n = b->cols;
  auto out = make_node(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* c = out->value.data() + i * n;
    const double* ar = a->value.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const double* br = b->value.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * br[j];
    }
  }
  Node* ap = a.get();
  Node* bp = b.get();
  return finish(out, "matmul", {a, b}, [ap, bp, m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (ap->requires_grad) {
      ensure_grad(*ap);
      for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g + i * n;
        double* da = ap->grad.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) da[p] += dot_contiguous(gi, bp->value.data() + p * n, n);
      }
    }
    if (bp->requires_grad) {
      ensure_grad(*bp);
      for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g + i * n;
        const double* ar = ap->value.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ar[p];
          if (av == 0.0) continue;
          double* db = bp->grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) db[j] += av * gi[j];
        }
      }
    }
  });
}

// ---- elementwise binary ------------------------------------------------------

Tensor add(const Tensor& x, const Tensor& y) {
  const NodePtr& a = x.node();
  const NodePtr& b = y.node();
  auto out = broadcast_apply(*a, *b, "add", [](double u, double v) { return u + v; });
  Node* ap = a.get();
  Node* bp = b.get();
  return finish(out, "add", {a, b}, [ap, bp](Node& self) {
    for (Node* t : {ap, bp}) {
      if (!t->requires_grad) continue;
      ensure_grad(*t);
      reduce_into(t->grad, t->rows, t->cols, self.grad, self.rows, self.cols);
    }
  });
}

Tensor sub(const Tensor& x, const Tensor& y) {
  const NodePtr& a = x.node();
  const NodePtr& b = y.node();
  auto out = broadcast_apply(*a, *b, "sub", [](double u, double v) { return u - v; });
  Node* ap = a.get();
  Node* bp = b.get();
  return finish(out, "sub", {a, b}, [ap, bp](Node& self) {
    if (ap->requires_grad) {
      ensure_grad(*ap);
      reduce_into(ap->grad, ap->rows, ap->cols, self.grad, self.rows, self.cols);
    }
    if (bp->requires_grad) {
      ensure_grad(*bp);
      std::vector<double> negated(self.grad.size());
      for (std::size_t i = 0; i < negated.size(); ++i) negated[i] = -self.grad[i];
      reduce_into(bp->grad, bp->rows, bp->cols, negated, self.rows, self.cols);
    }
  });
}

Tensor mul(const Tensor& x, const Tensor& y) {
  const NodePtr& a = x.node();
  const NodePtr& b = y.node();
  auto out = broadcast_apply(*a, *b, "mul", [](double u, double v) { return u * v; });
  Node* ap = a.get();
  Node* bp = b.get();
  return finish(out, "mul", {a, b}, [ap, bp](Node& self) {
    if (ap->requires_grad) {
      ensure_grad(*ap);
      reduce_into(ap->grad, ap->rows, ap->cols, self.grad, self.rows, self.cols, &bp->value,
                  bp->rows, bp->cols);
    }
    if (bp->requires_grad) {
      ensure_grad(*bp);
      reduce_into(bp->grad, bp->rows, bp->cols, self.grad, self.rows, self.cols, &ap->value,
                  ap->rows, ap->cols);
    }
  });
}

Tensor scale(const Tensor& x, double c) {
  return unary(
      x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(
      x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

// ---- elementwise unary -------------------------------------------------------

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor softplus(const Tensor& x) {
  return unary(x, "softplus", softplus_value, [](double v, double) { return sigmoid_value(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  require(lo <= hi, "clamp: lo > hi");
  return unary(
      x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const NodePtr& a = x.node();
  auto out = make_node(1, 1);
  double s = 0.0;
  for (double v : a->value) s += v;
  out->value[0] = s;
  Node* ap = a.get();
  return finish(out, "sum", {a}, [ap](Node& self) {
    ensure_grad(*ap);
    const double g = self.grad[0];
    for (double& d : ap->grad) d += g;
  });
}

Tensor mean(const Tensor& x) {
  require(x.size() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor row_sum(const Tensor& x) {
  const NodePtr& a = x.node();
  const std::size_t rows = a->rows, cols = a->cols;
  auto out = make_node(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += a->value[r * cols + c];
    out->value[r] = s;
  }
  Node* ap = a.get();
  return finish(out, "row_sum", {a}, [ap, rows, cols](Node& self) {
    ensure_grad(*ap);
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = self.grad[r];
      for (std::size_t c = 0; c < cols; ++c) ap->grad[r * cols + c] += g;
    }
  });
}

namespace {
double lse(const double* v, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}
}  // namespace

Tensor logsumexp(const Tensor& x) {
  require(x.size() > 0, "logsumexp: empty tensor");
  const NodePtr& a = x.node();
  auto out = make_node(1, 1);
  out->value[0] = lse(a->value.data(), a->value.size());
  Node* ap = a.get();
  return finish(out, "logsumexp", {a}, [ap](Node& self) {
    ensure_grad(*ap);
    const double g = self.grad[0];
    const double l = self.value[0];
    for (std::size_t i = 0; i < ap->value.size(); ++i) ap->grad[i] += g * std::exp(ap->value[i] - l);
  });
}

Tensor row_logsumexp(const Tensor& x) {
  require(x.cols() > 0, "row_logsumexp: no columns");
  const NodePtr& a = x.node();
  const std::size_t rows = a->rows, cols = a->cols;
  auto out = make_node(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) out->value[r] = lse(a->value.data() + r * cols, cols);
  Node* ap = a.get();
  return finish(out, "row_logsumexp", {a}, [ap, rows, cols](Node& self) {
    ensure_grad(*ap);
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = self.grad[r];
      const double l = self.value[r];
      for (std::size_t c = 0; c < cols; ++c) {
        ap->grad[r * cols + c] += g * std::exp(ap->value[r * cols + c] - l);
      }
    }
  });
}

// ---- structural ---------------------------------------------------------------

Tensor concat_cols(const Tensor& x, const Tensor& y) {
  const NodePtr& a = x.node();
  const NodePtr& b = y.node();
  require(a->rows == b->rows, "concat_cols: row counts differ (" + describe_shape(x) + ", " +
                                  describe_shape(y) + ")");
  const std::size_t rows = a->rows, ca = a->cols, cb = b->cols;
  auto out = make_node(rows, ca + cb);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a->value.data() + r * ca, ca, out->value.data() + r * (ca + cb));
    std::copy_n(b->value.data() + r * cb, cb, out->value.data() + r * (ca + cb) + ca);
  }
  Node* ap = a.get();
  Node* bp = b.get();
  return finish(out, "concat_cols", {a, b}, [ap, bp, rows, ca, cb](Node& self) {
    const std::size_t w = ca + cb;
    if (ap->requires_grad) {
      ensure_grad(*ap);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) ap->grad[r * ca + c] += self.grad[r * w + c];
    }
    if (bp->requires_grad) {
      ensure_grad(*bp);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) bp->grad[r * cb + c] += self.grad[r * w + ca + c];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  const NodePtr& a = x.node();
  require(begin <= end && end <= a->cols, "slice_cols: range out of bounds");
  const std::size_t rows = a->rows, cols = a->cols, w = end - begin;
  auto out = make_node(rows, w);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a->value.data() + r * cols + begin, w, out->value.data() + r * w);
  }
  Node* ap = a.get();
  return finish(out, "slice_cols", {a}, [ap, rows, cols, begin, w](Node& self) {
    ensure_grad(*ap);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) ap->grad[r * cols + begin + c] += self.grad[r * w + c];
  });
}

Tensor index_select_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const NodePtr& a = x.node();
  const std::size_t cols = a->cols;
  for (std::size_t r : rows) {
    require(r < a->rows, "index_select_rows: row " + std::to_string(r) + " out of range " +
                             std::to_string(a->rows));
  }
  auto out = make_node(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(a->value.data() + rows[i] * cols, cols, out->value.data() + i * cols);
  }
  Node* ap = a.get();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return finish(out, "index_select_rows", {a}, [ap, cols, idx = std::move(idx)](Node& self) {
    ensure_grad(*ap);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = ap->grad.data() + idx[i] * cols;
      const double* src = self.grad.data() + i * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

Tensor reshape(const Tensor& x, std::size_t rows, std::size_t cols) {
  const NodePtr& a = x.node();
  require(rows * cols == a->size(), "reshape: element count changes");
  auto out = make_node(rows, cols);
  out->value = a->value;
  Node* ap = a.get();
  return finish(out, "reshape", {a}, [ap](Node& self) {
    ensure_grad(*ap);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i];
  });
}

}  // namespace mrdib::num
