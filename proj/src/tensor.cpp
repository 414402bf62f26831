#include "adavid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "adavid/error.hpp"
#include "adavid/flop_counter.hpp"

namespace adavid {

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return node;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidArgument(message);
}

void require_2d(const Tensor& t, const char* op) {
  require(t.defined() && t.dim() == 2, std::string(op) + ": expected a 2-D tensor, got " +
                                           (t.defined() ? shape_str(t.shape()) : "undefined"));
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Wires `out` into the tape when any input needs gradients.
template <typename Fn>
Tensor finish(std::shared_ptr<Node> out, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
  if (any_requires_grad(inputs)) {
    out->requires_grad = true;
    for (const Tensor* t : inputs) {
      if (t->defined()) out->parents.push_back(t->node());
    }
    out->backward = std::forward<Fn>(fn);
  }
  return Tensor::wrap(std::move(out));
}

void count_matmul(std::uint64_t m, std::uint64_t k, std::uint64_t p) {
  if (FlopCounter* c = active_flop_counter()) c->add_matmul(checked_mul(checked_mul(2 * m, k), p));
}

void count_elementwise(std::uint64_t n) {
  if (FlopCounter* c = active_flop_counter()) c->add_elementwise(n);
}

// c[m x p] += a[m x k] . b[k x p], accumulating over k in ascending order.
void gemm_acc(const double* __restrict a, const double* __restrict b, double* __restrict c,
              std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * p;
    const double* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

std::vector<double> transposed(const double* a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  return t;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, bool requires_grad) {
  for (std::size_t e : shape) require(e > 0, "tensor extents must be positive: " + shape_str(shape));
  const std::size_t n = shape_numel(shape);
  node_ = new_node(std::move(shape), std::vector<double>(n, 0.0));
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t e : shape) require(e > 0, "tensor extents must be positive: " + shape_str(shape));
  require(values.size() == shape_numel(shape),
          "data length " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  node_ = new_node(std::move(shape), std::move(values));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  require(rows.size() > 0, "matrix literal needs at least one row");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  for (const auto& row : rows) {
    require(row.size() == cols, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(data));
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const {
  require(defined(), "use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::size_t Tensor::rows() const {
  const Shape& s = shape();
  if (s.size() == 2) return s[0];
  return 1;
}

std::size_t Tensor::cols() const {
  const Shape& s = shape();
  if (s.empty()) return 1;
  return s.back();
}

std::span<const double> Tensor::data() const {
  require(defined(), "use of an undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  require(defined(), "use of an undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  require(numel() == 1, "item() needs a single-element tensor, got " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  require(defined(), "use of an undefined tensor");
  node_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->data); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
  require(loss.defined() && loss.numel() == 1,
          "backward needs a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives parents before children.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward();
  }
  // Drop the tape: interior nodes forget their history and gradient.
  for (Node* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->parents.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

// ---- matmul / linear ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  require(b.rows() == k, "matmul: inner extents differ: " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
  std::vector<double> out(m * p, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, p);
  count_matmul(m, k, p);
  auto node = new_node({m, p}, std::move(out));
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  Node* po = node.get();
  return finish(node, {&a, &b}, [pa, pb, po, m, k, p] {
    const double* g = po->grad.data();
    if (pa->requires_grad) {
      // dA = G . B^T
      auto bt = transposed(pb->data.data(), k, p);
      gemm_acc(g, bt.data(), pa->ensure_grad().data(), m, p, k);
    }
    if (pb->requires_grad) {
      // dB = A^T . G
      auto at = transposed(pa->data.data(), m, k);
      gemm_acc(at.data(), g, pb->ensure_grad().data(), k, m, p);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_2d(x, "linear");
  require_2d(weight, "linear");
  const std::size_t m = x.rows(), in = x.cols(), out_dim = weight.rows();
  require(weight.cols() == in, "linear: input width " + std::to_string(in) + " does not match weight " +
                                   shape_str(weight.shape()));
  if (bias.defined()) {
    require(bias.numel() == out_dim, "linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                                         shape_str(weight.shape()));
  }
  const auto wt = transposed(weight.data().data(), out_dim, in);
  std::vector<double> out(m * out_dim, 0.0);
  gemm_acc(x.data().data(), wt.data(), out.data(), m, in, out_dim);
  count_matmul(m, in, out_dim);
  if (bias.defined()) {
    const double* b = bias.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t o = 0; o < out_dim; ++o) out[i * out_dim + o] += b[o];
    count_elementwise(m * out_dim);
  }
  auto node = new_node({m, out_dim}, std::move(out));
  Node* px = x.node().get();
  Node* pw = weight.node().get();
  Node* pb = bias.defined() ? bias.node().get() : nullptr;
  Node* po = node.get();
  return finish(node, {&x, &weight, &bias}, [px, pw, pb, po, m, in, out_dim] {
    const double* g = po->grad.data();
    if (px->requires_grad) gemm_acc(g, pw->data.data(), px->ensure_grad().data(), m, out_dim, in);
    if (pw->requires_grad) {
      auto gt = transposed(g, m, out_dim);
      gemm_acc(gt.data(), px->data.data(), pw->ensure_grad().data(), out_dim, m, in);
    }
    if (pb && pb->requires_grad) {
      auto& gb = pb->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[i * out_dim + o];
    }
  });
}

// ---- elementwise -------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.defined() && b.defined() && a.shape() == b.shape(),
          std::string(op) + ": shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  count_elementwise(out.size());
  auto node = new_node(a.shape(), std::move(out));
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  Node* po = node.get();
  return finish(node, {&a, &b}, [pa, pb, po] {
    for (Node* p : {pa, pb}) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += po->grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  auto node = new_node(a.shape(), std::move(out));
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  Node* po = node.get();
  return finish(node, {&a, &b}, [pa, pb, po] {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += po->grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= po->grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  auto node = new_node(a.shape(), std::move(out));
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  Node* po = node.get();
  return finish(node, {&a, &b}, [pa, pb, po] {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += po->grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += po->grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  auto node = new_node(a.shape(), std::move(out));
  Node* pa = a.node().get();
  Node* po = node.get();
  return finish(node, {&a}, [pa, po, factor] {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += po->grad[i] * factor;
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto node = new_node(Shape{}, {s});
  Node* pa = a.node().get();
  Node* po = node.get();
  return finish(node, {&a}, [pa, po] {
    auto& g = pa->ensure_grad();
    for (double& v : g) v += po->grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

// ---- layout ------------------------------------------------------------------

Tensor slice(const Tensor& a, std::size_t rows, std::size_t cols) {
  if (a.dim() == 1) return slice_prefix(a, rows);
  require_2d(a, "slice");
  const std::size_t full_cols = a.cols();
  require(rows >= 1 && cols >= 1 && rows <= a.rows() && cols <= full_cols,
          "slice: block " + std::to_string(rows) + "x" + std::to_string(cols) + " exceeds " + shape_str(a.shape()));
  std::vector<double> out(rows * cols);
  const auto src = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * full_cols), cols, out.begin() + static_cast<std::ptrdiff_t>(r * cols));
  auto node = new_node({rows, cols}, std::move(out));
  Node* pa = a.node().get();
  Node* po = node.get();
  return finish(node, {&a}, [pa, po, rows, cols, full_cols] {
    auto& g = pa->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g[r * full_cols + c] += po->grad[r * cols + c];
  });
}

Tensor slice_prefix(const Tensor& a, std::size_t n) {
  require(a.defined() && a.dim() == 1, "slice_prefix: expected a 1-D tensor");
  require(n >= 1 && n <= a.numel(), "slice_prefix: length " + std::to_string(n) + " exceeds " + shape_str(a.shape()));
  std::vector<double> out(a.data().begin(), a.data().begin() + static_cast<std::ptrdiff_t>(n));
  auto node = new_node({n}, std::move(out));
  Node* pa = a.node().get();
  Node* po = node.get();
  return finish(node, {&a}, [pa, po, n] {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) g[i] += po->grad[i];
  });
}

Tensor resize_cols(const Tensor& a, std::size_t cols) {
  require_2d(a, "resize_cols");
  require(cols >= 1, "resize_cols: width must be positive");
  const std::size_t rows = a.rows(), from = a.cols();
  if (cols == from) return a;
  const std::size_t keep = std::min(cols, from);
  std::vector<double> out(rows * cols, 0.0);
  const auto src = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < keep; ++c) out[r * cols + c] = src[r * from + c];
  auto node = new_node({rows, cols}, std::move(out));
  Node* pa = a.node().get();
  Node* po = node.get();
  return finish(node, {&a}, [pa, po, rows, cols, from, keep] {
    auto& g = pa->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < keep; ++c) g[r * from + c] += po->grad[r * cols + c];
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
  require_2d(a, "gather_rows");
  require(!indices.empty(), "gather_rows: no indices");
  const std::size_t cols = a.cols(), n_rows = a.rows();
  std::vector<double> out(indices.size() * cols);
  const auto src = a.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < n_rows, "gather_rows: index " + std::to_string(indices[i]) + " out of range " +
                                     shape_str(a.shape()));
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  auto node = new_node({indices.size(), cols}, std::move(out));
  Node* pa = a.node().get();
  Node* po = node.get();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return finish(node, {&a}, [pa, po, idx = std::move(idx), cols] {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) g[idx[i] * cols + c] += po->grad[i * cols + c];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<double> out;
  bool needs_grad = false;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_rows");
    require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
    needs_grad = needs_grad || p.requires_grad();
  }
  auto node = new_node({rows, cols}, std::move(out));
  if (!needs_grad || !g_grad_enabled) return Tensor::wrap(node);
  node->requires_grad = true;
  std::vector<Node*> srcs;
  for (const Tensor& p : parts) {
    node->parents.push_back(p.node());
    srcs.push_back(p.node().get());
  }
  Node* po = node.get();
  node->backward = [srcs = std::move(srcs), po] {
    std::size_t offset = 0;
    for (Node* s : srcs) {
      if (s->requires_grad) {
        auto& g = s->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += po->grad[offset + i];
      }
      offset += s->data.size();
    }
  };
  return Tensor::wrap(node);
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  auto node = new_node({c, r}, transposed(a.data().data(), r, c));
  Node* pa = a.node().get();
  Node* po = node.get();
  return finish(node, {&a}, [pa, po, r, c] {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += po->grad[j * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(), "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto node = new_node(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  Node* pa = a.node().get();
  Node* po = node.get();
  return finish(node, {&a}, [pa, po] {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += po->grad[i];
  });
}

// ---- nonlinearities ----------------------------------------------------------

Tensor softmax_lastdim(const Tensor& x) {
  require(x.defined() && x.cols() >= 1, "softmax: empty last axis");
  const std::size_t cols = x.cols(), rows = x.numel() / cols;
  const auto src = x.data();
  for (double v : src) require(std::isfinite(v), "softmax: non-finite input");
  std::vector<double> out(src.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = src.data() + r * cols;
    double* o = out.data() + r * cols;
    double mx = in[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  count_elementwise(3 * src.size());
  auto node = new_node(x.shape(), std::move(out));
  Node* px = x.node().get();
  Node* po = node.get();
  return finish(node, {&x}, [px, po, rows, cols] {
    auto& g = px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = po->data.data() + r * cols;
      const double* gy = po->grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += y[c] * gy[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
    }
  });
}

Tensor log_softmax_lastdim(const Tensor& x) {
  require(x.defined() && x.cols() >= 1, "log_softmax: empty last axis");
  const std::size_t cols = x.cols(), rows = x.numel() / cols;
  const auto src = x.data();
  for (double v : src) require(std::isfinite(v), "log_softmax: non-finite input");
  std::vector<double> out(src.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = src.data() + r * cols;
    double mx = in[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(in[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[c] - lse;
  }
  auto node = new_node(x.shape(), std::move(out));
  Node* px = x.node().get();
  Node* po = node.get();
  return finish(node, {&x}, [px, po, rows, cols] {
    auto& g = px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = po->data.data() + r * cols;
      const double* gy = po->grad.data() + r * cols;
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += gy[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += gy[c] - std::exp(y[c]) * total;
    }
  });
}

Tensor gelu(const Tensor& x) {
  const auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = 0.5 * src[i] * (1.0 + std::erf(src[i] * std::numbers::sqrt2 * 0.5));
  count_elementwise(src.size());
  auto node = new_node(x.shape(), std::move(out));
  Node* px = x.node().get();
  Node* po = node.get();
  return finish(node, {&x}, [px, po] {
    auto& g = px->ensure_grad();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = px->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += po->grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_2d(x, "layer_norm");
  const std::size_t rows = x.rows(), d = x.cols();
  require(d >= 1, "layer_norm: zero width");
  require(gamma.numel() == d && beta.numel() == d, "layer_norm: affine parameters of length " +
                                                       std::to_string(gamma.numel()) + " for width " + std::to_string(d));
  const auto src = x.data();
  const auto gm = gamma.data(), bt = beta.data();
  std::vector<double> out(src.size()), xhat(src.size()), rstd(rows);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = src.data() + r * d;
    double total = 0.0;
    for (std::size_t c = 0; c < d; ++c) total += in[c];
    const double mu = total * inv_d;
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) sq += (in[c] - mu) * (in[c] - mu);
    const double rs = 1.0 / std::sqrt(sq * inv_d + eps);
    rstd[r] = rs;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (in[c] - mu) * rs;
      xhat[r * d + c] = h;
      out[r * d + c] = h * gm[c] + bt[c];
    }
  }
  count_elementwise(7 * src.size());
  auto node = new_node(x.shape(), std::move(out));
  Node* px = x.node().get();
  Node* pg = gamma.node().get();
  Node* pb = beta.node().get();
  Node* po = node.get();
  return finish(node, {&x, &gamma, &beta},
                [px, pg, pb, po, rows, d, inv_d, xhat = std::move(xhat), rstd = std::move(rstd)] {
                  const double* gy = po->grad.data();
                  if (pg->requires_grad) {
                    auto& g = pg->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < d; ++c) g[c] += gy[r * d + c] * xhat[r * d + c];
                  }
                  if (pb->requires_grad) {
                    auto& g = pb->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < d; ++c) g[c] += gy[r * d + c];
                  }
                  if (px->requires_grad) {
                    auto& g = px->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::size_t c = 0; c < d; ++c) {
                        const double dh = gy[r * d + c] * pg->data[c];
                        m1 += dh;
                        m2 += dh * xhat[r * d + c];
                      }
                      m1 *= inv_d;
                      m2 *= inv_d;
                      for (std::size_t c = 0; c < d; ++c) {
                        const double dh = gy[r * d + c] * pg->data[c];
                        g[r * d + c] += rstd[r] * (dh - m1 - xhat[r * d + c] * m2);
                      }
                    }
                  }
                });
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_2d(x, "l2_normalize_rows");
  const std::size_t rows = x.rows(), d = x.cols();
  const auto src = x.data();
  std::vector<double> out(src.size()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) sq += src[r * d + c] * src[r * d + c];
    const double n = std::sqrt(sq);
    if (!(n > 1e-12)) throw NumericError("degenerate norm: cannot normalize a (near-)zero vector");
    norms[r] = n;
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = src[r * d + c] / n;
  }
  auto node = new_node(x.shape(), std::move(out));
  Node* px = x.node().get();
  Node* po = node.get();
  return finish(node, {&x}, [px, po, rows, d, norms = std::move(norms)] {
    auto& g = px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = po->data.data() + r * d;
      const double* gy = po->grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += y[c] * gy[c];
      for (std::size_t c = 0; c < d; ++c) g[r * d + c] += (gy[c] - y[c] * dot) / norms[r];
    }
  });
}

Tensor diag_mean(const Tensor& a) {
  require_2d(a, "diag_mean");
  const std::size_t n = a.rows();
  require(a.cols() == n, "diag_mean: matrix is not square: " + shape_str(a.shape()));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += a.at(i, i);
  auto node = new_node(Shape{}, {total / static_cast<double>(n)});
  Node* pa = a.node().get();
  Node* po = node.get();
  return finish(node, {&a}, [pa, po, n] {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) g[i * n + i] += po->grad[0] / static_cast<double>(n);
  });
}

Tensor mean_rows(const Tensor& a) {
  require_2d(a, "mean_rows");
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(cols, 0.0);
  const auto src = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += src[r * cols + c];
  for (double& v : out) v /= static_cast<double>(rows);
  auto node = new_node({1, cols}, std::move(out));
  Node* pa = a.node().get();
  Node* po = node.get();
  return finish(node, {&a}, [pa, po, rows, cols] {
    auto& g = pa->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += po->grad[c] / static_cast<double>(rows);
  });
}

// ---- attention ---------------------------------------------------------------

namespace {

// Scores and softmax for one (group, head); probs is [nq x nk].
void attention_probs(const double* q, const double* k, std::size_t d, const AttentionGroup& grp,
                     std::size_t col0, std::size_t head_dim, double scl, double* probs) {
  const std::size_t nq = grp.queries.size(), nk = grp.keys.size();
  for (std::size_t a = 0; a < nq; ++a) {
    const double* qa = q + grp.queries[a] * d + col0;
    double* row = probs + a * nk;
    for (std::size_t b = 0; b < nk; ++b) {
      const double* kb = k + grp.keys[b] * d + col0;
      double s = 0.0;
      for (std::size_t c = 0; c < head_dim; ++c) s += qa[c] * kb[c];
      row[b] = s * scl;
    }
    double mx = row[0];
    for (std::size_t b = 1; b < nk; ++b) mx = std::max(mx, row[b]);
    double total = 0.0;
    for (std::size_t b = 0; b < nk; ++b) {
      row[b] = std::exp(row[b] - mx);
      total += row[b];
    }
    for (std::size_t b = 0; b < nk; ++b) row[b] /= total;
  }
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::shared_ptr<const std::vector<AttentionGroup>> groups, std::size_t head_dim) {
  require_2d(q, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  require(groups != nullptr, "attention: no groups");
  const std::size_t rows = q.rows(), d = q.cols();
  require(head_dim >= 1 && d % head_dim == 0,
          "attention: width " + std::to_string(d) + " is not a multiple of head_dim " + std::to_string(head_dim));
  const std::size_t heads = d / head_dim;
  const double scl = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<char> seen(rows, 0);
  std::vector<std::size_t> prob_offset(groups->size());
  std::size_t prob_total = 0;
  for (std::size_t gi = 0; gi < groups->size(); ++gi) {
    const auto& grp = (*groups)[gi];
    require(!grp.keys.empty() && !grp.queries.empty(), "attention: empty group");
    for (std::size_t r : grp.queries) {
      require(r < rows, "attention: query row out of range");
      require(!seen[r], "attention: query row " + std::to_string(r) + " appears in two groups");
      seen[r] = 1;
    }
    for (std::size_t r : grp.keys) require(r < rows, "attention: key row out of range");
    prob_offset[gi] = prob_total;
    prob_total += heads * grp.queries.size() * grp.keys.size();
  }

  std::vector<double> probs(prob_total);
  std::vector<double> out(rows * d, 0.0);
  const double* qd = q.data().data();
  const double* kd = k.data().data();
  const double* vd = v.data().data();
  std::uint64_t mac = 0;
  for (std::size_t gi = 0; gi < groups->size(); ++gi) {
    const auto& grp = (*groups)[gi];
    const std::size_t nq = grp.queries.size(), nk = grp.keys.size();
    mac += static_cast<std::uint64_t>(nq) * nk * d;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t col0 = h * head_dim;
      double* p = probs.data() + prob_offset[gi] + h * nq * nk;
      attention_probs(qd, kd, d, grp, col0, head_dim, scl, p);
      for (std::size_t a = 0; a < nq; ++a) {
        double* o = out.data() + grp.queries[a] * d + col0;
        for (std::size_t b = 0; b < nk; ++b) {
          const double w = p[a * nk + b];
          const double* vb = vd + grp.keys[b] * d + col0;
          for (std::size_t c = 0; c < head_dim; ++c) o[c] += w * vb[c];
        }
      }
    }
  }
  if (active_flop_counter() != nullptr) {
    FlopCounter* c = active_flop_counter();
    {
      FlopTag tag("scores");
      c->add_matmul(checked_mul(2, mac));
    }
    {
      FlopTag tag("weighted");
      c->add_matmul(checked_mul(2, mac));
    }
    std::uint64_t softmax_elems = 0;
    for (const auto& grp : *groups) softmax_elems += grp.queries.size() * grp.keys.size() * heads;
    c->add_elementwise(checked_mul(3, softmax_elems));
  }

  auto node = new_node({rows, d}, std::move(out));
  Node* pq = q.node().get();
  Node* pk = k.node().get();
  Node* pv = v.node().get();
  Node* po = node.get();
  return finish(node, {&q, &k, &v},
                [pq, pk, pv, po, groups, d, heads, head_dim, scl, probs = std::move(probs),
                 prob_offset = std::move(prob_offset)] {
                  const double* gout = po->grad.data();
                  std::vector<double>* gq = pq->requires_grad ? &pq->ensure_grad() : nullptr;
                  std::vector<double>* gk = pk->requires_grad ? &pk->ensure_grad() : nullptr;
                  std::vector<double>* gv = pv->requires_grad ? &pv->ensure_grad() : nullptr;
                  std::vector<double> ds;
                  for (std::size_t gi = 0; gi < groups->size(); ++gi) {
                    const auto& grp = (*groups)[gi];
                    const std::size_t nq = grp.queries.size(), nk = grp.keys.size();
                    ds.assign(nq * nk, 0.0);
                    for (std::size_t h = 0; h < heads; ++h) {
                      const std::size_t col0 = h * head_dim;
                      const double* p = probs.data() + prob_offset[gi] + h * nq * nk;
                      for (std::size_t a = 0; a < nq; ++a) {
                        const double* go = gout + grp.queries[a] * d + col0;
                        double rowdot = 0.0;
                        for (std::size_t b = 0; b < nk; ++b) {
                          const double* vb = pv->data.data() + grp.keys[b] * d + col0;
                          double dp = 0.0;
                          for (std::size_t c = 0; c < head_dim; ++c) dp += go[c] * vb[c];
                          ds[a * nk + b] = dp;
                          rowdot += dp * p[a * nk + b];
                          if (gv) {
                            double* gvb = gv->data() + grp.keys[b] * d + col0;
                            const double w = p[a * nk + b];
                            for (std::size_t c = 0; c < head_dim; ++c) gvb[c] += w * go[c];
                          }
                        }
                        for (std::size_t b = 0; b < nk; ++b) ds[a * nk + b] = p[a * nk + b] * (ds[a * nk + b] - rowdot) * scl;
                      }
                      for (std::size_t a = 0; a < nq; ++a) {
                        const double* qa = pq->data.data() + grp.queries[a] * d + col0;
                        double* gqa = gq ? gq->data() + grp.queries[a] * d + col0 : nullptr;
                        for (std::size_t b = 0; b < nk; ++b) {
                          const double s = ds[a * nk + b];
                          const double* kb = pk->data.data() + grp.keys[b] * d + col0;
                          if (gqa)
                            for (std::size_t c = 0; c < head_dim; ++c) gqa[c] += s * kb[c];
                          if (gk) {
                            double* gkb = gk->data() + grp.keys[b] * d + col0;
                            for (std::size_t c = 0; c < head_dim; ++c) gkb[c] += s * qa[c];
                          }
                        }
                      }
                    }
                  }
                });
}

std::vector<double> attention_probabilities(const Tensor& q, const Tensor& k, const AttentionGroup& group,
                                            std::size_t head, std::size_t head_dim) {
  require_2d(q, "attention_probabilities");
  const std::size_t d = q.cols();
  require((head + 1) * head_dim <= d, "attention_probabilities: head out of range");
  std::vector<double> probs(group.queries.size() * group.keys.size());
  attention_probs(q.data().data(), k.data().data(), d, group, head * head_dim, head_dim,
                  1.0 / std::sqrt(static_cast<double>(head_dim)), probs.data());
  return probs;
}

// ---- grad check ----------------------------------------------------------------

GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double step,
                           std::size_t max_entries_per_param) {
  require(step > 0.0, "grad_check: step must be positive");
  {
    NoGradGuard guard;
    const double first = f().item();
    const double second = f().item();
    if (std::memcmp(&first, &second, sizeof(double)) != 0) {
      throw NumericError("grad_check: function is not deterministic across evaluations");
    }
  }
  for (Tensor& p : params) p.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (Tensor& p : params) {
    auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.numel(), 0.0);
  }

  GradCheckResult result;
  NoGradGuard guard;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    const std::size_t n = values.size();
    std::size_t stride = 1;
    if (max_entries_per_param != 0 && n > max_entries_per_param) stride = (n + max_entries_per_param - 1) / max_entries_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = f().item();
      values[i] = saved - step;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
      ++result.entries_checked;
    }
  }
  return result;
}

}  // namespace adavid
