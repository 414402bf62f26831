#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace adavid {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

// Dense row-major float64 array. Copies share storage (handle semantics);
// results of differentiable ops record their parents on a dynamic tape that
// backward() walks once and then releases.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  // 2-D helpers; a 1-D tensor counts as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Writable access for leaves (optimizer updates, finite differences).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  // Gradient accumulator; empty span when nothing has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  // Fresh leaf holding a copy of the values, no history.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables tape recording on the current thread for its lifetime.
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

// Reverse pass from a scalar. Gradients accumulate into every participating
// tensor with requires_grad; intermediate history is dropped afterwards.
void backward(const Tensor& loss);

// ---- differentiable operations -------------------------------------------

// [M x K] . [K x P]; registers 2*M*K*P matmul FLOPs.
Tensor matmul(const Tensor& a, const Tensor& b);
// x . W^T + b for W stored [out x in]; b may be undefined. Registers 2*M*in*out.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Top-left block of a 2-D tensor, or prefix of a 1-D tensor (cols ignored).
Tensor slice(const Tensor& a, std::size_t rows, std::size_t cols);
Tensor slice_prefix(const Tensor& a, std::size_t n);
// Zero-pads or truncates the last axis of a 2-D tensor to `cols`.
Tensor resize_cols(const Tensor& a, std::size_t cols);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor softmax_lastdim(const Tensor& x);
Tensor log_softmax_lastdim(const Tensor& x);
// Exact 0.5 * x * (1 + erf(x / sqrt(2))).
Tensor gelu(const Tensor& x);
// Row-wise normalization over the last axis with affine gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor l2_normalize_rows(const Tensor& x);
// Mean of the diagonal of a square matrix.
Tensor diag_mean(const Tensor& a);
// [R x C] -> [1 x C] column means.
Tensor mean_rows(const Tensor& a);

// Query rows attend over key rows. Every query row may appear in at most
// one group; rows that appear in none get a zero output.
struct AttentionGroup {
  std::vector<std::size_t> queries;
  std::vector<std::size_t> keys;
};

// Multi-head scaled dot-product attention over row groups. q, k, v are
// [rows x d] with d a multiple of head_dim; head h owns columns
// [h*head_dim, (h+1)*head_dim). Scores use scale 1/sqrt(head_dim).
// Registers 2*nq*nk*head_dim FLOPs per head per group for the scores and
// the same again for the weighted sum.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::shared_ptr<const std::vector<AttentionGroup>> groups, std::size_t head_dim);

// Attention probabilities of one group and head (no tape), [nq x nk].
std::vector<double> attention_probabilities(const Tensor& q, const Tensor& k,
                                            const AttentionGroup& group, std::size_t head,
                                            std::size_t head_dim);

// ---- verification --------------------------------------------------------

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t entries_checked = 0;
};

// Compares backward() gradients against central differences for every entry
// of every parameter. Relative error per entry is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8). Throws
// NumericError when f is not deterministic. `max_entries_per_param` caps the
// entries visited per tensor (0 = all) using an even stride.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double step,
                           std::size_t max_entries_per_param = 0);

}  // namespace adavid
