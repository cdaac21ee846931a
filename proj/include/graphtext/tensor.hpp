#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace graphtext {

class Rng;

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily; empty means all zero
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Accumulates into parents' grads given this node's grad.
  std::function<void(TensorImpl&)> backward_fn;
  int64_t id = 0;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense n-dimensional array of 64-bit floats with a gradient slot.
// Operations on tensors with requires_grad record the backward computation;
// `backward(loss)` then fills gradients of every reachable requires_grad
// tensor. Values are row-major. Copies are shallow (shared storage).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Normal(0, stddev) truncated at +-2 stddev.
  static Tensor randn(Shape shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t ndim() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t dim(int axis) const;  // negative axes allowed
  int64_t numel() const { return impl_->numel(); }
  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->parents.empty(); }
  int64_t id() const { return impl_->id; }
  const char* op() const { return impl_->op; }

  const std::vector<double>& values() const { return impl_->values; }
  // Mutable access is for leaves (optimizers, finite differences); mutating
  // a recorded intermediate invalidates any trace that produced it.
  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& grad() const;
  std::vector<double>& grad() { return impl_->ensure_grad(); }
  void zero_grad();

  double item() const;
  double at(std::initializer_list<int64_t> idx) const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Recorded computation trace.

struct TraceEntry {
  const char* op;
  std::vector<int64_t> inputs;
  int64_t output;
};

// Topologically ordered: every entry's inputs are either leaves or outputs of
// earlier entries.
struct ComputationTrace {
  std::vector<TraceEntry> entries;
};

ComputationTrace trace(const Tensor& root);

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
// (fan-out sums both paths); leaf gradients also accumulate across calls,
// so training code zeroes them between steps.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Primitives. All support backward when any input requires grad.

Tensor add(const Tensor& a, const Tensor& b);  // numpy-style broadcasting
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, broadcasting
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);

// Batched matrix product. Last two axes are the matrix; leading axes
// broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor transpose_last(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
// Gather along the first axis; backward scatter-adds.
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& rows);

Tensor sum_all(const Tensor& a);
Tensor mean_axis0(const Tensor& a);

enum class Activation { Gelu, Tanh };
Tensor activation(const Tensor& x, Activation kind);
Tensor sigmoid(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-12);

struct SoftmaxDiagnostics {
  int64_t fully_masked_rows = 0;
};

// Row-wise softmax of (scores + mask) over the last axis. Mask entries are 0
// (attend) or a large negative constant (block); it broadcasts against
// scores. Rows whose keys are all blocked yield all zeros rather than NaN.
// Pass an undefined mask for plain softmax.
Tensor masked_softmax(const Tensor& scores, const Tensor& mask,
                      SoftmaxDiagnostics* diag = nullptr);

enum class Reduction { Mean, Sum };

// Mean (or sum) negative log-softmax at target indices. Rows whose target is
// ignore_index contribute nothing; if every row is ignored the result is 0
// with zero gradient. count_out, when given, receives the number of counted
// rows.
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets,
                     int64_t ignore_index, Reduction reduction = Reduction::Mean,
                     int64_t* count_out = nullptr);

// Elementwise binary cross entropy on logits, reduced over all elements.
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets,
                       Reduction reduction = Reduction::Mean);

// Inverted dropout: kept entries scale by 1/(1-p). p = 0 is the identity.
Tensor dropout(const Tensor& x, double p, Rng& rng);

// ---------------------------------------------------------------------------
// Verification harness.

// Compares backward() gradients of f against central finite differences on a
// random sample of coordinates per parameter. Returns the max relative error
// with denominator max(|analytic|, |numeric|, 1e-8). f must rebuild its
// computation from the current parameter values on every call.
//
// Float64 central differences cannot resolve every gradient scale with one
// step size: rounding noise ulp(f)/(2 eps) dominates near-zero coordinates
// at small eps while O(eps^2) truncation dominates steep ones at large eps.
// When eps_refine > 0, a coordinate that misses 1e-4 at `eps` is re-measured
// at `eps_refine` and the smaller error counts.
double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& params, double eps, Rng& rng,
                  int64_t max_coords_per_param = 24, double eps_refine = 0.0);

// ---------------------------------------------------------------------------
// Small helpers used across modules and tests.

bool allclose(const Tensor& a, const Tensor& b, double atol, double rtol = 0.0);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace graphtext
