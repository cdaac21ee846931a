#include "graphtext/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "graphtext/rng.hpp"

namespace graphtext {

namespace {

std::atomic<int64_t> g_next_id{1};

using Impl = detail::TensorImpl;
using ImplPtr = std::shared_ptr<Impl>;

ImplPtr make_impl(Shape shape, std::vector<double> values, bool requires_grad,
                  const char* op = "leaf") {
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  impl->op = op;
  impl->id = g_next_id.fetch_add(1);
  return impl;
}

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

// Output shape of numpy-style broadcasting.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (size_t i = 0; i < n; ++i) {
    int64_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    int64_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      fail(std::string(op) + ": shapes not broadcastable: " + shape_str(a) +
           " vs " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides with 0 on broadcast axes, aligned to `out` rank.
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> strides(out.size(), 0);
  int64_t s = 1;
  for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
    size_t oi = out.size() - in.size() + i;
    strides[oi] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// True when `in` broadcast against `out` reduces to offset = lin % numel(in):
// `in` is a suffix of `out` (after stripping leading 1s).
bool is_suffix_bcast(const Shape& in, const Shape& out) {
  size_t start = 0;
  while (start < in.size() && in[start] == 1) ++start;
  size_t n = in.size() - start;
  if (n > out.size()) return false;
  for (size_t i = 0; i < n; ++i) {
    if (in[start + i] != out[out.size() - n + i]) return false;
  }
  return true;
}

struct BinarySpec {
  Shape out_shape;
  bool same_shape;
  bool a_suffix, b_suffix;  // fast modulo paths
  int64_t na, nb;
  std::vector<int64_t> sa, sb;  // general strides, filled when needed
};

BinarySpec binary_spec(const Impl& a, const Impl& b, const char* op) {
  BinarySpec sp;
  sp.out_shape = broadcast_shape(a.shape, b.shape, op);
  sp.same_shape = a.shape == b.shape;
  sp.na = a.numel();
  sp.nb = b.numel();
  sp.a_suffix = is_suffix_bcast(a.shape, sp.out_shape);
  sp.b_suffix = is_suffix_bcast(b.shape, sp.out_shape);
  if (!sp.a_suffix || !sp.b_suffix) {
    sp.sa = broadcast_strides(a.shape, sp.out_shape);
    sp.sb = broadcast_strides(b.shape, sp.out_shape);
  }
  return sp;
}

// Calls fn(out_lin, a_off, b_off) for every output element.
template <typename Fn>
void for_each_broadcast(const BinarySpec& sp, Fn&& fn) {
  int64_t n = shape_numel(sp.out_shape);
  if (sp.a_suffix && sp.b_suffix) {
    for (int64_t i = 0; i < n; ++i) fn(i, i % sp.na, i % sp.nb);
    return;
  }
  // odometer over output multi-index
  size_t rank = sp.out_shape.size();
  std::vector<int64_t> idx(rank, 0);
  int64_t ao = 0, bo = 0;
  for (int64_t i = 0; i < n; ++i) {
    fn(i, ao, bo);
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      idx[d] += 1;
      ao += sp.sa[d];
      bo += sp.sb[d];
      if (idx[d] < sp.out_shape[d]) break;
      ao -= sp.sa[d] * sp.out_shape[d];
      bo -= sp.sb[d] * sp.out_shape[d];
      idx[d] = 0;
    }
  }
}

Tensor make_op(Shape shape, std::vector<double> values, const char* op,
               std::vector<ImplPtr> parents,
               std::function<void(Impl&)> backward_fn) {
  bool rq = false;
  for (const auto& p : parents) rq = rq || p->requires_grad;
  auto impl = make_impl(std::move(shape), std::move(values), rq, op);
  if (rq) {
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(impl));
}

// out(m,n) = a(m,k) * b(k,n), accumulating.
void mm_nn(const double* a, const double* b, double* out, int64_t m, int64_t k,
           int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    const double* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      double aik = arow[kk];
      if (aik == 0.0) continue;
      const double* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
}

// out(m,k) += d(m,n) * b(k,n)^T
void mm_nt(const double* d, const double* b, double* out, int64_t m, int64_t k,
           int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* drow = d + i * n;
    double* orow = out + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * n;
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
      orow[kk] += acc;
    }
  }
}

// out(k,n) += a(m,k)^T * d(m,n)
void mm_tn(const double* a, const double* d, double* out, int64_t m, int64_t k,
           int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* drow = d + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      double aik = arow[kk];
      if (aik == 0.0) continue;
      double* orow = out + kk * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += aik * drow[j];
    }
  }
}

constexpr double kMaskedThreshold = -1e8;

}  // namespace

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  int64_t n = shape_numel(shape);
  return wrap(make_impl(std::move(shape), std::vector<double>(n, 0.0),
                        requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  int64_t n = shape_numel(shape);
  return wrap(make_impl(std::move(shape), std::vector<double>(n, value),
                        requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    fail("from_values: shape " + shape_str(shape) + " wants " +
         std::to_string(shape_numel(shape)) + " values, got " +
         std::to_string(values.size()));
  }
  return wrap(make_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  int64_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (int64_t i = 0; i < n; ++i) v[i] = rng.truncated_normal(0.0, stddev);
  return wrap(make_impl(std::move(shape), std::move(v), requires_grad));
}

int64_t Tensor::dim(int axis) const {
  int r = static_cast<int>(impl_->shape.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail("dim: axis out of range");
  return impl_->shape[axis];
}

const std::vector<double>& Tensor::grad() const {
  static const std::vector<double> empty;
  if (impl_->grad.empty()) {
    impl_->grad.assign(impl_->values.size(), 0.0);
  }
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) fail("item: tensor has " + std::to_string(numel()) + " elements");
  return impl_->values[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = impl_->shape;
  if (idx.size() != s.size()) fail("at: rank mismatch");
  int64_t off = 0;
  size_t i = 0;
  for (int64_t v : idx) {
    off = off * s[i] + v;
    ++i;
  }
  return impl_->values[off];
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

namespace {

template <typename FwdFn, typename BwdA, typename BwdB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, FwdFn fwd,
                 BwdA bwd_a, BwdB bwd_b) {
  auto ai = a.impl();
  auto bi = b.impl();
  BinarySpec sp = binary_spec(*ai, *bi, op);
  std::vector<double> out(shape_numel(sp.out_shape));
  const double* av = ai->values.data();
  const double* bv = bi->values.data();
  for_each_broadcast(sp, [&](int64_t i, int64_t ao, int64_t bo) {
    out[i] = fwd(av[ao], bv[bo]);
  });
  return make_op(sp.out_shape, std::move(out), op, {ai, bi},
                 [ai, bi, sp, bwd_a, bwd_b](Impl& self) {
                   const double* g = self.grad.data();
                   const double* av = ai->values.data();
                   const double* bv = bi->values.data();
                   double* ga = ai->requires_grad ? ai->ensure_grad().data() : nullptr;
                   double* gb = bi->requires_grad ? bi->ensure_grad().data() : nullptr;
                   for_each_broadcast(sp, [&](int64_t i, int64_t ao, int64_t bo) {
                     if (ga) ga[ao] += bwd_a(g[i], av[ao], bv[bo]);
                     if (gb) gb[bo] += bwd_b(g[i], av[ao], bv[bo]);
                   });
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& a, double c) {
  auto ai = a.impl();
  std::vector<double> out(ai->values);
  for (double& v : out) v *= c;
  return make_op(ai->shape, std::move(out), "scale", {ai}, [ai, c](Impl& self) {
    if (!ai->requires_grad) return;
    double* ga = ai->ensure_grad().data();
    const double* g = self.grad.data();
    for (size_t i = 0; i < self.values.size(); ++i) ga[i] += c * g[i];
  });
}

Tensor add_const(const Tensor& a, double c) {
  auto ai = a.impl();
  std::vector<double> out(ai->values);
  for (double& v : out) v += c;
  return make_op(ai->shape, std::move(out), "add_const", {ai}, [ai](Impl& self) {
    if (!ai->requires_grad) return;
    double* ga = ai->ensure_grad().data();
    const double* g = self.grad.data();
    for (size_t i = 0; i < self.values.size(); ++i) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto ai = a.impl();
  auto bi = b.impl();
  if (ai->shape.size() < 2 || bi->shape.size() < 2) {
    fail("matmul: operands must have rank >= 2, got " + shape_str(ai->shape) +
         " and " + shape_str(bi->shape));
  }
  int64_t m = ai->shape[ai->shape.size() - 2];
  int64_t ka = ai->shape.back();
  int64_t kb = bi->shape[bi->shape.size() - 2];
  int64_t n = bi->shape.back();
  if (ka != kb) {
    fail("matmul: inner dimensions disagree: " + shape_str(ai->shape) + " x " +
         shape_str(bi->shape));
  }
  Shape abatch(ai->shape.begin(), ai->shape.end() - 2);
  Shape bbatch(bi->shape.begin(), bi->shape.end() - 2);
  Shape batch = broadcast_shape(abatch, bbatch, "matmul");
  int64_t nbatch = shape_numel(batch);
  std::vector<int64_t> sa = broadcast_strides(abatch, batch);
  std::vector<int64_t> sb = broadcast_strides(bbatch, batch);

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(shape_numel(out_shape), 0.0);

  // per-batch base offsets for a and b
  std::vector<int64_t> aoffs(nbatch, 0), boffs(nbatch, 0);
  {
    size_t rank = batch.size();
    std::vector<int64_t> idx(rank, 0);
    int64_t ao = 0, bo = 0;
    for (int64_t i = 0; i < nbatch; ++i) {
      aoffs[i] = ao;
      boffs[i] = bo;
      for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
        idx[d] += 1;
        ao += sa[d];
        bo += sb[d];
        if (idx[d] < batch[d]) break;
        ao -= sa[d] * batch[d];
        bo -= sb[d] * batch[d];
        idx[d] = 0;
      }
    }
  }
  const int64_t astep = m * ka, bstep = kb * n, ostep = m * n;
  for (int64_t t = 0; t < nbatch; ++t) {
    mm_nn(ai->values.data() + aoffs[t] * astep,
          bi->values.data() + boffs[t] * bstep, out.data() + t * ostep, m, ka,
          n);
  }

  return make_op(out_shape, std::move(out), "matmul", {ai, bi},
                 [ai, bi, aoffs, boffs, m, ka, n, astep, bstep,
                  ostep](Impl& self) {
                   const double* g = self.grad.data();
                   int64_t nbatch = static_cast<int64_t>(aoffs.size());
                   if (ai->requires_grad) {
                     double* ga = ai->ensure_grad().data();
                     for (int64_t t = 0; t < nbatch; ++t) {
                       mm_nt(g + t * ostep, bi->values.data() + boffs[t] * bstep,
                             ga + aoffs[t] * astep, m, ka, n);
                     }
                   }
                   if (bi->requires_grad) {
                     double* gb = bi->ensure_grad().data();
                     for (int64_t t = 0; t < nbatch; ++t) {
                       mm_tn(ai->values.data() + aoffs[t] * astep, g + t * ostep,
                             gb + boffs[t] * bstep, m, ka, n);
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor reshape(const Tensor& a, Shape shape) {
  auto ai = a.impl();
  // one -1 may be inferred
  int64_t known = 1, infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) fail("reshape: multiple -1");
      infer = static_cast<int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) shape[infer] = ai->numel() / known;
  if (shape_numel(shape) != ai->numel()) {
    fail("reshape: cannot reshape " + shape_str(ai->shape) + " to " +
         shape_str(shape));
  }
  std::vector<double> out(ai->values);
  return make_op(std::move(shape), std::move(out), "reshape", {ai},
                 [ai](Impl& self) {
                   if (!ai->requires_grad) return;
                   double* ga = ai->ensure_grad().data();
                   const double* g = self.grad.data();
                   for (size_t i = 0; i < self.values.size(); ++i) ga[i] += g[i];
                 });
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  auto ai = a.impl();
  size_t rank = ai->shape.size();
  if (axes.size() != rank) fail("permute: axes rank mismatch");
  Shape out_shape(rank);
  for (size_t i = 0; i < rank; ++i) out_shape[i] = ai->shape[axes[i]];

  std::vector<int64_t> in_strides(rank, 1);
  for (int i = static_cast<int>(rank) - 2; i >= 0; --i) {
    in_strides[i] = in_strides[i + 1] * ai->shape[i + 1];
  }
  // stride of output axis d in the input layout
  std::vector<int64_t> strides(rank);
  for (size_t i = 0; i < rank; ++i) strides[i] = in_strides[axes[i]];

  int64_t n = ai->numel();
  std::vector<double> out(n);
  std::vector<int64_t> map(n);  // out index -> in index
  std::vector<int64_t> idx(rank, 0);
  int64_t off = 0;
  for (int64_t i = 0; i < n; ++i) {
    map[i] = off;
    out[i] = ai->values[off];
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      idx[d] += 1;
      off += strides[d];
      if (idx[d] < out_shape[d]) break;
      off -= strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return make_op(std::move(out_shape), std::move(out), "permute", {ai},
                 [ai, map=std::move(map)](Impl& self) {
                   if (!ai->requires_grad) return;
                   double* ga = ai->ensure_grad().data();
                   const double* g = self.grad.data();
                   for (size_t i = 0; i < map.size(); ++i) ga[map[i]] += g[i];
                 });
}

Tensor transpose_last(const Tensor& a) {
  std::vector<int> axes(a.ndim());
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(a, axes);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail("concat: no parts");
  size_t rank = parts[0].impl()->shape.size();
  if (axis < 0) axis += static_cast<int>(rank);
  Shape out_shape = parts[0].impl()->shape;
  int64_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.impl()->shape;
    if (s.size() != rank) fail("concat: rank mismatch");
    for (size_t d = 0; d < rank; ++d) {
      if (static_cast<int>(d) != axis && s[d] != out_shape[d]) {
        fail("concat: shape mismatch at axis " + std::to_string(d) + ": " +
             shape_str(out_shape) + " vs " + shape_str(s));
      }
    }
    total += s[axis];
  }
  out_shape[axis] = total;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[d];
  for (size_t d = axis + 1; d < rank; ++d) inner *= out_shape[d];

  std::vector<double> out(shape_numel(out_shape));
  int64_t out_row = total * inner;
  int64_t at = 0;
  std::vector<ImplPtr> impls;
  std::vector<int64_t> offsets;  // per part, offset within an outer row
  for (const Tensor& p : parts) {
    auto pi = p.impl();
    impls.push_back(pi);
    offsets.push_back(at);
    int64_t block = pi->shape[axis] * inner;
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + o * out_row + at, pi->values.data() + o * block,
                  block * sizeof(double));
    }
    at += block;
  }
  return make_op(std::move(out_shape), std::move(out), "concat", impls,
                 [impls, offsets, outer, inner, out_row, axis](Impl& self) {
                   const double* g = self.grad.data();
                   for (size_t pi = 0; pi < impls.size(); ++pi) {
                     if (!impls[pi]->requires_grad) continue;
                     double* gp = impls[pi]->ensure_grad().data();
                     int64_t block = impls[pi]->shape[axis] * inner;
                     for (int64_t o = 0; o < outer; ++o) {
                       const double* src = g + o * out_row + offsets[pi];
                       double* dst = gp + o * block;
                       for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
                     }
                   }
                 });
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  auto ai = a.impl();
  size_t rank = ai->shape.size();
  if (axis < 0) axis += static_cast<int>(rank);
  if (axis < 0 || axis >= static_cast<int>(rank)) fail("slice: bad axis");
  if (start < 0 || len < 0 || start + len > ai->shape[axis]) {
    fail("slice: range [" + std::to_string(start) + "," +
         std::to_string(start + len) + ") out of bounds for axis size " +
         std::to_string(ai->shape[axis]));
  }
  Shape out_shape = ai->shape;
  out_shape[axis] = len;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= ai->shape[d];
  for (size_t d = axis + 1; d < rank; ++d) inner *= ai->shape[d];
  int64_t in_row = ai->shape[axis] * inner;
  int64_t out_row = len * inner;
  std::vector<double> out(shape_numel(out_shape));
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * out_row,
                ai->values.data() + o * in_row + start * inner,
                out_row * sizeof(double));
  }
  return make_op(std::move(out_shape), std::move(out), "slice", {ai},
                 [ai, outer, inner, in_row, out_row, start](Impl& self) {
                   if (!ai->requires_grad) return;
                   double* ga = ai->ensure_grad().data();
                   const double* g = self.grad.data();
                   for (int64_t o = 0; o < outer; ++o) {
                     double* dst = ga + o * in_row + start * inner;
                     const double* src = g + o * out_row;
                     for (int64_t i = 0; i < out_row; ++i) dst[i] += src[i];
                   }
                 });
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& rows) {
  auto ai = a.impl();
  if (ai->shape.empty()) fail("gather_rows: scalar input");
  int64_t nrows = ai->shape[0];
  int64_t rest = ai->numel() / std::max<int64_t>(nrows, 1);
  for (int64_t r : rows) {
    if (r < 0 || r >= nrows) {
      fail("gather_rows: index " + std::to_string(r) + " out of range [0," +
           std::to_string(nrows) + ")");
    }
  }
  Shape out_shape = ai->shape;
  out_shape[0] = static_cast<int64_t>(rows.size());
  std::vector<double> out(out_shape[0] * rest);
  for (size_t i = 0; i < rows.size(); ++i) {
    std::memcpy(out.data() + i * rest, ai->values.data() + rows[i] * rest,
                rest * sizeof(double));
  }
  return make_op(std::move(out_shape), std::move(out), "gather_rows", {ai},
                 [ai, rows, rest](Impl& self) {
                   if (!ai->requires_grad) return;
                   double* ga = ai->ensure_grad().data();
                   const double* g = self.grad.data();
                   for (size_t i = 0; i < rows.size(); ++i) {
                     double* dst = ga + rows[i] * rest;
                     const double* src = g + i * rest;
                     for (int64_t j = 0; j < rest; ++j) dst[j] += src[j];
                   }
                 });
}

Tensor sum_all(const Tensor& a) {
  auto ai = a.impl();
  double s = 0.0;
  for (double v : ai->values) s += v;
  return make_op({1}, {s}, "sum_all", {ai}, [ai](Impl& self) {
    if (!ai->requires_grad) return;
    double g = self.grad[0];
    double* ga = ai->ensure_grad().data();
    for (size_t i = 0; i < ai->values.size(); ++i) ga[i] += g;
  });
}

Tensor mean_axis0(const Tensor& a) {
  auto ai = a.impl();
  if (ai->shape.empty() || ai->shape[0] == 0) fail("mean_axis0: empty axis");
  int64_t n = ai->shape[0];
  int64_t rest = ai->numel() / n;
  Shape out_shape(ai->shape.begin() + 1, ai->shape.end());
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(rest, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const double* row = ai->values.data() + i * rest;
    for (int64_t j = 0; j < rest; ++j) out[j] += row[j];
  }
  for (double& v : out) v /= static_cast<double>(n);
  return make_op(std::move(out_shape), std::move(out), "mean_axis0", {ai},
                 [ai, n, rest](Impl& self) {
                   if (!ai->requires_grad) return;
                   double* ga = ai->ensure_grad().data();
                   const double* g = self.grad.data();
                   double inv = 1.0 / static_cast<double>(n);
                   for (int64_t i = 0; i < n; ++i) {
                     double* dst = ga + i * rest;
                     for (int64_t j = 0; j < rest; ++j) dst[j] += g[j] * inv;
                   }
                 });
}

// ---------------------------------------------------------------------------
// Nonlinearities

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor activation(const Tensor& x, Activation kind) {
  auto xi = x.impl();
  std::vector<double> out(xi->values.size());
  if (kind == Activation::Gelu) {
    for (size_t i = 0; i < out.size(); ++i) {
      double v = xi->values[i];
      out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
  } else {
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xi->values[i]);
  }
  return make_op(xi->shape, std::move(out),
                 kind == Activation::Gelu ? "gelu" : "tanh", {xi},
                 [xi, kind](Impl& self) {
                   if (!xi->requires_grad) return;
                   double* gx = xi->ensure_grad().data();
                   const double* g = self.grad.data();
                   if (kind == Activation::Gelu) {
                     for (size_t i = 0; i < self.values.size(); ++i) {
                       double v = xi->values[i];
                       double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                       double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                       gx[i] += g[i] * (cdf + v * pdf);
                     }
                   } else {
                     for (size_t i = 0; i < self.values.size(); ++i) {
                       double y = self.values[i];
                       gx[i] += g[i] * (1.0 - y * y);
                     }
                   }
                 });
}

Tensor sigmoid(const Tensor& x) {
  auto xi = x.impl();
  std::vector<double> out(xi->values.size());
  for (size_t i = 0; i < out.size(); ++i) {
    double v = xi->values[i];
    out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                    : std::exp(v) / (1.0 + std::exp(v));
  }
  return make_op(xi->shape, std::move(out), "sigmoid", {xi}, [xi](Impl& self) {
    if (!xi->requires_grad) return;
    double* gx = xi->ensure_grad().data();
    const double* g = self.grad.data();
    for (size_t i = 0; i < self.values.size(); ++i) {
      double y = self.values[i];
      gx[i] += g[i] * y * (1.0 - y);
    }
  });
}

// ---------------------------------------------------------------------------
// layer_norm

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  int64_t d = xi->shape.back();
  if (gi->numel() != d || bi->numel() != d) {
    fail("layer_norm: gamma/beta size " + std::to_string(gi->numel()) + "/" +
         std::to_string(bi->numel()) + " does not match last dim " +
         std::to_string(d));
  }
  if (eps <= 0) fail("layer_norm: eps must be positive");
  int64_t rows = xi->numel() / d;
  std::vector<double> out(xi->values.size());
  std::vector<double> xhat(xi->values.size());
  std::vector<double> inv_std(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xi->values.data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    double* xh = xhat.data() + r * d;
    double* orow = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) {
      xh[j] = (xr[j] - mu) * is;
      orow[j] = xh[j] * gi->values[j] + bi->values[j];
    }
  }
  return make_op(
      xi->shape, std::move(out), "layer_norm", {xi, gi, bi},
      [xi, gi, bi, d, rows, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Impl& self) {
        const double* g = self.grad.data();
        double* gx = xi->requires_grad ? xi->ensure_grad().data() : nullptr;
        double* gg = gi->requires_grad ? gi->ensure_grad().data() : nullptr;
        double* gb = bi->requires_grad ? bi->ensure_grad().data() : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
          const double* grow = g + r * d;
          const double* xh = xhat.data() + r * d;
          if (gg || gb) {
            for (int64_t j = 0; j < d; ++j) {
              if (gg) gg[j] += grow[j] * xh[j];
              if (gb) gb[j] += grow[j];
            }
          }
          if (gx) {
            double mean_t = 0.0, mean_tx = 0.0;
            for (int64_t j = 0; j < d; ++j) {
              double t = grow[j] * gi->values[j];
              mean_t += t;
              mean_tx += t * xh[j];
            }
            mean_t /= static_cast<double>(d);
            mean_tx /= static_cast<double>(d);
            double is = inv_std[r];
            double* gxr = gx + r * d;
            for (int64_t j = 0; j < d; ++j) {
              double t = grow[j] * gi->values[j];
              gxr[j] += is * (t - mean_t - xh[j] * mean_tx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// masked_softmax

Tensor masked_softmax(const Tensor& scores, const Tensor& mask,
                      SoftmaxDiagnostics* diag) {
  auto si = scores.impl();
  int64_t k = si->shape.back();
  int64_t rows = si->numel() / k;
  const double* sv = si->values.data();

  // Broadcast mask offsets per element, if present.
  std::vector<double> zmask;  // mask value per score element; empty = none
  if (mask.defined()) {
    auto mi = mask.impl();
    BinarySpec sp = binary_spec(*si, *mi, "masked_softmax");
    if (sp.out_shape != si->shape) {
      fail("masked_softmax: mask " + shape_str(mi->shape) +
           " does not broadcast to scores " + shape_str(si->shape));
    }
    zmask.resize(si->numel());
    const double* mv = mi->values.data();
    for_each_broadcast(sp, [&](int64_t i, int64_t, int64_t bo) {
      zmask[i] = mv[bo];
    });
  }

  std::vector<double> out(si->numel(), 0.0);
  int64_t fully_masked = 0;
  for (int64_t r = 0; r < rows; ++r) {
    const double* srow = sv + r * k;
    const double* mrow = zmask.empty() ? nullptr : zmask.data() + r * k;
    double best = -std::numeric_limits<double>::infinity();
    bool any_open = false;
    for (int64_t j = 0; j < k; ++j) {
      if (mrow && mrow[j] <= kMaskedThreshold) continue;
      any_open = true;
      double z = srow[j] + (mrow ? mrow[j] : 0.0);
      best = std::max(best, z);
    }
    if (!any_open) {
      ++fully_masked;
      continue;  // row stays zero
    }
    double denom = 0.0;
    double* orow = out.data() + r * k;
    for (int64_t j = 0; j < k; ++j) {
      if (mrow && mrow[j] <= kMaskedThreshold) continue;
      double z = srow[j] + (mrow ? mrow[j] : 0.0);
      orow[j] = std::exp(z - best);
      denom += orow[j];
    }
    for (int64_t j = 0; j < k; ++j) orow[j] /= denom;
  }
  if (diag) diag->fully_masked_rows += fully_masked;

  // The mask is data, not a differentiable input; it is not a trace parent.
  std::vector<ImplPtr> parents = {si};
  return make_op(si->shape, std::move(out), "masked_softmax", parents,
                 [si, k, rows](Impl& self) {
                   if (!si->requires_grad) return;
                   double* gs = si->ensure_grad().data();
                   const double* g = self.grad.data();
                   const double* y = self.values.data();
                   for (int64_t r = 0; r < rows; ++r) {
                     const double* yr = y + r * k;
                     const double* gr = g + r * k;
                     double dot = 0.0;
                     for (int64_t j = 0; j < k; ++j) dot += yr[j] * gr[j];
                     double* gsr = gs + r * k;
                     for (int64_t j = 0; j < k; ++j) {
                       gsr[j] += yr[j] * (gr[j] - dot);
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Losses

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets,
                     int64_t ignore_index, Reduction reduction,
                     int64_t* count_out) {
  auto li = logits.impl();
  if (li->shape.size() != 2) {
    fail("cross_entropy: logits must be 2-D, got " + shape_str(li->shape));
  }
  int64_t rows = li->shape[0];
  int64_t cols = li->shape[1];
  if (static_cast<int64_t>(targets.size()) != rows) {
    fail("cross_entropy: " + std::to_string(targets.size()) +
         " targets for " + std::to_string(rows) + " rows");
  }
  int64_t count = 0;
  double total = 0.0;
  std::vector<double> probs(li->values.size(), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    int64_t t = targets[r];
    if (t == ignore_index) continue;
    if (t < 0 || t >= cols) {
      fail("cross_entropy: target " + std::to_string(t) +
           " out of range for " + std::to_string(cols) + " classes");
    }
    const double* zr = li->values.data() + r * cols;
    double m = zr[0];
    for (int64_t j = 1; j < cols; ++j) m = std::max(m, zr[j]);
    double denom = 0.0;
    double* pr = probs.data() + r * cols;
    for (int64_t j = 0; j < cols; ++j) {
      pr[j] = std::exp(zr[j] - m);
      denom += pr[j];
    }
    for (int64_t j = 0; j < cols; ++j) pr[j] /= denom;
    total += std::log(denom) + m - zr[t];
    ++count;
  }
  if (count_out) *count_out = count;
  if (count == 0) return Tensor::scalar(0.0);
  double w = reduction == Reduction::Mean ? 1.0 / static_cast<double>(count) : 1.0;
  return make_op({1}, {total * w}, "cross_entropy", {li},
                 [li, targets, ignore_index, cols, rows, w,
                  probs = std::move(probs)](Impl& self) {
                   if (!li->requires_grad) return;
                   double g = self.grad[0] * w;
                   double* gl = li->ensure_grad().data();
                   for (int64_t r = 0; r < rows; ++r) {
                     int64_t t = targets[r];
                     if (t == ignore_index) continue;
                     const double* pr = probs.data() + r * cols;
                     double* gr = gl + r * cols;
                     for (int64_t j = 0; j < cols; ++j) gr[j] += g * pr[j];
                     gr[t] -= g;
                   }
                 });
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets,
                       Reduction reduction) {
  auto li = logits.impl();
  if (static_cast<int64_t>(targets.size()) != li->numel()) {
    fail("bce_with_logits: " + std::to_string(targets.size()) +
         " targets for " + std::to_string(li->numel()) + " logits");
  }
  if (li->numel() == 0) return Tensor::scalar(0.0);
  double total = 0.0;
  for (int64_t i = 0; i < li->numel(); ++i) {
    double z = li->values[i];
    double y = targets[i];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  double w = reduction == Reduction::Mean
                 ? 1.0 / static_cast<double>(li->numel())
                 : 1.0;
  return make_op({1}, {total * w}, "bce_with_logits", {li},
                 [li, targets, w](Impl& self) {
                   if (!li->requires_grad) return;
                   double g = self.grad[0] * w;
                   double* gl = li->ensure_grad().data();
                   for (int64_t i = 0; i < li->numel(); ++i) {
                     double z = li->values[i];
                     double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                                       : std::exp(z) / (1.0 + std::exp(z));
                     gl[i] += g * (s - targets[i]);
                   }
                 });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) fail("dropout: p must be < 1");
  auto xi = x.impl();
  double keep = 1.0 - p;
  std::vector<double> mask(xi->values.size());
  std::vector<double> out(xi->values.size());
  for (size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : 1.0 / keep;
    out[i] = xi->values[i] * mask[i];
  }
  return make_op(xi->shape, std::move(out), "dropout", {xi},
                 [xi, mask = std::move(mask)](Impl& self) {
                   if (!xi->requires_grad) return;
                   double* gx = xi->ensure_grad().data();
                   const double* g = self.grad.data();
                   for (size_t i = 0; i < mask.size(); ++i) gx[i] += g[i] * mask[i];
                 });
}

// ---------------------------------------------------------------------------
// Autodiff driver

namespace {

std::vector<Impl*> topo_order(Impl* root) {
  std::vector<Impl*> order;
  std::unordered_set<Impl*> done;
  // iterative post-order DFS
  std::vector<std::pair<Impl*, size_t>> stack;
  stack.emplace_back(root, 0);
  std::unordered_set<Impl*> on_stack{root};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Impl* child = node->parents[next].get();
      ++next;
      if (!done.count(child) && !on_stack.count(child)) {
        stack.emplace_back(child, 0);
        on_stack.insert(child);
      }
    } else {
      done.insert(node);
      on_stack.erase(node);
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // leaves first, root last
}

}  // namespace

ComputationTrace trace(const Tensor& root) {
  ComputationTrace tr;
  for (Impl* node : topo_order(root.impl().get())) {
    if (node->parents.empty()) continue;
    TraceEntry e;
    e.op = node->op;
    for (const auto& p : node->parents) e.inputs.push_back(p->id);
    e.output = node->id;
    tr.entries.push_back(std::move(e));
  }
  return tr;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    fail("backward: loss must be a defined scalar");
  }
  Impl* root = loss.impl().get();
  if (!root->requires_grad) return;  // nothing reachable wants gradients
  auto order = topo_order(root);
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = *it;
    if (!node->backward_fn) continue;
    if (node->grad.empty()) continue;  // no gradient signal reached this node
    node->backward_fn(*node);
  }
}

// ---------------------------------------------------------------------------
// grad_check

double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& params, double eps, Rng& rng,
                  int64_t max_coords_per_param, double eps_refine) {
  if (!(eps > 0.0 && eps <= 1e-3)) {
    fail("grad_check: eps must be in (0, 1e-3]");
  }
  if (eps_refine < 0.0 || eps_refine > 1e-3) {
    fail("grad_check: eps_refine must be in [0, 1e-3]");
  }
  for (const Tensor& p : params) {
    const_cast<Tensor&>(p).grad();  // ensure slot
    const_cast<Tensor&>(p).zero_grad();
  }
  Tensor loss = f();
  if (!std::isfinite(loss.item())) fail("grad_check: non-finite loss");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) analytic.push_back(p.grad());

  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    int64_t n = p.numel();
    std::vector<int64_t> coords;
    if (n <= max_coords_per_param) {
      coords.resize(n);
      for (int64_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      std::set<int64_t> picked;
      while (static_cast<int64_t>(picked.size()) < max_coords_per_param) {
        picked.insert(rng.uniform_int(n));
      }
      coords.assign(picked.begin(), picked.end());
    }
    auto measure = [&](int64_t c, double step) {
      double orig = p.values()[c];
      p.values()[c] = orig + step;
      double fp = f().item();
      p.values()[c] = orig - step;
      double fm = f().item();
      p.values()[c] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        fail("grad_check: non-finite perturbed loss");
      }
      double numeric = (fp - fm) / (2.0 * step);
      double a = analytic[pi][c];
      double denom = std::max({std::abs(numeric), std::abs(a), 1e-8});
      return std::abs(numeric - a) / denom;
    };
    for (int64_t c : coords) {
      double rel = measure(c, eps);
      if (rel > 1e-4 && eps_refine > 0.0 && eps_refine != eps) {
        rel = std::min(rel, measure(c, eps_refine));
      }
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// helpers

bool allclose(const Tensor& a, const Tensor& b, double atol, double rtol) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double x = a.values()[i], y = b.values()[i];
    if (std::abs(x - y) > atol + rtol * std::abs(y)) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  }
  return m;
}

}  // namespace graphtext
