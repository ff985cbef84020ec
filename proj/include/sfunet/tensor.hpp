#pragma once

// Dense N-d tensors with reverse-mode autodiff. Each op records its parents
// and a backward closure on the result node; backward() walks the graph in
// reverse topological order and accumulates into leaf .grad buffers.
//
// Scalar type is a template parameter: float for training/sampling, double
// for the finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <vector>

#include "sfunet/gemm.hpp"
#include "sfunet/rng.hpp"

namespace sfunet {

// vector whose resize default-initializes instead of zeroing; op outputs
// that overwrite every element skip one full memory pass
template <typename T>
struct NoInitAllocator : std::allocator<T> {
  using std::allocator<T>::allocator;
  template <typename U>
  struct rebind {
    using other = NoInitAllocator<U>;
  };
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <typename T>
using Buf = std::vector<T, NoInitAllocator<T>>;

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables graph recording in scope (sampling, metrics, data prep).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  Buf<T> data;
  Buf<T> grad;  // allocated lazily, same length as data
  bool requires_grad = false;

  // recorded operation (empty for leaves)
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {}
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape) { return full(shape, T(0)); }

  static Tensor full(const Shape& shape, T value) {
    Tensor t;
    check_shape(shape);
    t.impl_->shape = shape;
    t.impl_->data.assign(static_cast<size_t>(numel_of(shape)), value);
    return t;
  }

  static Tensor from(Buf<T> values, const Shape& shape) {
    Tensor t;
    check_shape(shape);
    if (static_cast<int64_t>(values.size()) != numel_of(shape))
      fail("Tensor::from: data length " + std::to_string(values.size()) +
           " does not match shape " + shape_str(shape));
    t.impl_->shape = shape;
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor from(const std::vector<T>& values, const Shape& shape) {
    return from(Buf<T>(values.begin(), values.end()), shape);
  }

  static Tensor from(std::initializer_list<T> values, const Shape& shape) {
    return from(Buf<T>(values.begin(), values.end()), shape);
  }

  // uninitialized buffer; callers must write every element
  static Tensor uninit(const Shape& shape) {
    Tensor t;
    check_shape(shape);
    t.impl_->shape = shape;
    t.impl_->data.resize(static_cast<size_t>(numel_of(shape)));
    return t;
  }

  static Tensor randn(RngState& rng, const Shape& shape) {
    Tensor t = uninit(shape);
    for (auto& v : t.impl_->data) v = static_cast<T>(rng.normal());
    return t;
  }

  static Tensor rand_uniform(RngState& rng, const Shape& shape, T lo, T hi) {
    Tensor t = uninit(shape);
    for (auto& v : t.impl_->data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  // shape-only tensor used by the architecture planner; holds no data
  static Tensor placeholder(const Shape& shape) {
    Tensor t;
    check_shape(shape);
    t.impl_->shape = shape;
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t numel() const { return numel_of(impl_->shape); }
  bool has_data() const { return !impl_->data.empty() || numel() == 0; }

  Buf<T>& data() { return impl_->data; }
  const Buf<T>& data() const { return impl_->data; }
  Buf<T>& grad() { return impl_->grad; }
  const Buf<T>& grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }

  T item() const {
    if (numel() != 1) fail("item(): tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
  }

  Tensor& set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
  }
  bool requires_grad() const { return impl_->requires_grad; }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  // copy of the values with no graph attached
  Tensor detach() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  std::shared_ptr<TensorImpl<T>>& impl() { return impl_; }
  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

  void backward() const;

 private:
  static void check_shape(const Shape& shape) {
    for (int64_t d : shape)
      if (d <= 0) fail("invalid shape " + shape_str(shape) + ": dims must be positive");
  }

  std::shared_ptr<TensorImpl<T>> impl_;
};

// Reverse topological order over the recorded graph (parents before children).
template <typename T>
struct Graph {
  std::vector<TensorImpl<T>*> order;

  static Graph build(const std::shared_ptr<TensorImpl<T>>& root) {
    Graph g;
    std::unordered_set<TensorImpl<T>*> seen;
    // iterative post-order DFS
    std::vector<std::pair<TensorImpl<T>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        TensorImpl<T>* p = node->parents[next++].get();
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        g.order.push_back(node);
        stack.pop_back();
      }
    }
    return g;
  }
};

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) fail("backward(): loss must be a scalar, got shape " + shape_str(shape()));
  Graph<T> g = Graph<T>::build(impl_);
  impl_->ensure_grad();
  impl_->grad[0] = T(1);
  for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
    TensorImpl<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

namespace detail {

template <typename T>
bool want_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_mode()) return false;
  for (const Tensor<T>* t : inputs)
    if ((*t).impl()->requires_grad) return true;
  return false;
}

template <typename T, typename Fn>
void record(Tensor<T>& out, std::vector<std::shared_ptr<TensorImpl<T>>> parents, Fn&& fn) {
  out.impl()->requires_grad = true;
  out.impl()->parents = std::move(parents);
  out.impl()->backward_fn = std::forward<Fn>(fn);
}

template <typename T>
void accumulate(TensorImpl<T>& dst, const Buf<T>& g) {
  dst.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

enum class EwOp { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    fail("elementwise: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  const size_t n = av.size();
  switch (op) {
    case EwOp::Add: for (size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i]; break;
    case EwOp::Sub: for (size_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i]; break;
    case EwOp::Mul: for (size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i]; break;
    case EwOp::Div: for (size_t i = 0; i < n; ++i) ov[i] = av[i] / bv[i]; break;
  }
  if (detail::want_grad<T>({&a, &b})) {
    auto pa = a.impl(), pb = b.impl();
    detail::record(out, {pa, pb}, [op, pa, pb](TensorImpl<T>& self) {
      const size_t n = self.grad.size();
      if (pa->requires_grad) {
        pa->ensure_grad();
        switch (op) {
          case EwOp::Add:
          case EwOp::Sub:
            for (size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i];
            break;
          case EwOp::Mul:
            for (size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i] * pb->data[i];
            break;
          case EwOp::Div:
            for (size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i] / pb->data[i];
            break;
        }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        switch (op) {
          case EwOp::Add:
            for (size_t i = 0; i < n; ++i) pb->grad[i] += self.grad[i];
            break;
          case EwOp::Sub:
            for (size_t i = 0; i < n; ++i) pb->grad[i] -= self.grad[i];
            break;
          case EwOp::Mul:
            for (size_t i = 0; i < n; ++i) pb->grad[i] += self.grad[i] * pa->data[i];
            break;
          case EwOp::Div:
            for (size_t i = 0; i < n; ++i)
              pb->grad[i] -= self.grad[i] * pa->data[i] / (pb->data[i] * pb->data[i]);
            break;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, T scalar) {
  Tensor<T> out = Tensor<T>::uninit(a.shape());
  const auto& av = a.data();
  auto& ov = out.data();
  const size_t n = av.size();
  switch (op) {
    case EwOp::Add: for (size_t i = 0; i < n; ++i) ov[i] = av[i] + scalar; break;
    case EwOp::Sub: for (size_t i = 0; i < n; ++i) ov[i] = av[i] - scalar; break;
    case EwOp::Mul: for (size_t i = 0; i < n; ++i) ov[i] = av[i] * scalar; break;
    case EwOp::Div: for (size_t i = 0; i < n; ++i) ov[i] = av[i] / scalar; break;
  }
  if (detail::want_grad<T>({&a})) {
    auto pa = a.impl();
    detail::record(out, {pa}, [op, scalar, pa](TensorImpl<T>& self) {
      pa->ensure_grad();
      const size_t n = self.grad.size();
      switch (op) {
        case EwOp::Add:
        case EwOp::Sub:
          for (size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i];
          break;
        case EwOp::Mul:
          for (size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i] * scalar;
          break;
        case EwOp::Div:
          for (size_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i] / scalar;
          break;
      }
    });
  }
  return out;
}

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::Add, a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::Sub, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::Mul, a, b); }
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(EwOp::Div, a, b); }
template <typename T> Tensor<T> add(const Tensor<T>& a, T s) { return elementwise(EwOp::Add, a, s); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, T s) { return elementwise(EwOp::Sub, a, s); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, T s) { return elementwise(EwOp::Mul, a, s); }
template <typename T> Tensor<T> div(const Tensor<T>& a, T s) { return elementwise(EwOp::Div, a, s); }

// ---------------------------------------------------------------------------
// batched matmul: [B,M,K] x [B,K,N] -> [B,M,N]

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3)
    fail("matmul: expected rank-3 tensors, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int64_t B = a.dim(0), M = a.dim(1), K = a.dim(2);
  if (b.dim(0) != B || b.dim(1) != K)
    fail("matmul: dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t N = b.dim(2);
  Tensor<T> out = Tensor<T>::uninit({B, M, N});
  for (int64_t i = 0; i < B; ++i)
    gemm_nn(M, N, K, a.data().data() + i * M * K, b.data().data() + i * K * N,
            out.data().data() + i * M * N, false);
  if (detail::want_grad<T>({&a, &b})) {
    auto pa = a.impl(), pb = b.impl();
    detail::record(out, {pa, pb}, [B, M, K, N, pa, pb](TensorImpl<T>& self) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (int64_t i = 0; i < B; ++i)  // dA = dY * B^T
          gemm_abt(M, K, N, self.grad.data() + i * M * N, pb->data.data() + i * K * N,
                   pa->grad.data() + i * M * K, true);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int64_t i = 0; i < B; ++i)  // dB = A^T * dY
          gemm_atb(K, N, M, pa->data.data() + i * M * K, self.grad.data() + i * M * N,
                   pb->grad.data() + i * K * N, true);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax along an axis, max-subtracted

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) fail("softmax: invalid axis");
  for (T v : x.data())
    if (!std::isfinite(static_cast<double>(v))) fail("softmax: non-finite input");
  const Shape& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
  const int64_t L = s[static_cast<size_t>(axis)];
  Tensor<T> out = Tensor<T>::uninit(s);
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * L * inner + in;
      T mx = xv[static_cast<size_t>(base)];
      for (int64_t l = 1; l < L; ++l) mx = std::max(mx, xv[static_cast<size_t>(base + l * inner)]);
      T sum = 0;
      for (int64_t l = 0; l < L; ++l) {
        const T e = std::exp(xv[static_cast<size_t>(base + l * inner)] - mx);
        ov[static_cast<size_t>(base + l * inner)] = e;
        sum += e;
      }
      for (int64_t l = 0; l < L; ++l) ov[static_cast<size_t>(base + l * inner)] /= sum;
    }
  }
  if (detail::want_grad<T>({&x})) {
    auto px = x.impl();
    detail::record(out, {px}, [outer, inner, L, px](TensorImpl<T>& self) {
      px->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * L * inner + in;
          T dot = 0;
          for (int64_t l = 0; l < L; ++l) {
            const size_t i = static_cast<size_t>(base + l * inner);
            dot += self.grad[i] * self.data[i];
          }
          for (int64_t l = 0; l < L; ++l) {
            const size_t i = static_cast<size_t>(base + l * inner);
            px->grad[i] += self.data[i] * (self.grad[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (numel_of(shape) != x.numel())
    fail("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<T> out;
  out.impl()->shape = shape;
  out.impl()->data = x.data();
  if (detail::want_grad<T>({&x})) {
    auto px = x.impl();
    detail::record(out, {px}, [px](TensorImpl<T>& self) { detail::accumulate(*px, self.grad); });
  }
  return out;
}

inline std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] = st[static_cast<size_t>(i + 1)] * s[static_cast<size_t>(i + 1)];
  return st;
}

namespace detail {

// dst[i] = src[perm-mapped i]; used forward and (with inverse perm) backward.
// Axes that keep their trailing identity position are merged into contiguous
// runs so the odometer moves whole blocks.
template <typename T>
void permute_copy(const Shape& in_shape, const std::vector<int>& axes,
                  const T* src, T* dst) {
  const int r = static_cast<int>(in_shape.size());
  int suffix = 0;
  while (suffix < r && axes[static_cast<size_t>(r - 1 - suffix)] == r - 1 - suffix) ++suffix;
  int64_t run = 1;
  for (int i = r - suffix; i < r; ++i) run *= in_shape[static_cast<size_t>(i)];
  const int rr = r - suffix;
  if (rr == 0) {
    std::copy_n(src, run, dst);
    return;
  }
  Shape out_shape(static_cast<size_t>(rr));
  for (int i = 0; i < rr; ++i)
    out_shape[static_cast<size_t>(i)] = in_shape[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  const auto in_st = strides_of(in_shape);
  std::vector<int64_t> step(static_cast<size_t>(rr));
  for (int i = 0; i < rr; ++i)
    step[static_cast<size_t>(i)] = in_st[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  std::vector<int64_t> idx(static_cast<size_t>(rr), 0);
  int64_t blocks = 1;
  for (int64_t dim : out_shape) blocks *= dim;
  int64_t src_off = 0;
  for (int64_t o = 0; o < blocks; ++o) {
    std::copy_n(src + src_off, run, dst + o * run);
    for (int d = rr - 1; d >= 0; --d) {
      src_off += step[static_cast<size_t>(d)];
      if (++idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
      src_off -= step[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) fail("permute: axes length != rank");
  std::vector<bool> used(static_cast<size_t>(r), false);
  for (int a : axes) {
    if (a < 0 || a >= r || used[static_cast<size_t>(a)]) fail("permute: invalid axes");
    used[static_cast<size_t>(a)] = true;
  }
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);
  Tensor<T> out = Tensor<T>::uninit(out_shape);
  detail::permute_copy(x.shape(), axes, x.data().data(), out.data().data());
  if (detail::want_grad<T>({&x})) {
    auto px = x.impl();
    std::vector<int> inv(axes.size());
    for (int i = 0; i < r; ++i) inv[static_cast<size_t>(axes[static_cast<size_t>(i)])] = i;
    Shape oshape = out_shape;
    detail::record(out, {px}, [px, inv, oshape](TensorImpl<T>& self) {
      px->ensure_grad();
      std::vector<T> tmp(self.grad.size());
      detail::permute_copy(oshape, inv, self.grad.data(), tmp.data());
      for (size_t i = 0; i < tmp.size(); ++i) px->grad[i] += tmp[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) fail("concat: no inputs");
  const int r = parts[0].rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail("concat: invalid axis");
  Shape out_shape = parts[0].shape();
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) fail("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.dim(i) != out_shape[static_cast<size_t>(i)])
        fail("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(out_shape));
    total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = total;
  Tensor<T> out = Tensor<T>::uninit(out_shape);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<size_t>(i)];
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t len = p.dim(axis) * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * len, len,
                  out.data().data() + o * total * inner + off);
    off += len;
  }
  bool want = grad_mode();
  if (want) {
    bool any = false;
    for (const auto& p : parts) any = any || p.impl()->requires_grad;
    want = any;
  }
  if (want) {
    std::vector<std::shared_ptr<TensorImpl<T>>> ps;
    for (const auto& p : parts) ps.push_back(p.impl());
    detail::record(out, ps, [ps, outer, inner, total](TensorImpl<T>& self) {
      int64_t off = 0;
      for (auto& p : ps) {
        const int64_t len = (p->numel() / (outer * inner)) * inner;
        if (p->requires_grad) {
          p->ensure_grad();
          for (int64_t o = 0; o < outer; ++o) {
            const T* g = self.grad.data() + o * total * inner + off;
            T* dst = p->grad.data() + o * len;
            for (int64_t i = 0; i < len; ++i) dst[i] += g[i];
          }
        }
        off += len;
      }
    });
  }
  return out;
}

// contiguous slice along one axis
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, int64_t start, int64_t length) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail("narrow: invalid axis");
  if (start < 0 || length <= 0 || start + length > x.dim(axis))
    fail("narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
         ") out of bounds for dim " + std::to_string(x.dim(axis)));
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = length;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  const int64_t D = x.dim(axis);
  Tensor<T> out = Tensor<T>::uninit(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + (o * D + start) * inner, length * inner,
                out.data().data() + o * length * inner);
  if (detail::want_grad<T>({&x})) {
    auto px = x.impl();
    detail::record(out, {px}, [px, outer, inner, D, start, length](TensorImpl<T>& self) {
      px->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        const T* g = self.grad.data() + o * length * inner;
        T* dst = px->grad.data() + (o * D + start) * inner;
        for (int64_t i = 0; i < length * inner; ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, int axis, int64_t parts) {
  if (axis < 0) axis += x.rank();
  if (parts <= 0 || x.dim(axis) % parts != 0)
    fail("split: dim " + std::to_string(x.dim(axis)) + " not divisible into " + std::to_string(parts));
  const int64_t step = x.dim(axis) / parts;
  std::vector<Tensor<T>> out;
  for (int64_t i = 0; i < parts; ++i) out.push_back(narrow(x, axis, i * step, step));
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  Tensor<T> out = Tensor<T>::from({s}, {1});
  if (detail::want_grad<T>({&x})) {
    auto px = x.impl();
    detail::record(out, {px}, [px](TensorImpl<T>& self) {
      px->ensure_grad();
      const T g = self.grad[0];
      for (auto& v : px->grad) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return div(sum_all(x), static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail("sum_axis: invalid axis");
  Shape out_shape;
  for (int i = 0; i < r; ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  const int64_t L = x.dim(axis);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t l = 0; l < L; ++l) {
      const T* src = x.data().data() + (o * L + l) * inner;
      T* dst = out.data().data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  if (detail::want_grad<T>({&x})) {
    auto px = x.impl();
    detail::record(out, {px}, [px, outer, inner, L](TensorImpl<T>& self) {
      px->ensure_grad();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t l = 0; l < L; ++l) {
          const T* g = self.grad.data() + o * inner;
          T* dst = px->grad.data() + (o * L + l) * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
  const int a = axis < 0 ? axis + x.rank() : axis;
  if (a < 0 || a >= x.rank()) fail("mean_axis: invalid axis");
  return div(sum_axis(x, a), static_cast<T>(x.dim(a)));
}

// ---------------------------------------------------------------------------
// unary math

template <typename T>
Tensor<T> sqrt_t(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  for (size_t i = 0; i < x.data().size(); ++i) out.data()[i] = std::sqrt(x.data()[i]);
  if (detail::want_grad<T>({&x})) {
    auto px = x.impl();
    detail::record(out, {px}, [px](TensorImpl<T>& self) {
      px->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        px->grad[i] += self.grad[i] / (T(2) * self.data[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> exp_t(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  for (size_t i = 0; i < x.data().size(); ++i) out.data()[i] = std::exp(x.data()[i]);
  if (detail::want_grad<T>({&x})) {
    auto px = x.impl();
    detail::record(out, {px}, [px](TensorImpl<T>& self) {
      px->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        px->grad[i] += self.grad[i] * self.data[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (size_t i = 0; i < xv.size(); ++i) {
    const T s = T(1) / (T(1) + std::exp(-xv[i]));
    ov[i] = xv[i] * s;
  }
  if (detail::want_grad<T>({&x})) {
    auto px = x.impl();
    detail::record(out, {px}, [px](TensorImpl<T>& self) {
      px->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        const T xi = px->data[i];
        const T s = T(1) / (T(1) + std::exp(-xi));
        px->grad[i] += self.grad[i] * (s + xi * s * (T(1) - s));
      }
    });
  }
  return out;
}

// train-mode inverted dropout; mask drawn once at forward time
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, RngState& rng) {
  if (p <= 0.0) return mul(x, T(1));  // keep the node so graphs have stable structure
  if (p >= 1.0) fail("dropout: p must be < 1");
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<uint8_t>>(x.data().size());
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  for (size_t i = 0; i < x.data().size(); ++i) {
    const bool keep = rng.uniform01() >= p;
    (*mask)[i] = keep;
    out.data()[i] = keep ? x.data()[i] * scale : T(0);
  }
  if (detail::want_grad<T>({&x})) {
    auto px = x.impl();
    detail::record(out, {px}, [px, mask, scale](TensorImpl<T>& self) {
      px->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        if ((*mask)[i]) px->grad[i] += self.grad[i] * scale;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// group normalization over x[N, C, *spatial]

inline int group_count(int64_t channels, int max_groups = 32) {
  const int cap = static_cast<int>(std::min<int64_t>(channels, max_groups));
  for (int g = cap; g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = static_cast<T>(1e-5)) {
  if (x.rank() < 2) fail("group_norm: need at least [N,C]");
  const int64_t N = x.dim(0), C = x.dim(1);
  if (C % groups != 0) fail("group_norm: channels not divisible by groups");
  if (gamma.numel() != C || beta.numel() != C) fail("group_norm: affine params must have C elements");
  int64_t spatial = 1;
  for (int i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
  const int64_t cg = C / groups;
  const int64_t m = cg * spatial;  // elements per (sample, group)
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(N * groups));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(N * groups));
  const T* xv = x.data().data();
  T* ov = out.data().data();
  const T* gv = gamma.data().data();
  const T* bv = beta.data().data();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t g = 0; g < groups; ++g) {
      const int64_t base = (n * C + g * cg) * spatial;
      T mu = 0;
      for (int64_t i = 0; i < m; ++i) mu += xv[base + i];
      mu /= static_cast<T>(m);
      T var = 0;
      for (int64_t i = 0; i < m; ++i) {
        const T d = xv[base + i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(m);
      const T rs = T(1) / std::sqrt(var + eps);
      (*mean)[static_cast<size_t>(n * groups + g)] = mu;
      (*rstd)[static_cast<size_t>(n * groups + g)] = rs;
      for (int64_t c = 0; c < cg; ++c) {
        const T w = gv[g * cg + c], b = bv[g * cg + c];
        const int64_t off = base + c * spatial;
        for (int64_t i = 0; i < spatial; ++i)
          ov[off + i] = (xv[off + i] - mu) * rs * w + b;
      }
    }
  }
  if (detail::want_grad<T>({&x, &gamma, &beta})) {
    auto px = x.impl(), pg = gamma.impl(), pb = beta.impl();
    const int64_t G = groups;
    detail::record(out, {px, pg, pb},
                   [px, pg, pb, mean, rstd, N, C, G, cg, spatial, m](TensorImpl<T>& self) {
      const T* xv = px->data.data();
      const T* gv = pg->data.data();
      const T* dy = self.grad.data();
      if (pg->requires_grad) pg->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      if (px->requires_grad) px->ensure_grad();
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t g = 0; g < G; ++g) {
          const int64_t base = (n * C + g * cg) * spatial;
          const T mu = (*mean)[static_cast<size_t>(n * G + g)];
          const T rs = (*rstd)[static_cast<size_t>(n * G + g)];
          if (pg->requires_grad || pb->requires_grad) {
            for (int64_t c = 0; c < cg; ++c) {
              const int64_t off = base + c * spatial;
              T dg = 0, db = 0;
              for (int64_t i = 0; i < spatial; ++i) {
                const T xh = (xv[off + i] - mu) * rs;
                dg += dy[off + i] * xh;
                db += dy[off + i];
              }
              if (pg->requires_grad) pg->grad[static_cast<size_t>(g * cg + c)] += dg;
              if (pb->requires_grad) pb->grad[static_cast<size_t>(g * cg + c)] += db;
            }
          }
          if (px->requires_grad) {
            // dL/dxhat = dy * gamma; dx = rs * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
            T s1 = 0, s2 = 0;
            for (int64_t c = 0; c < cg; ++c) {
              const T w = gv[g * cg + c];
              const int64_t off = base + c * spatial;
              for (int64_t i = 0; i < spatial; ++i) {
                const T dxh = dy[off + i] * w;
                const T xh = (xv[off + i] - mu) * rs;
                s1 += dxh;
                s2 += dxh * xh;
              }
            }
            s1 /= static_cast<T>(m);
            s2 /= static_cast<T>(m);
            for (int64_t c = 0; c < cg; ++c) {
              const T w = gv[g * cg + c];
              const int64_t off = base + c * spatial;
              for (int64_t i = 0; i < spatial; ++i) {
                const T dxh = dy[off + i] * w;
                const T xh = (xv[off + i] - mu) * rs;
                px->grad[off + i] += rs * (dxh - s1 - xh * s2);
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pointwise (1x1) channel mixing: x[N,C,L], w[Co,C], b[Co] -> [N,Co,L]

template <typename T>
Tensor<T> channel_linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 3 || w.rank() != 2) fail("channel_linear: expected x[N,C,L], w[Co,C]");
  const int64_t N = x.dim(0), C = x.dim(1), L = x.dim(2), Co = w.dim(0);
  if (w.dim(1) != C) fail("channel_linear: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  if (b.numel() != Co) fail("channel_linear: bias size mismatch");
  Tensor<T> out = Tensor<T>::uninit({N, Co, L});
  for (int64_t n = 0; n < N; ++n) {
    T* y = out.data().data() + n * Co * L;
    gemm_nn(Co, L, C, w.data().data(), x.data().data() + n * C * L, y, false);
    for (int64_t co = 0; co < Co; ++co) {
      const T bias = b.data()[static_cast<size_t>(co)];
      for (int64_t l = 0; l < L; ++l) y[co * L + l] += bias;
    }
  }
  if (detail::want_grad<T>({&x, &w, &b})) {
    auto px = x.impl(), pw = w.impl(), pb = b.impl();
    detail::record(out, {px, pw, pb}, [px, pw, pb, N, C, L, Co](TensorImpl<T>& self) {
      if (pw->requires_grad) {
        pw->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
          gemm_abt(Co, C, L, self.grad.data() + n * Co * L, px->data.data() + n * C * L,
                   pw->grad.data(), true);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t co = 0; co < Co; ++co) {
            const T* g = self.grad.data() + (n * Co + co) * L;
            T s = 0;
            for (int64_t l = 0; l < L; ++l) s += g[l];
            pb->grad[static_cast<size_t>(co)] += s;
          }
      }
      if (px->requires_grad) {
        px->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
          gemm_atb(C, L, Co, pw->data.data(), self.grad.data() + n * Co * L,
                   px->grad.data() + n * C * L, true);
      }
    });
  }
  return out;
}

// fully connected: x[N,C] -> [N,Co]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2) fail("linear: expected x[N,C]");
  Tensor<T> x3 = reshape(x, {x.dim(0), x.dim(1), 1});
  Tensor<T> y = channel_linear(x3, w, b);
  return reshape(y, {x.dim(0), w.dim(0)});
}

// broadcast-add a [N,C] vector over trailing dims of x[N,C,...]
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& v) {
  if (x.rank() < 2 || v.rank() != 2 || x.dim(0) != v.dim(0) || x.dim(1) != v.dim(1))
    fail("add_channel_bias: need x[N,C,...] and v[N,C], got " + shape_str(x.shape()) +
         " and " + shape_str(v.shape()));
  const int64_t N = x.dim(0), C = x.dim(1);
  int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  Tensor<T> out = Tensor<T>::uninit(x.shape());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T add = v.data()[static_cast<size_t>(n * C + c)];
      const T* src = x.data().data() + (n * C + c) * inner;
      T* dst = out.data().data() + (n * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] = src[i] + add;
    }
  if (detail::want_grad<T>({&x, &v})) {
    auto px = x.impl(), pv = v.impl();
    detail::record(out, {px, pv}, [px, pv, N, C, inner](TensorImpl<T>& self) {
      if (px->requires_grad) detail::accumulate(*px, self.grad);
      if (pv->requires_grad) {
        pv->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t c = 0; c < C; ++c) {
            const T* g = self.grad.data() + (n * C + c) * inner;
            T s = 0;
            for (int64_t i = 0; i < inner; ++i) s += g[i];
            pv->grad[static_cast<size_t>(n * C + c)] += s;
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// spatial resampling on 5D [B,C,F,H,W] (last two axes only)

template <typename T>
Tensor<T> avg_pool_spatial2(const Tensor<T>& x) {
  if (x.rank() != 5) fail("avg_pool_spatial2: expected rank-5 input");
  const int64_t B = x.dim(0), C = x.dim(1), F = x.dim(2), H = x.dim(3), W = x.dim(4);
  if (H % 2 || W % 2) fail("avg_pool_spatial2: odd spatial size " + shape_str(x.shape()));
  const int64_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out = Tensor<T>::uninit({B, C, F, Ho, Wo});
  const T* xv = x.data().data();
  T* ov = out.data().data();
  const int64_t planes = B * C * F;
  for (int64_t p = 0; p < planes; ++p) {
    const T* in = xv + p * H * W;
    T* o = ov + p * Ho * Wo;
    for (int64_t i = 0; i < Ho; ++i)
      for (int64_t j = 0; j < Wo; ++j)
        o[i * Wo + j] = (in[(2 * i) * W + 2 * j] + in[(2 * i) * W + 2 * j + 1] +
                         in[(2 * i + 1) * W + 2 * j] + in[(2 * i + 1) * W + 2 * j + 1]) /
                        T(4);
  }
  if (detail::want_grad<T>({&x})) {
    auto px = x.impl();
    detail::record(out, {px}, [px, planes, H, W, Ho, Wo](TensorImpl<T>& self) {
      px->ensure_grad();
      for (int64_t p = 0; p < planes; ++p) {
        const T* g = self.grad.data() + p * Ho * Wo;
        T* dst = px->grad.data() + p * H * W;
        for (int64_t i = 0; i < Ho; ++i)
          for (int64_t j = 0; j < Wo; ++j) {
            const T q = g[i * Wo + j] / T(4);
            dst[(2 * i) * W + 2 * j] += q;
            dst[(2 * i) * W + 2 * j + 1] += q;
            dst[(2 * i + 1) * W + 2 * j] += q;
            dst[(2 * i + 1) * W + 2 * j + 1] += q;
          }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest_spatial2(const Tensor<T>& x) {
  if (x.rank() != 5) fail("upsample_nearest_spatial2: expected rank-5 input");
  const int64_t B = x.dim(0), C = x.dim(1), F = x.dim(2), H = x.dim(3), W = x.dim(4);
  const int64_t Ho = H * 2, Wo = W * 2;
  Tensor<T> out = Tensor<T>::uninit({B, C, F, Ho, Wo});
  const T* xv = x.data().data();
  T* ov = out.data().data();
  const int64_t planes = B * C * F;
  for (int64_t p = 0; p < planes; ++p) {
    const T* in = xv + p * H * W;
    T* o = ov + p * Ho * Wo;
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j) {
        const T v = in[i * W + j];
        o[(2 * i) * Wo + 2 * j] = v;
        o[(2 * i) * Wo + 2 * j + 1] = v;
        o[(2 * i + 1) * Wo + 2 * j] = v;
        o[(2 * i + 1) * Wo + 2 * j + 1] = v;
      }
  }
  if (detail::want_grad<T>({&x})) {
    auto px = x.impl();
    detail::record(out, {px}, [px, planes, H, W, Ho, Wo](TensorImpl<T>& self) {
      px->ensure_grad();
      for (int64_t p = 0; p < planes; ++p) {
        const T* g = self.grad.data() + p * Ho * Wo;
        T* dst = px->grad.data() + p * H * W;
        for (int64_t i = 0; i < H; ++i)
          for (int64_t j = 0; j < W; ++j)
            dst[i * W + j] += g[(2 * i) * Wo + 2 * j] + g[(2 * i) * Wo + 2 * j + 1] +
                              g[(2 * i + 1) * Wo + 2 * j] + g[(2 * i + 1) * Wo + 2 * j + 1];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// timestep encoding: ts (1-indexed) -> [B, dim], [sin | cos] halves with
// frequencies 10000^(-2i/dim). Constant w.r.t. parameters, so a plain leaf.

template <typename T>
Tensor<T> sinusoidal_embedding(const std::vector<int64_t>& ts, int64_t dim) {
  if (dim % 2 != 0) fail("sinusoidal_embedding: dim must be even");
  const int64_t B = static_cast<int64_t>(ts.size());
  const int64_t half = dim / 2;
  Tensor<T> out = Tensor<T>::zeros({B, dim});
  for (int64_t n = 0; n < B; ++n) {
    for (int64_t i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      const double a = static_cast<double>(ts[static_cast<size_t>(n)]) * freq;
      out.data()[static_cast<size_t>(n * dim + i)] = static_cast<T>(std::sin(a));
      out.data()[static_cast<size_t>(n * dim + half + i)] = static_cast<T>(std::cos(a));
    }
  }
  return out;
}

// FNV-1a over the raw bytes; used by determinism tests
template <typename T>
uint64_t bit_fingerprint(const Tensor<T>& t) {
  uint64_t h = 1469598103934665603ull;
  const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data().data());
  const size_t n = t.data().size() * sizeof(T);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace sfunet
