#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "udfs/errors.hpp"
#include "udfs/rng.hpp"

// Dense row-major tensors with a reverse-mode gradient tape. Ops build a
// graph of shared nodes; backward() walks it once in reverse topological
// order and accumulates gradients additively. Scalar type is a template
// parameter: float for training/inference, double for finite-difference
// checks in tests. Reductions (softmax, layer_norm, mean, distances)
// accumulate in double regardless of storage type.

namespace udfs {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

namespace detail {

// Splits a shape into (outer, n, inner) extents around `axis` so that the
// elements of one reduction lane are {base + i*inner : i in [0,n)}.
inline void axis_spans(const Shape& s, int axis, size_t* outer, size_t* n, size_t* inner) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  *outer = 1;
  *inner = 1;
  for (int i = 0; i < axis; ++i) *outer *= static_cast<size_t>(s[i]);
  *n = static_cast<size_t>(s[axis]);
  for (size_t i = axis + 1; i < s.size(); ++i) *inner *= static_cast<size_t>(s[i]);
}

// c[m,n] += sum_k a[m,k] * b[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* arow = a + static_cast<size_t>(i) * K;
    T* crow = c + static_cast<size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const T av = arow[k];
      const T* brow = b + static_cast<size_t>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += sum_k a[m,k] * b[n,k]   (b stored N x K)
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* arow = a + static_cast<size_t>(i) * K;
    T* crow = c + static_cast<size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const T* brow = b + static_cast<size_t>(j) * K;
      T acc = 0;
      for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
      crow[j] += acc;
    }
  }
}

// c[m,n] += sum_k a[k,m] * b[k,n]   (a stored K x M)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int M, int K, int N) {
  for (int k = 0; k < K; ++k) {
    const T* arow = a + static_cast<size_t>(k) * M;
    const T* brow = b + static_cast<size_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      const T av = arow[i];
      T* crow = c + static_cast<size_t>(i) * N;
      for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward;

  size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(std::shared_ptr<TensorNode<T>> n) : n_(std::move(n)) {}

  static TensorT zeros(const Shape& s, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = s;
    n->value.assign(shape_numel(s), T(0));
    n->requires_grad = requires_grad;
    return TensorT(std::move(n));
  }

  static TensorT from_data(const Shape& s, std::vector<T> data, bool requires_grad = false) {
    if (data.size() != shape_numel(s))
      throw ShapeMismatch("from_data: " + shape_str(s) + " vs " +
                          std::to_string(data.size()) + " values");
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = s;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return TensorT(std::move(n));
  }

  static TensorT param(const Shape& s, std::vector<T> data) {
    return from_data(s, std::move(data), true);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  size_t numel() const { return n_->numel(); }
  std::vector<T>& data() { return n_->value; }
  const std::vector<T>& data() const { return n_->value; }
  bool requires_grad() const { return n_->requires_grad; }

  std::vector<T>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }

  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1)
      throw ShapeMismatch("item() on non-scalar tensor " + shape_str(shape()));
    return n_->value[0];
  }

  const std::shared_ptr<TensorNode<T>>& node() const { return n_; }

 private:
  std::shared_ptr<TensorNode<T>> n_;
};

namespace detail {

template <typename T>
std::shared_ptr<TensorNode<T>> make_node(Shape shape, size_t count) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->value.assign(count, T(0));
  return n;
}

// rhs broadcasts onto lhs when its shape equals a suffix of lhs's shape.
inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  size_t off = big.size() - small.size();
  for (size_t i = 0; i < small.size(); ++i)
    if (small[i] != big[off + i]) return false;
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------

// 2-D (M,K)@(K,N) or batched 3-D (B,M,K)@(B,K,N).
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  size_t batches;
  int M, K, N;
  if (sa.size() == 2 && sb.size() == 2) {
    if (sa[1] != sb[0])
      throw ShapeMismatch("matmul: " + shape_str(sa) + " vs " + shape_str(sb));
    batches = 1;
    M = sa[0];
    K = sa[1];
    N = sb[1];
  } else if (sa.size() == 3 && sb.size() == 3) {
    if (sa[0] != sb[0] || sa[2] != sb[1])
      throw ShapeMismatch("matmul: " + shape_str(sa) + " vs " + shape_str(sb));
    batches = static_cast<size_t>(sa[0]);
    M = sa[1];
    K = sa[2];
    N = sb[2];
  } else {
    throw ShapeMismatch("matmul: " + shape_str(sa) + " vs " + shape_str(sb));
  }

  Shape out_shape = (sa.size() == 2) ? Shape{M, N} : Shape{static_cast<int>(batches), M, N};
  auto out = detail::make_node<T>(out_shape, batches * static_cast<size_t>(M) * N);
  const size_t a_stride = static_cast<size_t>(M) * K;
  const size_t b_stride = static_cast<size_t>(K) * N;
  const size_t c_stride = static_cast<size_t>(M) * N;
  for (size_t bi = 0; bi < batches; ++bi)
    detail::gemm_nn(a.data().data() + bi * a_stride, b.data().data() + bi * b_stride,
                    out->value.data() + bi * c_stride, M, K, N);

  out->requires_grad = a.requires_grad() || b.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node(), b.node()};
    auto* ap = a.node().get();
    auto* bp = b.node().get();
    out->backward = [ap, bp, batches, M, K, N, a_stride, b_stride, c_stride](TensorNode<T>& o) {
      if (ap->requires_grad) {
        ap->ensure_grad();
        for (size_t bi = 0; bi < batches; ++bi)
          detail::gemm_nt(o.grad.data() + bi * c_stride, bp->value.data() + bi * b_stride,
                          ap->grad.data() + bi * a_stride, M, N, K);
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        for (size_t bi = 0; bi < batches; ++bi)
          detail::gemm_tn(ap->value.data() + bi * a_stride, o.grad.data() + bi * c_stride,
                          bp->grad.data() + bi * b_stride, N, M, K);
      }
    };
  }
  return TensorT<T>(out);
}

// Elementwise a+b; b may broadcast when its shape is a suffix of a's.
template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (!detail::is_suffix(sb, sa))
    throw ShapeMismatch("add: " + shape_str(sa) + " vs " + shape_str(sb));
  const size_t bn = b.numel();
  auto out = detail::make_node<T>(sa, a.numel());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + bv[i % bn];

  out->requires_grad = a.requires_grad() || b.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node(), b.node()};
    auto* ap = a.node().get();
    auto* bp = b.node().get();
    out->backward = [ap, bp, bn](TensorNode<T>& o) {
      if (ap->requires_grad) {
        ap->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) ap->grad[i] += o.grad[i];
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) bp->grad[i % bn] += o.grad[i];
      }
    };
  }
  return TensorT<T>(out);
}

// Elementwise a*b with the same suffix-broadcast rule as add.
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (!detail::is_suffix(sb, sa))
    throw ShapeMismatch("mul: " + shape_str(sa) + " vs " + shape_str(sb));
  const size_t bn = b.numel();
  auto out = detail::make_node<T>(sa, a.numel());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * bv[i % bn];

  out->requires_grad = a.requires_grad() || b.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node(), b.node()};
    auto* ap = a.node().get();
    auto* bp = b.node().get();
    out->backward = [ap, bp, bn](TensorNode<T>& o) {
      if (ap->requires_grad) {
        ap->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i)
          ap->grad[i] += o.grad[i] * bp->value[i % bn];
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i)
          bp->grad[i % bn] += o.grad[i] * ap->value[i];
      }
    };
  }
  return TensorT<T>(out);
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, double c) {
  auto out = detail::make_node<T>(a.shape(), a.numel());
  const auto& av = a.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = static_cast<T>(av[i] * c);

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap, c](TensorNode<T>& o) {
      ap->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i)
        ap->grad[i] += static_cast<T>(o.grad[i] * c);
    };
  }
  return TensorT<T>(out);
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
  size_t outer, n, inner;
  detail::axis_spans(a.shape(), axis, &outer, &n, &inner);
  auto out = detail::make_node<T>(a.shape(), a.numel());
  const auto& av = a.data();
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * n * inner + in;
      double mx = -HUGE_VAL;
      for (size_t i = 0; i < n; ++i) mx = std::max(mx, static_cast<double>(av[base + i * inner]));
      double sum = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double e = std::exp(static_cast<double>(av[base + i * inner]) - mx);
        out->value[base + i * inner] = static_cast<T>(e);
        sum += e;
      }
      for (size_t i = 0; i < n; ++i)
        out->value[base + i * inner] = static_cast<T>(out->value[base + i * inner] / sum);
    }
  }

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap, outer, n, inner](TensorNode<T>& o) {
      ap->ensure_grad();
      for (size_t ou = 0; ou < outer; ++ou) {
        for (size_t in = 0; in < inner; ++in) {
          const size_t base = ou * n * inner + in;
          double dot = 0.0;
          for (size_t i = 0; i < n; ++i)
            dot += static_cast<double>(o.grad[base + i * inner]) * o.value[base + i * inner];
          for (size_t i = 0; i < n; ++i) {
            const size_t k = base + i * inner;
            ap->grad[k] += static_cast<T>(o.value[k] * (static_cast<double>(o.grad[k]) - dot));
          }
        }
      }
    };
  }
  return TensorT<T>(out);
}

template <typename T>
TensorT<T> log_softmax(const TensorT<T>& a, int axis) {
  size_t outer, n, inner;
  detail::axis_spans(a.shape(), axis, &outer, &n, &inner);
  auto out = detail::make_node<T>(a.shape(), a.numel());
  const auto& av = a.data();
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * n * inner + in;
      double mx = -HUGE_VAL;
      for (size_t i = 0; i < n; ++i) mx = std::max(mx, static_cast<double>(av[base + i * inner]));
      double sum = 0.0;
      for (size_t i = 0; i < n; ++i) sum += std::exp(static_cast<double>(av[base + i * inner]) - mx);
      const double lse = mx + std::log(sum);
      for (size_t i = 0; i < n; ++i)
        out->value[base + i * inner] = static_cast<T>(static_cast<double>(av[base + i * inner]) - lse);
    }
  }

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap, outer, n, inner](TensorNode<T>& o) {
      ap->ensure_grad();
      for (size_t ou = 0; ou < outer; ++ou) {
        for (size_t in = 0; in < inner; ++in) {
          const size_t base = ou * n * inner + in;
          double gsum = 0.0;
          for (size_t i = 0; i < n; ++i) gsum += static_cast<double>(o.grad[base + i * inner]);
          for (size_t i = 0; i < n; ++i) {
            const size_t k = base + i * inner;
            ap->grad[k] += static_cast<T>(static_cast<double>(o.grad[k]) -
                                          std::exp(static_cast<double>(o.value[k])) * gsum);
          }
        }
      }
    };
  }
  return TensorT<T>(out);
}

// Normalization only (pre-affine); population variance along `axis`.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& a, int axis, double eps = 1e-5) {
  size_t outer, n, inner;
  detail::axis_spans(a.shape(), axis, &outer, &n, &inner);
  auto out = detail::make_node<T>(a.shape(), a.numel());
  std::vector<double> inv_std(outer * inner);
  const auto& av = a.data();
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * n * inner + in;
      double mean = 0.0;
      for (size_t i = 0; i < n; ++i) mean += static_cast<double>(av[base + i * inner]);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (size_t i = 0; i < n; ++i) {
        double d = static_cast<double>(av[base + i * inner]) - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[o * inner + in] = is;
      for (size_t i = 0; i < n; ++i)
        out->value[base + i * inner] =
            static_cast<T>((static_cast<double>(av[base + i * inner]) - mean) * is);
    }
  }

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap, outer, n, inner, inv_std = std::move(inv_std)](TensorNode<T>& o) {
      ap->ensure_grad();
      for (size_t ou = 0; ou < outer; ++ou) {
        for (size_t in = 0; in < inner; ++in) {
          const size_t base = ou * n * inner + in;
          const double is = inv_std[ou * inner + in];
          double gmean = 0.0, gxhat = 0.0;
          for (size_t i = 0; i < n; ++i) {
            const size_t k = base + i * inner;
            gmean += static_cast<double>(o.grad[k]);
            gxhat += static_cast<double>(o.grad[k]) * o.value[k];
          }
          gmean /= static_cast<double>(n);
          gxhat /= static_cast<double>(n);
          for (size_t i = 0; i < n; ++i) {
            const size_t k = base + i * inner;
            ap->grad[k] += static_cast<T>(
                is * (static_cast<double>(o.grad[k]) - gmean - o.value[k] * gxhat));
          }
        }
      }
    };
  }
  return TensorT<T>(out);
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
  auto out = detail::make_node<T>(a.shape(), a.numel());
  const auto& av = a.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] > T(0) ? av[i] : T(0);

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap](TensorNode<T>& o) {
      ap->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i)
        if (ap->value[i] > T(0)) ap->grad[i] += o.grad[i];
    };
  }
  return TensorT<T>(out);
}

// Inverted dropout; identity when not training or p == 0.
template <typename T>
TensorT<T> dropout(const TensorT<T>& a, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw InvalidConfig("dropout p must be < 1, got " + std::to_string(p));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(a.numel());
  for (auto& m : mask) m = (rng.uniform() >= p) ? keep_scale : T(0);

  auto out = detail::make_node<T>(a.shape(), a.numel());
  const auto& av = a.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * mask[i];

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap, mask = std::move(mask)](TensorNode<T>& o) {
      ap->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) ap->grad[i] += o.grad[i] * mask[i];
    };
  }
  return TensorT<T>(out);
}

// table (V,d), indices length B -> (B,d).
template <typename T>
TensorT<T> embedding_lookup(const TensorT<T>& table, const std::vector<int>& indices) {
  const Shape& ts = table.shape();
  if (ts.size() != 2) throw ShapeMismatch("embedding_lookup: table " + shape_str(ts) + " vs 2-D");
  const int V = ts[0], d = ts[1];
  auto out = detail::make_node<T>(Shape{static_cast<int>(indices.size()), d},
                                  indices.size() * static_cast<size_t>(d));
  for (size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= V)
      throw ShapeMismatch("embedding_lookup: index " + std::to_string(idx) + " vs table " +
                          shape_str(ts));
    std::copy_n(table.data().data() + static_cast<size_t>(idx) * d, d,
                out->value.data() + i * d);
  }

  out->requires_grad = table.requires_grad();
  if (out->requires_grad) {
    out->parents = {table.node()};
    auto* tp = table.node().get();
    out->backward = [tp, indices, d](TensorNode<T>& o) {
      tp->ensure_grad();
      for (size_t i = 0; i < indices.size(); ++i) {
        T* dst = tp->grad.data() + static_cast<size_t>(indices[i]) * d;
        const T* src = o.grad.data() + i * d;
        for (int k = 0; k < d; ++k) dst[k] += src[k];
      }
    };
  }
  return TensorT<T>(out);
}

// Keeps elements where mask is true, replaces the rest with `value`.
// Mask size must equal numel or a suffix extent of the shape.
template <typename T>
TensorT<T> masked_fill(const TensorT<T>& a, const std::vector<uint8_t>& mask, double value) {
  const size_t an = a.numel();
  if (mask.empty() || an % mask.size() != 0)
    throw ShapeMismatch("masked_fill: " + shape_str(a.shape()) + " vs mask size " +
                        std::to_string(mask.size()));
  const size_t mn = mask.size();
  auto out = detail::make_node<T>(a.shape(), an);
  const auto& av = a.data();
  for (size_t i = 0; i < an; ++i)
    out->value[i] = mask[i % mn] ? av[i] : static_cast<T>(value);

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap, mask, mn](TensorNode<T>& o) {
      ap->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i)
        if (mask[i % mn]) ap->grad[i] += o.grad[i];
    };
  }
  return TensorT<T>(out);
}

// Reduces `axis` away; double accumulation.
template <typename T>
TensorT<T> mean(const TensorT<T>& a, int axis) {
  size_t outer, n, inner;
  detail::axis_spans(a.shape(), axis, &outer, &n, &inner);
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(a.shape().size()); ++i)
    if (i != axis) out_shape.push_back(a.shape()[i]);
  auto out = detail::make_node<T>(out_shape, outer * inner);
  const auto& av = a.data();
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      double acc = 0.0;
      for (size_t i = 0; i < n; ++i) acc += static_cast<double>(av[o * n * inner + i * inner + in]);
      out->value[o * inner + in] = static_cast<T>(acc / static_cast<double>(n));
    }
  }

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap, outer, n, inner](TensorNode<T>& o) {
      ap->ensure_grad();
      const T inv = static_cast<T>(1.0 / static_cast<double>(n));
      for (size_t ou = 0; ou < outer; ++ou)
        for (size_t in = 0; in < inner; ++in) {
          const T g = o.grad[ou * inner + in] * inv;
          for (size_t i = 0; i < n; ++i) ap->grad[ou * n * inner + i * inner + in] += g;
        }
    };
  }
  return TensorT<T>(out);
}

template <typename T>
TensorT<T> sum_axis(const TensorT<T>& a, int axis) {
  size_t outer, n, inner;
  detail::axis_spans(a.shape(), axis, &outer, &n, &inner);
  TensorT<T> m = mean(a, axis);
  return scale(m, static_cast<double>(n));
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis) {
  if (parts.empty()) throw EmptyBatch("concat: no tensors");
  const Shape& s0 = parts[0].shape();
  Shape out_shape = s0;
  int total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size())
      throw ShapeMismatch("concat: " + shape_str(s0) + " vs " + shape_str(s));
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
      if (i != axis && s[i] != s0[i])
        throw ShapeMismatch("concat: " + shape_str(s0) + " vs " + shape_str(s));
    total += s[axis];
  }
  out_shape[axis] = total;

  size_t outer, n_out, inner;
  detail::axis_spans(out_shape, axis, &outer, &n_out, &inner);
  auto out = detail::make_node<T>(out_shape, shape_numel(out_shape));

  bool rg = false;
  for (const auto& p : parts) rg = rg || p.requires_grad();
  size_t off = 0;  // offset along the concat axis
  std::vector<size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const size_t pn = static_cast<size_t>(p.shape()[axis]);
    const auto& pv = p.data();
    for (size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data() + o * pn * inner, pn * inner,
                  out->value.data() + (o * n_out + off) * inner);
    off += pn;
  }

  out->requires_grad = rg;
  if (rg) {
    for (const auto& p : parts) out->parents.push_back(p.node());
    std::vector<size_t> sizes;
    for (const auto& p : parts) sizes.push_back(static_cast<size_t>(p.shape()[axis]));
    out->backward = [offsets, sizes, outer, n_out, inner](TensorNode<T>& o) {
      for (size_t pi = 0; pi < o.parents.size(); ++pi) {
        auto& par = *o.parents[pi];
        if (!par.requires_grad) continue;
        par.ensure_grad();
        const size_t pn = sizes[pi];
        for (size_t ou = 0; ou < outer; ++ou) {
          const T* src = o.grad.data() + (ou * n_out + offsets[pi]) * inner;
          T* dst = par.grad.data() + ou * pn * inner;
          for (size_t k = 0; k < pn * inner; ++k) dst[k] += src[k];
        }
      }
    };
  }
  return TensorT<T>(out);
}

template <typename T>
TensorT<T> slice(const TensorT<T>& a, int axis, int start, int len) {
  size_t outer, n, inner;
  detail::axis_spans(a.shape(), axis, &outer, &n, &inner);
  if (start < 0 || len < 0 || static_cast<size_t>(start + len) > n)
    throw ShapeMismatch("slice: [" + std::to_string(start) + "," + std::to_string(start + len) +
                        ") vs " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  auto out = detail::make_node<T>(out_shape, outer * len * inner);
  const auto& av = a.data();
  for (size_t o = 0; o < outer; ++o)
    std::copy_n(av.data() + (o * n + start) * inner, static_cast<size_t>(len) * inner,
                out->value.data() + o * len * inner);

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap, outer, n, inner, start, len](TensorNode<T>& o) {
      ap->ensure_grad();
      for (size_t ou = 0; ou < outer; ++ou) {
        const T* src = o.grad.data() + ou * len * inner;
        T* dst = ap->grad.data() + (ou * n + start) * inner;
        for (size_t k = 0; k < static_cast<size_t>(len) * inner; ++k) dst[k] += src[k];
      }
    };
  }
  return TensorT<T>(out);
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, const Shape& new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw ShapeMismatch("reshape: " + shape_str(a.shape()) + " vs " + shape_str(new_shape));
  auto out = detail::make_node<T>(new_shape, a.numel());
  out->value = a.data();

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap](TensorNode<T>& o) {
      ap->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) ap->grad[i] += o.grad[i];
    };
  }
  return TensorT<T>(out);
}

template <typename T>
TensorT<T> permute(const TensorT<T>& a, const std::vector<int>& perm) {
  const Shape& s = a.shape();
  if (perm.size() != s.size())
    throw ShapeMismatch("permute: " + shape_str(s) + " vs perm size " +
                        std::to_string(perm.size()));
  const int rank = static_cast<int>(s.size());
  Shape out_shape(rank);
  for (int i = 0; i < rank; ++i) out_shape[i] = s[perm[i]];

  std::vector<size_t> in_strides(rank, 1), out_strides(rank, 1);
  for (int i = rank - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * s[i + 1];
  for (int i = rank - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * out_shape[i + 1];

  // For output linear index -> input linear index.
  std::vector<size_t> map(a.numel());
  std::vector<int> idx(rank, 0);
  for (size_t lin = 0; lin < a.numel(); ++lin) {
    size_t src = 0;
    for (int i = 0; i < rank; ++i) src += static_cast<size_t>(idx[i]) * in_strides[perm[i]];
    map[lin] = src;
    for (int i = rank - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }

  auto out = detail::make_node<T>(out_shape, a.numel());
  const auto& av = a.data();
  for (size_t i = 0; i < map.size(); ++i) out->value[i] = av[map[i]];

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap, map = std::move(map)](TensorNode<T>& o) {
      ap->ensure_grad();
      for (size_t i = 0; i < o.grad.size(); ++i) ap->grad[map[i]] += o.grad[i];
    };
  }
  return TensorT<T>(out);
}

// a (B,d), b (C,d) -> (B,C) of Euclidean distances.
template <typename T>
TensorT<T> pairwise_euclidean(const TensorT<T>& a, const TensorT<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1])
    throw ShapeMismatch("pairwise_euclidean: " + shape_str(sa) + " vs " + shape_str(sb));
  const int B = sa[0], d = sa[1], C = sb[0];
  auto out = detail::make_node<T>(Shape{B, C}, static_cast<size_t>(B) * C);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < C; ++j) {
      double ssq = 0.0;
      const T* x = av.data() + static_cast<size_t>(i) * d;
      const T* y = bv.data() + static_cast<size_t>(j) * d;
      for (int k = 0; k < d; ++k) {
        double diff = static_cast<double>(x[k]) - static_cast<double>(y[k]);
        ssq += diff * diff;
      }
      out->value[static_cast<size_t>(i) * C + j] = static_cast<T>(std::sqrt(ssq));
    }
  }

  out->requires_grad = a.requires_grad() || b.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node(), b.node()};
    auto* ap = a.node().get();
    auto* bp = b.node().get();
    out->backward = [ap, bp, B, C, d](TensorNode<T>& o) {
      if (ap->requires_grad) ap->ensure_grad();
      if (bp->requires_grad) bp->ensure_grad();
      for (int i = 0; i < B; ++i) {
        for (int j = 0; j < C; ++j) {
          const double dist = static_cast<double>(o.value[static_cast<size_t>(i) * C + j]);
          if (dist < 1e-12) continue;  // subgradient 0 at coincident points
          const double g = static_cast<double>(o.grad[static_cast<size_t>(i) * C + j]) / dist;
          const T* x = ap->value.data() + static_cast<size_t>(i) * d;
          const T* y = bp->value.data() + static_cast<size_t>(j) * d;
          for (int k = 0; k < d; ++k) {
            const double diff = (static_cast<double>(x[k]) - static_cast<double>(y[k])) * g;
            if (ap->requires_grad) ap->grad[static_cast<size_t>(i) * d + k] += static_cast<T>(diff);
            if (bp->requires_grad) bp->grad[static_cast<size_t>(j) * d + k] -= static_cast<T>(diff);
          }
        }
      }
    };
  }
  return TensorT<T>(out);
}

// a (B,C), idx length B -> (B) picking a[i, idx[i]].
template <typename T>
TensorT<T> take_per_row(const TensorT<T>& a, const std::vector<int>& idx) {
  const Shape& s = a.shape();
  if (s.size() != 2 || idx.size() != static_cast<size_t>(s[0]))
    throw ShapeMismatch("take_per_row: " + shape_str(s) + " vs " + std::to_string(idx.size()) +
                        " indices");
  const int B = s[0], C = s[1];
  auto out = detail::make_node<T>(Shape{B}, static_cast<size_t>(B));
  for (int i = 0; i < B; ++i) {
    if (idx[i] < 0 || idx[i] >= C)
      throw ShapeMismatch("take_per_row: index " + std::to_string(idx[i]) + " vs " + shape_str(s));
    out->value[i] = a.data()[static_cast<size_t>(i) * C + idx[i]];
  }

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap, idx, C](TensorNode<T>& o) {
      ap->ensure_grad();
      for (size_t i = 0; i < idx.size(); ++i)
        ap->grad[i * static_cast<size_t>(C) + idx[i]] += o.grad[i];
    };
  }
  return TensorT<T>(out);
}

// a (B,d), groups length B with values in [0,n_groups) -> (n_groups,d) of
// per-group arithmetic means. Every group must be non-empty.
template <typename T>
TensorT<T> group_mean(const TensorT<T>& a, const std::vector<int>& groups, int n_groups) {
  const Shape& s = a.shape();
  if (s.size() != 2 || groups.size() != static_cast<size_t>(s[0]))
    throw ShapeMismatch("group_mean: " + shape_str(s) + " vs " + std::to_string(groups.size()) +
                        " group ids");
  const int B = s[0], d = s[1];
  std::vector<int> counts(n_groups, 0);
  for (int g : groups) {
    if (g < 0 || g >= n_groups)
      throw ShapeMismatch("group_mean: group id " + std::to_string(g) + " vs " +
                          std::to_string(n_groups) + " groups");
    counts[g]++;
  }
  for (int c = 0; c < n_groups; ++c)
    if (counts[c] == 0) throw EmptyClass("group_mean: group " + std::to_string(c) + " empty");

  auto out = detail::make_node<T>(Shape{n_groups, d}, static_cast<size_t>(n_groups) * d);
  std::vector<double> acc(static_cast<size_t>(n_groups) * d, 0.0);
  const auto& av = a.data();
  for (int i = 0; i < B; ++i) {
    double* dst = acc.data() + static_cast<size_t>(groups[i]) * d;
    const T* src = av.data() + static_cast<size_t>(i) * d;
    for (int k = 0; k < d; ++k) dst[k] += static_cast<double>(src[k]);
  }
  for (int c = 0; c < n_groups; ++c)
    for (int k = 0; k < d; ++k)
      out->value[static_cast<size_t>(c) * d + k] =
          static_cast<T>(acc[static_cast<size_t>(c) * d + k] / counts[c]);

  out->requires_grad = a.requires_grad();
  if (out->requires_grad) {
    out->parents = {a.node()};
    auto* ap = a.node().get();
    out->backward = [ap, groups, counts, d](TensorNode<T>& o) {
      ap->ensure_grad();
      for (size_t i = 0; i < groups.size(); ++i) {
        const int g = groups[i];
        const T inv = static_cast<T>(1.0 / counts[g]);
        const T* src = o.grad.data() + static_cast<size_t>(g) * d;
        T* dst = ap->grad.data() + i * static_cast<size_t>(d);
        for (int k = 0; k < d; ++k) dst[k] += src[k] * inv;
      }
    };
  }
  return TensorT<T>(out);
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Populates grads of everything reachable from `loss`. Gradients accumulate
// additively; parameters not on the tape keep zero grads (disconnected graph
// is not an error).
template <typename T>
void backward(const TensorT<T>& loss) {
  if (loss.numel() != 1)
    throw NonScalarLoss("backward on tensor of shape " + shape_str(loss.shape()));

  // Iterative post-order DFS for reverse-topological evaluation.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      TensorNode<T>* next = node->parents[child++].get();
      if (next->requires_grad && visited.insert(next).second) stack.emplace_back(next, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* node = *it;
    if (node->backward && node->requires_grad) {
      node->ensure_grad();
      node->backward(*node);
    }
  }
}

using Tensor = TensorT<float>;

}  // namespace udfs
