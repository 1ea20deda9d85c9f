#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

#include "fusionlab/autodiff.hpp"
#include "fusionlab/rng.hpp"

namespace fusionlab {

namespace detail {

template <typename T>
void require_rank(const BasicVar<T>& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(v.shape()));
  }
}

template <typename T>
void require_same_shape(const BasicVar<T>& a, const BasicVar<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

// Elementwise unary op; `deriv` sees the input and output of each element.
template <typename T, typename Fwd, typename Deriv>
BasicVar<T> unary(const BasicVar<T>& x, const char* op, Fwd fwd, Deriv deriv) {
  BasicTensor<T> out(x.shape());
  const auto in = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(in[i]);
  return make_result<T>(std::move(out), {x}, op, [deriv](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    auto g = p.grad.data();
    const auto xin = p.value.data();
    const auto yout = self.value.data();
    const auto up = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i] * deriv(xin[i], yout[i]);
  });
}

template <typename T>
T stable_sigmoid(T s) {
  if (s >= T{0}) return T{1} / (T{1} + std::exp(-s));
  const T e = std::exp(s);
  return e / (T{1} + e);
}

// log(1 + exp(s)) without overflow.
inline double softplus(double s) {
  return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
}

struct AxisView {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

inline AxisView axis_view(const Shape& s, std::size_t axis) {
  AxisView v{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace detail

// C[m×n] = A[m×k] · B[k×n]; dA = dC·Bᵀ, dB = Aᵀ·dC.
template <typename T>
BasicVar<T> matmul(const BasicVar<T>& a, const BasicVar<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  // Dot products accumulate in double in both passes.
  BasicTensor<T> out({m, n});
  const auto A = a.value().data();
  const auto B = b.value().data();
  auto C = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p)
        s += static_cast<double>(A[i * k + p]) * static_cast<double>(B[p * n + j]);
      C[i * n + j] = static_cast<T>(s);
    }
  return make_result<T>(std::move(out), {a, b}, "matmul", [m, k, n](Node<T>& self) {
    Node<T>& na = *self.parents[0];
    Node<T>& nb = *self.parents[1];
    const auto G = self.grad.data();
    if (na.requires_grad) {
      const auto Bv = nb.value.data();
      auto dA = na.grad.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j)
            s += static_cast<double>(G[i * n + j]) * static_cast<double>(Bv[p * n + j]);
          dA[i * k + p] += static_cast<T>(s);
        }
    }
    if (nb.requires_grad) {
      const auto Av = na.value.data();
      auto dB = nb.grad.data();
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < m; ++i)
            s += static_cast<double>(Av[i * k + p]) * static_cast<double>(G[i * n + j]);
          dB[p * n + j] += static_cast<T>(s);
        }
    }
  });
}

template <typename T>
BasicVar<T> transpose(const BasicVar<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  BasicTensor<T> out({n, m});
  const auto A = a.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return make_result<T>(std::move(out), {a}, "transpose", [m, n](Node<T>& self) {
    auto g = self.parents[0]->grad.data();
    const auto up = self.grad.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += up[j * m + i];
  });
}

template <typename T>
BasicVar<T> add(const BasicVar<T>& a, const BasicVar<T>& b) {
  detail::require_same_shape(a, b, "add");
  BasicTensor<T> out(a.shape());
  const auto x = a.value().data();
  const auto y = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result<T>(std::move(out), {a, b}, "add", [](Node<T>& self) {
    accumulate<T>(*self.parents[0], self.grad.data());
    accumulate<T>(*self.parents[1], self.grad.data());
  });
}

template <typename T>
BasicVar<T> sub(const BasicVar<T>& a, const BasicVar<T>& b) {
  detail::require_same_shape(a, b, "sub");
  BasicTensor<T> out(a.shape());
  const auto x = a.value().data();
  const auto y = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result<T>(std::move(out), {a, b}, "sub", [](Node<T>& self) {
    accumulate<T>(*self.parents[0], self.grad.data());
    Node<T>& nb = *self.parents[1];
    if (!nb.requires_grad) return;
    auto g = nb.grad.data();
    const auto up = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= up[i];
  });
}

// a[m×n] + bias broadcast over rows; bias holds n values ([n] or [1×n]).
template <typename T>
BasicVar<T> add_bias(const BasicVar<T>& a, const BasicVar<T>& bias) {
  detail::require_rank(a, 2, "add_bias");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.value().size() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match columns of " + shape_str(a.shape()));
  }
  BasicTensor<T> out(a.shape());
  const auto x = a.value().data();
  const auto b = bias.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + b[j];
  return make_result<T>(std::move(out), {a, bias}, "add_bias", [m, n](Node<T>& self) {
    accumulate<T>(*self.parents[0], self.grad.data());
    Node<T>& nb = *self.parents[1];
    if (!nb.requires_grad) return;
    auto g = nb.grad.data();
    const auto up = self.grad.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[j] += up[i * n + j];
  });
}

template <typename T>
BasicVar<T> scale(const BasicVar<T>& a, std::type_identity_t<T> c) {
  BasicTensor<T> out(a.shape());
  const auto x = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x[i];
  return make_result<T>(std::move(out), {a}, "scale", [c](Node<T>& self) {
    auto g = self.parents[0]->grad.data();
    const auto up = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * up[i];
  });
}

// Hadamard product of any number of equally shaped inputs. The gradient for
// input i is the upstream gradient times the product of all other inputs.
template <typename T>
BasicVar<T> elementwise_product(const std::vector<BasicVar<T>>& xs) {
  if (xs.empty()) throw DimensionError("elementwise_product: no inputs");
  for (std::size_t i = 1; i < xs.size(); ++i)
    detail::require_same_shape(xs[0], xs[i], "elementwise_product");
  BasicTensor<T> out(xs[0].shape(), T{1});
  for (const auto& x : xs) {
    const auto v = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= v[i];
  }
  return make_result<T>(std::move(out), xs, "elementwise_product", [](Node<T>& self) {
    const std::size_t count = self.parents.size();
    const auto up = self.grad.data();
    for (std::size_t k = 0; k < count; ++k) {
      Node<T>& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto g = p.grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        T others{1};
        for (std::size_t j = 0; j < count; ++j)
          if (j != k) others *= self.parents[j]->value[i];
        g[i] += up[i] * others;
      }
    }
  });
}

template <typename T>
BasicVar<T> mul(const BasicVar<T>& a, const BasicVar<T>& b) {
  return elementwise_product<T>({a, b});
}

template <typename T>
BasicVar<T> sigmoid(const BasicVar<T>& x) {
  return detail::unary(
      x, "sigmoid", [](T v) { return detail::stable_sigmoid(v); },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
BasicVar<T> tanh(const BasicVar<T>& x) {
  return detail::unary(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
BasicVar<T> relu(const BasicVar<T>& x) {
  return detail::unary(
      x, "relu", [](T v) { return v > T{0} ? v : T{0}; },
      [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

// log(p / (1 - p)) with p clamped to [1e-7, 1 - 1e-7]; zero gradient where
// the clamp is active.
template <typename T>
BasicVar<T> logit(const BasicVar<T>& p) {
  static constexpr T lo = T(1e-7), hi = T(1) - T(1e-7);
  return detail::unary(
      p, "logit",
      [](T v) {
        const double c = std::clamp(v, lo, hi);
        return static_cast<T>(std::log(c) - std::log1p(-c));
      },
      [](T v, T) { return (v < lo || v > hi) ? T{0} : T{1} / (v * (T{1} - v)); });
}

// Row-wise softmax, stabilized by subtracting each row's maximum.
template <typename T>
BasicVar<T> softmax_rows(const BasicVar<T>& x) {
  detail::require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  BasicTensor<T> out(x.shape());
  const auto in = x.value().data();
  std::vector<double> e(n);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = &in[i * n];
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      e[j] = std::exp(static_cast<double>(row[j]) - mx);
      total += e[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<T>(e[j] / total);
  }
  return make_result<T>(std::move(out), {x}, "softmax_rows", [m, n](Node<T>& self) {
    auto g = self.parents[0]->grad.data();
    const auto y = self.value.data();
    const auto up = self.grad.data();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        dot += static_cast<double>(up[i * n + j]) * static_cast<double>(y[i * n + j]);
      for (std::size_t j = 0; j < n; ++j) {
        g[i * n + j] += static_cast<T>(static_cast<double>(y[i * n + j]) *
                                       (static_cast<double>(up[i * n + j]) - dot));
      }
    }
  });
}

// Joins tensors along `axis`; all other dimensions must agree. The backward
// pass hands each input its own segment of the upstream gradient.
template <typename T>
BasicVar<T> concat(const std::vector<BasicVar<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = xs[0].shape();
  if (axis >= ref.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(ref));
  }
  if (xs.size() == 1) return xs[0];
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d)
      if (d != axis && s[d] != ref[d]) ok = false;
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_str(ref) + " and " +
                           shape_str(s) + " on axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  BasicTensor<T> out(out_shape);
  const auto ov = detail::axis_view(out_shape, axis);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& x : xs) {
    offsets.push_back(offset);
    const auto xv = detail::axis_view(x.shape(), axis);
    const auto src = x.value().data();
    const std::size_t seg = xv.extent * xv.inner;
    for (std::size_t o = 0; o < ov.outer; ++o)
      std::copy_n(&src[o * seg], seg, &out[(o * ov.extent + offset) * ov.inner]);
    offset += xv.extent;
  }
  return make_result<T>(std::move(out), xs, "concat", [axis, offsets](Node<T>& self) {
    const auto ov = detail::axis_view(self.value.shape(), axis);
    const auto up = self.grad.data();
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node<T>& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const auto xv = detail::axis_view(p.value.shape(), axis);
      const std::size_t seg = xv.extent * xv.inner;
      auto g = p.grad.data();
      for (std::size_t o = 0; o < ov.outer; ++o) {
        const T* src = &up[(o * ov.extent + offsets[k]) * ov.inner];
        T* dst = &g[o * seg];
        for (std::size_t i = 0; i < seg; ++i) dst[i] += src[i];
      }
    }
  });
}

// Elements [begin, end) along `axis`.
template <typename T>
BasicVar<T> slice(const BasicVar<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid on axis " + std::to_string(axis) +
                         " of " + shape_str(s));
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  BasicTensor<T> out(out_shape);
  const auto xv = detail::axis_view(s, axis);
  const std::size_t len = (end - begin) * xv.inner;
  const auto src = x.value().data();
  for (std::size_t o = 0; o < xv.outer; ++o)
    std::copy_n(&src[(o * xv.extent + begin) * xv.inner], len, &out[o * len]);
  return make_result<T>(std::move(out), {x}, "slice", [axis, begin, len](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    const auto xv = detail::axis_view(p.value.shape(), axis);
    auto g = p.grad.data();
    const auto up = self.grad.data();
    for (std::size_t o = 0; o < xv.outer; ++o) {
      T* dst = &g[(o * xv.extent + begin) * xv.inner];
      const T* src = &up[o * len];
      for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
BasicVar<T> reshape(const BasicVar<T>& x, Shape shape) {
  BasicTensor<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {x}, "reshape", [](Node<T>& self) {
    accumulate<T>(*self.parents[0], self.grad.data());
  });
}

// Mean over the rows of a matrix: [m×n] -> [1×n].
template <typename T>
BasicVar<T> mean_rows(const BasicVar<T>& x) {
  detail::require_rank(x, 2, "mean_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  BasicTensor<T> out({1, n});
  const auto in = x.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += in[i * n + j];
  for (std::size_t j = 0; j < n; ++j) out[j] /= static_cast<T>(m);
  return make_result<T>(std::move(out), {x}, "mean_rows", [m, n](Node<T>& self) {
    auto g = self.parents[0]->grad.data();
    const auto up = self.grad.data();
    const T inv = T{1} / static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += up[j] * inv;
  });
}

// Sum of every element as shape [1].
template <typename T>
BasicVar<T> sum(const BasicVar<T>& x) {
  double total = 0.0;
  for (T v : x.value().data()) total += v;
  return make_result<T>(BasicTensor<T>::scalar(static_cast<T>(total)), {x}, "sum",
                        [](Node<T>& self) {
                          auto g = self.parents[0]->grad.data();
                          const T up = self.grad[0];
                          for (auto& v : g) v += up;
                        });
}

template <typename T>
BasicVar<T> mean(const BasicVar<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

// Row i of the result is row i of `a` where keep[i] is true, else row i of
// `b`. Unselected rows receive no gradient.
template <typename T>
BasicVar<T> select_rows(const std::vector<bool>& keep, const BasicVar<T>& a,
                        const BasicVar<T>& b) {
  detail::require_rank(a, 2, "select_rows");
  detail::require_same_shape(a, b, "select_rows");
  if (keep.size() != a.dim(0)) {
    throw DimensionError("select_rows: mask of " + std::to_string(keep.size()) +
                         " rows for " + shape_str(a.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const auto src = keep[i] ? a.value().data() : b.value().data();
    std::copy_n(&src[i * n], n, &out[i * n]);
  }
  return make_result<T>(std::move(out), {a, b}, "select_rows", [keep, n](Node<T>& self) {
    const auto up = self.grad.data();
    for (std::size_t i = 0; i < keep.size(); ++i) {
      Node<T>& p = *self.parents[keep[i] ? 0 : 1];
      if (!p.requires_grad) continue;
      auto g = p.grad.data();
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += up[i * n + j];
    }
  });
}

// Inverted dropout: survivors are scaled by 1/(1-p) so inference is the
// identity. `rng` advances only when elements are actually dropped.
template <typename T>
BasicVar<T> dropout(const BasicVar<T>& x, float p, Rng& rng, bool training) {
  if (!(p >= 0.0f && p < 1.0f)) {
    throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0f) return x;
  const T keep_scale = T{1} / (T{1} - static_cast<T>(p));
  std::vector<T> mask(x.value().size());
  for (auto& m : mask) m = rng.uniform() < p ? T{0} : keep_scale;
  BasicTensor<T> out(x.shape());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
  return make_result<T>(std::move(out), {x}, "dropout",
                        [mask = std::move(mask)](Node<T>& self) {
                          auto g = self.parents[0]->grad.data();
                          const auto up = self.grad.data();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i] * mask[i];
                        });
}

// Mean binary cross-entropy of logits against {0,1} labels, in the stable
// form softplus(s) - y*s. dL/ds = (sigmoid(s) - y) / n.
template <typename T>
BasicVar<T> bce_with_logits(const BasicVar<T>& scores, const Tensor& labels) {
  const std::size_t n = scores.value().size();
  if (labels.size() != n) {
    throw DimensionError("bce_with_logits: " + std::to_string(n) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  for (float y : labels.data()) {
    if (y != 0.0f && y != 1.0f) {
      throw DataError("bce_with_logits: label " + std::to_string(y) + " is not 0 or 1");
    }
  }
  const auto s = scores.value().data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    total += detail::softplus(s[i]) - static_cast<double>(labels[i]) * s[i];
  const T loss = static_cast<T>(total / static_cast<double>(n));
  return make_result<T>(BasicTensor<T>::scalar(loss), {scores}, "bce_with_logits",
                        [labels, n](Node<T>& self) {
                          auto g = self.parents[0]->grad.data();
                          const auto sv = self.parents[0]->value.data();
                          const T up = self.grad[0] / static_cast<T>(n);
                          for (std::size_t i = 0; i < n; ++i)
                            g[i] += up * (detail::stable_sigmoid(sv[i]) - labels[i]);
                        });
}

}  // namespace fusionlab
