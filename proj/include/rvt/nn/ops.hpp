#pragma once

// Differentiable primitives.  Matrix-shaped ops work on rank-2 tensors
// [rows, cols]; elementwise ops accept any shape.

#include "rvt/nn/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvt::nn {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw std::invalid_argument(op + ": " + what);
}

template <class T>
void require_rank2(const Tensor<T>& t, const char* op) {
  require(t.rank() == 2, op, "expected a rank-2 tensor, got " + shape_str(t.shape()));
}

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
Node<T>& in(Node<T>& out, std::size_t i) {
  return *out.inputs[i];
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "add");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  return detail::result<T>("add", a.shape(), std::move(v), {a, b}, [](Node<T>& o) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& x = detail::in(o, k);
      if (!x.requires_grad) continue;
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "sub");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
  return detail::result<T>("sub", a.shape(), std::move(v), {a, b}, [](Node<T>& o) {
    auto& x = detail::in(o, 0);
    auto& y = detail::in(o, 1);
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (y.requires_grad) {
      auto& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a, b, "mul");
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  return detail::result<T>("mul", a.shape(), std::move(v), {a, b}, [](Node<T>& o) {
    auto& x = detail::in(o, 0);
    auto& y = detail::in(o, 1);
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      auto& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * x.value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * s;
  return detail::result<T>("scale", a.shape(), std::move(v), {a}, [s](Node<T>& o) {
    auto& g = detail::in(o, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
  });
}

/// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  std::vector<T> v(a.size());
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(0.5) * a[i] * (T(1) + std::erf(a[i] * inv_sqrt2));
  return detail::result<T>("gelu", a.shape(), std::move(v), {a}, [inv_sqrt2](Node<T>& o) {
    auto& x = detail::in(o, 0);
    auto& g = x.grad_buffer();
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T z = x.value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(z * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * z * z);
      g[i] += o.grad[i] * (cdf + z * pdf);
    }
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s{0};
  for (T x : a.data()) s += x;
  return detail::result<T>("sum", {1}, {s}, {a}, [](Node<T>& o) {
    auto& g = detail::in(o, 0).grad_buffer();
    for (auto& x : g) x += o.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

// ------------------------------------------------------------------ reshapes

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(numel(shape) == a.size(), "reshape",
                  "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  return detail::result<T>("reshape", std::move(shape), a.values(), {a}, [](Node<T>& o) {
    auto& g = detail::in(o, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

/// out.flat[i] = a.flat[index[i]]; `index` may repeat or skip entries.
template <class T>
Tensor<T> gather(const Tensor<T>& a, std::vector<std::size_t> index, Shape shape) {
  detail::require(numel(shape) == index.size(), "gather", "index count does not match output shape " + shape_str(shape));
  std::vector<T> v(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    detail::require(index[i] < a.size(), "gather", "index out of range");
    v[i] = a[index[i]];
  }
  return detail::result<T>("gather", std::move(shape), std::move(v), {a}, [idx = std::move(index)](Node<T>& o) {
    auto& g = detail::in(o, 0).grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += o.grad[i];
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<std::size_t> idx(r * c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < r; ++j) idx[i * r + j] = j * c + i;
  return gather(a, std::move(idx), {c, r});
}

/// Concatenate rank-2 tensors along axis 0 (rows) or 1 (columns).
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat", "no inputs");
  detail::require(axis <= 1, "concat", "axis must be 0 or 1");
  for (const auto& p : parts) detail::require_rank2(p, "concat");
  const std::size_t other = parts[0].dim(1 - axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.dim(1 - axis) == other, "concat",
                    "shape mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    total += p.dim(axis);
  }
  Shape shape = axis == 0 ? Shape{total, other} : Shape{other, total};
  std::vector<T> v(total * other);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t pr = p.dim(0), pc = p.dim(1);
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t dst = axis == 0 ? (off + i) * other + j : i * total + off + j;
        v[dst] = p[i * pc + j];
      }
    off += p.dim(axis);
  }
  return detail::result<T>("concat", shape, std::move(v), parts, [axis, total, other, offsets](Node<T>& o) {
    for (std::size_t k = 0; k < o.inputs.size(); ++k) {
      auto& x = detail::in(o, k);
      if (!x.requires_grad) continue;
      auto& g = x.grad_buffer();
      const std::size_t pr = x.shape[0], pc = x.shape[1];
      for (std::size_t i = 0; i < pr; ++i)
        for (std::size_t j = 0; j < pc; ++j) {
          const std::size_t src = axis == 0 ? (offsets[k] + i) * other + j : i * total + offsets[k] + j;
          g[i * pc + j] += o.grad[src];
        }
    }
  });
}

/// Rows [begin, end) (axis 0) or columns [begin, end) (axis 1).
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  detail::require_rank2(a, "slice");
  detail::require(axis <= 1 && begin <= end && end <= a.dim(axis), "slice",
                  "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<std::size_t> idx;
  if (axis == 0) {
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < c; ++j) idx.push_back(i * c + j);
    return gather(a, std::move(idx), {end - begin, c});
  }
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = begin; j < end; ++j) idx.push_back(i * c + j);
  return gather(a, std::move(idx), {r, end - begin});
}

/// Repeat a [1, C] row n times.
template <class T>
Tensor<T> broadcast_rows(const Tensor<T>& a, std::size_t n) {
  detail::require(a.rank() == 2 && a.dim(0) == 1, "broadcast_rows", "expected [1, C], got " + shape_str(a.shape()));
  const std::size_t c = a.dim(1);
  std::vector<std::size_t> idx(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) idx[i * c + j] = j;
  return gather(a, std::move(idx), {n, c});
}

/// Rows of `table` [V, C] selected by `ids`.
template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
  detail::require_rank2(table, "embedding_lookup");
  const std::size_t c = table.dim(1);
  std::vector<std::size_t> idx;
  idx.reserve(ids.size() * c);
  for (std::size_t id : ids) {
    detail::require(id < table.dim(0), "embedding_lookup", "id " + std::to_string(id) + " out of range");
    for (std::size_t j = 0; j < c; ++j) idx.push_back(id * c + j);
  }
  return gather(table, std::move(idx), {ids.size(), c});
}

// -------------------------------------------------------------- linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  detail::require(a.dim(1) == b.dim(0), "matmul", "shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> v(m * n);
  detail::MapMat<T>(v.data(), m, n).noalias() =
      detail::CMapMat<T>(a.data().data(), m, k) * detail::CMapMat<T>(b.data().data(), k, n);
  return detail::result<T>("matmul", {m, n}, std::move(v), {a, b}, [m, k, n](Node<T>& o) {
    auto& x = detail::in(o, 0);
    auto& y = detail::in(o, 1);
    detail::CMapMat<T> dout(o.grad.data(), m, n);
    if (x.requires_grad)
      detail::MapMat<T>(x.grad_buffer().data(), m, k).noalias() += dout * detail::CMapMat<T>(y.value.data(), k, n).transpose();
    if (y.requires_grad)
      detail::MapMat<T>(y.grad_buffer().data(), k, n).noalias() += detail::CMapMat<T>(x.value.data(), m, k).transpose() * dout;
  });
}

/// x [N, I] * w [I, O] + b [O]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank2(x, "linear");
  detail::require_rank2(w, "linear");
  detail::require(x.dim(1) == w.dim(0), "linear", "shape mismatch " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  detail::require(b.size() == w.dim(1), "linear", "bias " + shape_str(b.shape()) + " does not match weight " + shape_str(w.shape()));
  const std::size_t n = x.dim(0), i = x.dim(1), o = w.dim(1);
  std::vector<T> v(n * o);
  detail::MapMat<T> out(v.data(), n, o);
  out.noalias() = detail::CMapMat<T>(x.data().data(), n, i) * detail::CMapMat<T>(w.data().data(), i, o);
  out.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data().data(), o);
  return detail::result<T>("linear", {n, o}, std::move(v), {x, w, b}, [n, i, o](Node<T>& out_node) {
    auto& xn = detail::in(out_node, 0);
    auto& wn = detail::in(out_node, 1);
    auto& bn = detail::in(out_node, 2);
    detail::CMapMat<T> dout(out_node.grad.data(), n, o);
    if (xn.requires_grad)
      detail::MapMat<T>(xn.grad_buffer().data(), n, i).noalias() += dout * detail::CMapMat<T>(wn.value.data(), i, o).transpose();
    if (wn.requires_grad)
      detail::MapMat<T>(wn.grad_buffer().data(), i, o).noalias() += detail::CMapMat<T>(xn.value.data(), n, i).transpose() * dout;
    if (bn.requires_grad)
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bn.grad_buffer().data(), o) += dout.colwise().sum();
  });
}

// ------------------------------------------------------------ normalizations

/// Softmax over the last axis; the row max is subtracted first.
template <class T>
Tensor<T> softmax(const Tensor<T>& a) {
  const std::size_t c = a.shape().back(), r = a.size() / c;
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < r; ++i) {
    const T* x = a.data().data() + i * c;
    T* y = v.data() + i * c;
    const T mx = *std::max_element(x, x + c);
    T s{0};
    for (std::size_t j = 0; j < c; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= s;
  }
  return detail::result<T>("softmax", a.shape(), std::move(v), {a}, [r, c](Node<T>& o) {
    auto& g = detail::in(o, 0).grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const T* y = o.value.data() + i * c;
      const T* dy = o.grad.data() + i * c;
      T dot{0};
      for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& a) {
  const std::size_t c = a.shape().back(), r = a.size() / c;
  std::vector<T> v(a.size());
  for (std::size_t i = 0; i < r; ++i) {
    const T* x = a.data().data() + i * c;
    const T mx = *std::max_element(x, x + c);
    T s{0};
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = x[j] - lse;
  }
  return detail::result<T>("log_softmax", a.shape(), std::move(v), {a}, [r, c](Node<T>& o) {
    auto& g = detail::in(o, 0).grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      T total{0};
      for (std::size_t j = 0; j < c; ++j) total += o.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[i * c + j] - std::exp(o.value[i * c + j]) * total;
    }
  });
}

/// Normalizes the last axis, then applies gamma * x + beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const std::size_t c = a.shape().back(), r = a.size() / c;
  detail::require(gamma.size() == c && beta.size() == c, "layer_norm",
                  "scale/shift " + shape_str(gamma.shape()) + " do not match " + shape_str(a.shape()));
  std::vector<T> v(a.size()), xhat(a.size()), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* x = a.data().data() + i * c;
    T mu{0};
    for (std::size_t j = 0; j < c; ++j) mu += x[j];
    mu /= static_cast<T>(c);
    T var{0};
    for (std::size_t j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<T>(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (x[j] - mu) * inv_std[i];
      v[i * c + j] = gamma[j] * xhat[i * c + j] + beta[j];
    }
  }
  return detail::result<T>("layer_norm", a.shape(), std::move(v), {a, gamma, beta},
                           [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& o) {
    auto& xn = detail::in(o, 0);
    auto& gn = detail::in(o, 1);
    auto& bn = detail::in(o, 2);
    if (gn.requires_grad || bn.requires_grad) {
      auto& dg = gn.grad_buffer();
      auto& db = bn.grad_buffer();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          dg[j] += o.grad[i * c + j] * xhat[i * c + j];
          db[j] += o.grad[i * c + j];
        }
    }
    if (!xn.requires_grad) return;
    auto& dx = xn.grad_buffer();
    std::vector<T> dxhat(c);
    for (std::size_t i = 0; i < r; ++i) {
      T m1{0}, m2{0};
      for (std::size_t j = 0; j < c; ++j) {
        dxhat[j] = o.grad[i * c + j] * gn.value[j];
        m1 += dxhat[j];
        m2 += dxhat[j] * xhat[i * c + j];
      }
      m1 /= static_cast<T>(c);
      m2 /= static_cast<T>(c);
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += inv_std[i] * (dxhat[j] - m1 - xhat[i * c + j] * m2);
    }
  });
}

// ----------------------------------------------------------------- reductions

/// [R, C] -> [R, 1] row sums.
template <class T>
Tensor<T> sum_last(const Tensor<T>& a) {
  detail::require_rank2(a, "sum_last");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> v(r, T{0});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[i] += a[i * c + j];
  return detail::result<T>("sum_last", {r, 1}, std::move(v), {a}, [r, c](Node<T>& o) {
    auto& g = detail::in(o, 0).grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[i];
  });
}

/// [R, C] -> [1, C] column-wise max; the first maximal row takes the gradient.
template <class T>
Tensor<T> max_rows(const Tensor<T>& a) {
  detail::require_rank2(a, "max_rows");
  const std::size_t r = a.dim(0), c = a.dim(1);
  detail::require(r > 0, "max_rows", "no rows");
  std::vector<T> v(c);
  std::vector<std::size_t> arg(c, 0);
  for (std::size_t j = 0; j < c; ++j) {
    v[j] = a[j];
    for (std::size_t i = 1; i < r; ++i)
      if (a[i * c + j] > v[j]) {
        v[j] = a[i * c + j];
        arg[j] = i;
      }
  }
  return detail::result<T>("max_rows", {1, c}, std::move(v), {a}, [c, arg = std::move(arg)](Node<T>& o) {
    auto& g = detail::in(o, 0).grad_buffer();
    for (std::size_t j = 0; j < c; ++j) g[arg[j] * c + j] += o.grad[j];
  });
}

// --------------------------------------------------------------------- losses

/// -sum(target * log_softmax(logits)) over all entries as one distribution.
template <class T>
Tensor<T> soft_cross_entropy(const Tensor<T>& logits, std::vector<T> target) {
  detail::require(target.size() == logits.size(), "soft_cross_entropy",
                  "target length " + std::to_string(target.size()) + " vs logits " + shape_str(logits.shape()));
  const std::size_t n = logits.size();
  const T mx = *std::max_element(logits.data().begin(), logits.data().end());
  T s{0};
  for (T x : logits.data()) s += std::exp(x - mx);
  const T lse = mx + std::log(s);
  T loss{0}, mass{0};
  for (std::size_t i = 0; i < n; ++i) {
    loss -= target[i] * (logits[i] - lse);
    mass += target[i];
  }
  return detail::result<T>("soft_cross_entropy", {1}, {loss}, {logits},
                           [n, lse, mass, target = std::move(target)](Node<T>& o) {
    auto& x = detail::in(o, 0);
    auto& g = x.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0] * (std::exp(x.value[i] - lse) * mass - target[i]);
  });
}

/// Mean over rows of -log softmax(row)[label].
template <class T>
Tensor<T> cross_entropy_rows(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  detail::require_rank2(logits, "cross_entropy_rows");
  const std::size_t r = logits.dim(0), c = logits.dim(1);
  detail::require(labels.size() == r, "cross_entropy_rows", "one label per row required");
  Tensor<T> lsm = log_softmax(logits);
  std::vector<std::size_t> idx(r);
  for (std::size_t i = 0; i < r; ++i) {
    detail::require(labels[i] < c, "cross_entropy_rows", "label out of range");
    idx[i] = i * c + labels[i];
  }
  return scale(sum(gather(lsm, idx, {r})), T(-1) / static_cast<T>(r));
}

/// Binary cross-entropy on sigmoid(logit), computed stably.
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logit, T label) {
  detail::require(logit.size() == 1, "bce_with_logits", "expected a single logit, got " + shape_str(logit.shape()));
  const T x = logit[0];
  const T loss = std::max(x, T(0)) - x * label + std::log1p(std::exp(-std::abs(x)));
  return detail::result<T>("bce_with_logits", {1}, {loss}, {logit}, [label](Node<T>& o) {
    auto& n = detail::in(o, 0);
    const T z = n.value[0];
    const T sig = z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
    n.grad_buffer()[0] += o.grad[0] * (sig - label);
  });
}

// ------------------------------------------------------------------ attention

/// T x T boolean matrix, true = attendable.
struct AttentionMask {
  std::size_t size = 0;
  std::vector<std::uint8_t> allowed;

  static AttentionMask full(std::size_t n) { return {n, std::vector<std::uint8_t>(n * n, 1)}; }

  /// Tokens attend only within their own contiguous group.
  static AttentionMask block_diagonal(const std::vector<std::size_t>& group_sizes) {
    std::size_t n = 0;
    for (std::size_t g : group_sizes) n += g;
    AttentionMask m{n, std::vector<std::uint8_t>(n * n, 0)};
    std::size_t off = 0;
    for (std::size_t g : group_sizes) {
      for (std::size_t i = off; i < off + g; ++i)
        for (std::size_t j = off; j < off + g; ++j) m.allowed[i * n + j] = 1;
      off += g;
    }
    return m;
  }

  bool operator()(std::size_t q, std::size_t k) const { return allowed[q * size + k] != 0; }

  void validate() const {
    if (allowed.size() != size * size) throw std::invalid_argument("AttentionMask: size mismatch");
    for (std::size_t i = 0; i < size; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < size && !any; ++j) any = allowed[i * size + j] != 0;
      if (!any) throw std::invalid_argument("AttentionMask: query row " + std::to_string(i) + " is fully masked");
    }
  }
};

/// Multi-head scaled dot-product attention on projected q, k, v [T, d]:
/// per head softmax(Q K^T / sqrt(d/heads) + log mask) V, heads concatenated.
template <class T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                       std::size_t heads, const AttentionMask* mask = nullptr) {
  detail::require_rank2(q, "attention");
  detail::require_same(q, k, "attention");
  detail::require_same(q, v, "attention");
  const std::size_t n = q.dim(0), d = q.dim(1);
  detail::require(heads > 0 && d % heads == 0, "attention",
                  "model width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  if (mask) {
    detail::require(mask->size == n, "attention",
                    "mask of size " + std::to_string(mask->size) + " for " + std::to_string(n) + " tokens");
    mask->validate();
  }
  const std::size_t dh = d / heads;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  using Strided = Eigen::Map<const detail::RowMat<T>, 0, Eigen::OuterStride<>>;
  using StridedOut = Eigen::Map<detail::RowMat<T>, 0, Eigen::OuterStride<>>;

  std::vector<T> out(n * d, T{0});
  std::vector<T> probs(heads * n * n);
  for (std::size_t h = 0; h < heads; ++h) {
    Strided qh(q.data().data() + h * dh, n, dh, Eigen::OuterStride<>(d));
    Strided kh(k.data().data() + h * dh, n, dh, Eigen::OuterStride<>(d));
    Strided vh(v.data().data() + h * dh, n, dh, Eigen::OuterStride<>(d));
    detail::MapMat<T> p(probs.data() + h * n * n, n, n);
    p.noalias() = (qh * kh.transpose()) * inv_scale;
    for (std::size_t i = 0; i < n; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        if (!mask || (*mask)(i, j)) mx = std::max(mx, p(i, j));
      T s{0};
      for (std::size_t j = 0; j < n; ++j) {
        p(i, j) = (!mask || (*mask)(i, j)) ? std::exp(p(i, j) - mx) : T{0};
        s += p(i, j);
      }
      p.row(i) /= s;
    }
    StridedOut(out.data() + h * dh, n, dh, Eigen::OuterStride<>(d)).noalias() = p * vh;
  }

  return detail::result<T>("attention", {n, d}, std::move(out), {q, k, v},
                           [n, d, dh, heads, inv_scale, probs = std::move(probs)](Node<T>& o) {
    auto& qn = detail::in(o, 0);
    auto& kn = detail::in(o, 1);
    auto& vn = detail::in(o, 2);
    T* dq = qn.requires_grad ? qn.grad_buffer().data() : nullptr;
    T* dk = kn.requires_grad ? kn.grad_buffer().data() : nullptr;
    T* dv = vn.requires_grad ? vn.grad_buffer().data() : nullptr;
    detail::RowMat<T> dp(n, n);
    for (std::size_t h = 0; h < heads; ++h) {
      Strided qh(qn.value.data() + h * dh, n, dh, Eigen::OuterStride<>(d));
      Strided kh(kn.value.data() + h * dh, n, dh, Eigen::OuterStride<>(d));
      Strided vh(vn.value.data() + h * dh, n, dh, Eigen::OuterStride<>(d));
      Strided doh(o.grad.data() + h * dh, n, dh, Eigen::OuterStride<>(d));
      detail::CMapMat<T> p(probs.data() + h * n * n, n, n);
      if (dv) StridedOut(dv + h * dh, n, dh, Eigen::OuterStride<>(d)).noalias() += p.transpose() * doh;
      if (!dq && !dk) continue;
      dp.noalias() = doh * vh.transpose();
      // softmax backward, then the 1/sqrt(dh) scale
      for (std::size_t i = 0; i < n; ++i) {
        const T dot = p.row(i).dot(dp.row(i));
        for (std::size_t j = 0; j < n; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * inv_scale;
      }
      if (dq) StridedOut(dq + h * dh, n, dh, Eigen::OuterStride<>(d)).noalias() += dp * kh;
      if (dk) StridedOut(dk + h * dh, n, dh, Eigen::OuterStride<>(d)).noalias() += dp.transpose() * qh;
    }
  });
}

}  // namespace rvt::nn
