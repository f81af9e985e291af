#include "umsnet/numerics/ops.hpp"

#include <algorithm>
#include <string>

namespace umsnet {

namespace {

std::string op_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::kAdd: return "add";
    case BinaryOp::kSub: return "sub";
    case BinaryOp::kMul: return "mul";
    case BinaryOp::kDiv: return "div";
  }
  return "?";
}

Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// For each flat index of `a`, the flat index of the broadcast `b` element.
std::vector<std::size_t> broadcast_map(const Shape& a, const Shape& b) {
  const std::size_t n = shape_numel(a);
  std::vector<std::size_t> map(n);
  const std::size_t offset = a.size() - b.size();
  const Shape bstrides = row_major_strides(b);
  // Effective stride of each a-axis into b (0 where broadcast).
  Shape eff(a.size(), 0);
  for (std::size_t i = 0; i < b.size(); ++i) eff[offset + i] = b[i] == 1 ? 0 : bstrides[i];
  Shape idx(a.size(), 0);
  std::size_t boff = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = boff;
    for (std::size_t ax = a.size(); ax-- > 0;) {
      ++idx[ax];
      boff += eff[ax];
      if (idx[ax] < a[ax]) break;
      boff -= eff[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return map;
}

template <typename T>
T apply(BinaryOp op, T x, T y) {
  switch (op) {
    case BinaryOp::kAdd: return x + y;
    case BinaryOp::kSub: return x - y;
    case BinaryOp::kMul: return x * y;
    case BinaryOp::kDiv: return x / y;
  }
  return T(0);
}

void check_matmul(const Shape& a, const Shape& b) {
  if (a.size() != 2 || b.size() != 2 || a[1] != b[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a) + " and " + shape_str(b));
  }
}

}  // namespace

namespace kernels {

template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
              bool transpose_b) {
  if (!transpose_b) {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[i * k + p];
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T acc = T(0);
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c[i * n + j] += acc;
      }
    }
  }
}

// c(k,n) += a(m,k)^T * g(m,n)
template <typename T>
void gemm_at_acc(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

template void gemm_acc(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
template void gemm_acc(const double*, const double*, double*, std::size_t, std::size_t, std::size_t, bool);
template void gemm_at_acc(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void gemm_at_acc(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);

}  // namespace kernels

bool broadcastable(const Shape& a, const Shape& b) {
  if (shape_numel(b) == 1) return true;
  if (b.size() > a.size()) return false;
  const std::size_t offset = a.size() - b.size();
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[i] != 1 && b[i] != a[offset + i]) return false;
  }
  return true;
}

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!broadcastable(a.shape(), b.shape())) {
    throw DimensionError(op_name(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                         shape_str(a.shape()));
  }
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  if (b.size() == 1) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(op, x[i], y[0]);
  } else if (b.size() == a.size()) {
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(op, x[i], y[i]);
  } else {
    const auto map = broadcast_map(a.shape(), b.shape());
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(op, x[i], y[map[i]]);
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_matmul(a.shape(), b.shape());
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<T> c({m, n});
  kernels::gemm_acc(a.data().data(), b.data().data(), c.data().data(), m, k, n, false);
  return c;
}

template <typename T>
Var<T> elementwise(BinaryOp op, const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = a.tape();
  Tensor<T> out = elementwise(op, a.value(), b.value());
  return tape.record(std::move(out), {a, b}, [op, a, b](Tape<T>& t, const Tensor<T>& g) {
    const auto x = a.value().data();
    const auto y = b.value().data();
    const auto gd = g.data();
    const bool scalar_b = b.value().size() == 1;
    const bool same = b.value().size() == a.value().size();
    std::vector<std::size_t> map;
    if (!scalar_b && !same) map = broadcast_map(a.shape(), b.shape());
    auto bi = [&](std::size_t i) { return scalar_b ? 0 : (same ? i : map[i]); };
    if (a.requires_grad()) {
      auto ga = t.grad(a).data();
      for (std::size_t i = 0; i < gd.size(); ++i) {
        switch (op) {
          case BinaryOp::kAdd:
          case BinaryOp::kSub: ga[i] += gd[i]; break;
          case BinaryOp::kMul: ga[i] += gd[i] * y[bi(i)]; break;
          case BinaryOp::kDiv: ga[i] += gd[i] / y[bi(i)]; break;
        }
      }
    }
    if (b.requires_grad()) {
      auto gb = t.grad(b).data();
      for (std::size_t i = 0; i < gd.size(); ++i) {
        const std::size_t j = bi(i);
        switch (op) {
          case BinaryOp::kAdd: gb[j] += gd[i]; break;
          case BinaryOp::kSub: gb[j] -= gd[i]; break;
          case BinaryOp::kMul: gb[j] += gd[i] * x[i]; break;
          case BinaryOp::kDiv: gb[j] -= gd[i] * x[i] / (y[j] * y[j]); break;
        }
      }
    }
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (T& v : out.data()) v += s;
  return a.tape().record(std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    auto ga = t.grad(a).data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i];
  });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (T& v : out.data()) v *= s;
  return a.tape().record(std::move(out), {a}, [a, s](Tape<T>& t, const Tensor<T>& g) {
    auto ga = t.grad(a).data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i] * s;
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = matmul(a.value(), b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    // dA = dC B^T, dB = A^T dC
    if (a.requires_grad()) {
      kernels::gemm_acc(g.data().data(), b.value().data().data(), t.grad(a).data().data(), m, n, k, true);
    }
    if (b.requires_grad()) {
      kernels::gemm_at_acc(a.value().data().data(), g.data().data(), t.grad(b).data().data(), m, k, n);
    }
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] ||
      as[2] != (transpose_b ? bs[2] : bs[1])) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(as) + " and " + shape_str(bs) +
                         (transpose_b ? " (transposed)" : ""));
  }
  const std::size_t batch = as[0], m = as[1], k = as[2];
  const std::size_t n = transpose_b ? bs[1] : bs[2];
  Tensor<T> out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    kernels::gemm_acc(a.value().data().data() + i * m * k, b.value().data().data() + i * k * n,
             out.data().data() + i * m * n, m, k, n, transpose_b);
  }
  return a.tape().record(std::move(out), {a, b},
                         [a, b, batch, m, k, n, transpose_b](Tape<T>& t, const Tensor<T>& g) {
    const T* gd = g.data().data();
    const T* ad = a.value().data().data();
    const T* bd = b.value().data().data();
    T* ga = a.requires_grad() ? t.grad(a).data().data() : nullptr;
    T* gb = b.requires_grad() ? t.grad(b).data().data() : nullptr;
    for (std::size_t i = 0; i < batch; ++i) {
      const T* gi = gd + i * m * n;
      const T* ai = ad + i * m * k;
      const T* bi = bd + i * k * n;
      if (ga) {
        // dA = dC B^T (b stored (k,n)) or dC B (b stored (n,k))
        kernels::gemm_acc(gi, bi, ga + i * m * k, m, n, k, !transpose_b);
      }
      if (gb) {
        if (!transpose_b) {
          kernels::gemm_at_acc(ai, gi, gb + i * k * n, m, k, n);  // A^T dC
        } else {
          kernels::gemm_at_acc(gi, ai, gb + i * k * n, m, n, k);  // dC^T A
        }
      }
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc = T(0);
  for (T v : a.value().data()) acc += v;
  return a.tape().record(Tensor<T>::scalar(acc), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    const T gv = g[0];
    for (T& v : t.grad(a).data()) v += gv;
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> mean_last(const Var<T>& a) {
  const Shape& s = a.shape();
  if (s.empty()) throw DimensionError("mean_last: scalar input");
  const std::size_t n = s.back();
  const std::size_t rows = a.value().size() / n;
  Shape out_shape(s.begin(), s.end() - 1);
  Tensor<T> out(out_shape);
  const auto x = a.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = T(0);
    for (std::size_t j = 0; j < n; ++j) acc += x[r * n + j];
    out[r] = acc / static_cast<T>(n);
  }
  return a.tape().record(std::move(out), {a}, [a, n, rows](Tape<T>& t, const Tensor<T>& g) {
    auto ga = t.grad(a).data();
    const T inv = T(1) / static_cast<T>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[r] * inv;
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    auto ga = t.grad(a).data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i];
  });
}

template <typename T>
Var<T> permute(const Var<T>& a, const std::vector<std::size_t>& axes) {
  const Shape& s = a.shape();
  if (axes.size() != s.size()) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " + shape_str(s));
  }
  std::vector<bool> seen(s.size(), false);
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= s.size() || seen[axes[i]]) throw DimensionError("permute: invalid axis list");
    seen[axes[i]] = true;
    out_shape[i] = s[axes[i]];
  }
  const Shape in_strides = row_major_strides(s);
  // Source offset for each destination flat index.
  std::vector<std::size_t> src(a.value().size());
  Shape idx(s.size(), 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    src[flat] = off;
    for (std::size_t ax = s.size(); ax-- > 0;) {
      ++idx[ax];
      off += in_strides[axes[ax]];
      if (idx[ax] < out_shape[ax]) break;
      off -= in_strides[axes[ax]] * idx[ax];
      idx[ax] = 0;
    }
  }
  Tensor<T> out(out_shape);
  const auto x = a.value().data();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = x[src[i]];
  return a.tape().record(std::move(out), {a},
                         [a, src = std::move(src)](Tape<T>& t, const Tensor<T>& g) {
    auto ga = t.grad(a).data();
    for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += g[i];
  });
}

template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = a.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") on axis " + std::to_string(axis) +
                         " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor<T> out(out_shape);
  const auto x = a.value().data();
  const std::size_t full = s[axis];
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.begin() + (o * full + start) * inner, length * inner,
                out.data().begin() + o * length * inner);
  }
  return a.tape().record(std::move(out), {a},
                         [a, outer, inner, full, start, length](Tape<T>& t, const Tensor<T>& g) {
    auto ga = t.grad(a).data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < length * inner; ++i) {
        ga[(o * full + start) * inner + i] += g[o * length * inner + i];
      }
    }
  });
}

template <typename T>
Var<T> stack(const std::vector<Var<T>>& inputs, std::size_t axis) {
  if (inputs.empty()) throw DimensionError("stack: no inputs");
  const Shape& s = inputs.front().shape();
  for (const auto& v : inputs) {
    if (v.shape() != s) {
      throw DimensionError("stack: shape " + shape_str(v.shape()) + " differs from " + shape_str(s));
    }
  }
  if (axis > s.size()) throw DimensionError("stack: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = inputs.size();
  Shape out_shape = s;
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
  Tensor<T> out(out_shape);
  for (std::size_t k = 0; k < n; ++k) {
    const auto x = inputs[k].value().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.begin() + o * inner, inner, out.data().begin() + (o * n + k) * inner);
    }
  }
  return inputs.front().tape().record(std::move(out), inputs,
                                      [inputs, outer, inner, n](Tape<T>& t, const Tensor<T>& g) {
    for (std::size_t k = 0; k < n; ++k) {
      if (!inputs[k].requires_grad()) continue;
      auto gk = t.grad(inputs[k]).data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) gk[o * inner + i] += g[(o * n + k) * inner + i];
      }
    }
  });
}

#define UMSNET_INSTANTIATE_OPS(T)                                                        \
  template Tensor<T> elementwise(BinaryOp, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                         \
  template Var<T> elementwise(BinaryOp, const Var<T>&, const Var<T>&);                   \
  template Var<T> add_scalar(const Var<T>&, T);                                          \
  template Var<T> mul_scalar(const Var<T>&, T);                                          \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                  \
  template Var<T> bmm(const Var<T>&, const Var<T>&, bool);                               \
  template Var<T> sum(const Var<T>&);                                                    \
  template Var<T> mean(const Var<T>&);                                                   \
  template Var<T> mean_last(const Var<T>&);                                              \
  template Var<T> reshape(const Var<T>&, Shape);                                         \
  template Var<T> permute(const Var<T>&, const std::vector<std::size_t>&);               \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);           \
  template Var<T> stack(const std::vector<Var<T>>&, std::size_t);

UMSNET_INSTANTIATE_OPS(float)
UMSNET_INSTANTIATE_OPS(double)

}  // namespace umsnet
