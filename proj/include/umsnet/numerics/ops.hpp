#pragma once

#include <cstddef>
#include <vector>

#include "umsnet/numerics/autograd.hpp"
#include "umsnet/numerics/tensor.hpp"

namespace umsnet {

// Broadcast rule for binary elementwise ops: the result always has a's shape.
// b is right-aligned against a; b.dim() <= a.dim() and every axis of b either
// equals the aligned axis of a or is 1. A one-element b acts as a scalar.
// Anything else is a DimensionError naming both shapes.
bool broadcastable(const Shape& a, const Shape& b);

enum class BinaryOp { kAdd, kSub, kMul, kDiv };

// Plain tensor kernels (no recording).
template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Recorded ops.
template <typename T>
Var<T> elementwise(BinaryOp op, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) { return elementwise(BinaryOp::kAdd, a, b); }
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) { return elementwise(BinaryOp::kSub, a, b); }
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) { return elementwise(BinaryOp::kMul, a, b); }
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) { return elementwise(BinaryOp::kDiv, a, b); }

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s);
template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s);

// (m,k) x (k,n) -> (m,n)
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
// (B,m,k) x (B,k,n) -> (B,m,n); with transpose_b, b is (B,n,k).
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b = false);

template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);
// Mean over the last axis; (..., n) -> (...).
template <typename T>
Var<T> mean_last(const Var<T>& a);

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T>
Var<T> permute(const Var<T>& a, const std::vector<std::size_t>& axes);
// Sub-range [start, start+length) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t start, std::size_t length);
// Stacks equally-shaped inputs along a new axis inserted at `axis`.
template <typename T>
Var<T> stack(const std::vector<Var<T>>& inputs, std::size_t axis);

template <typename T>
Var<T> square(const Var<T>& a) { return mul(a, a); }

namespace kernels {
// c(m,n) += a(m,k) * b(k,n), or b given as (n,k) when transpose_b.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool transpose_b);
// c(k,n) += a(m,k)^T * g(m,n)
template <typename T>
void gemm_at_acc(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n);
}  // namespace kernels

}  // namespace umsnet
