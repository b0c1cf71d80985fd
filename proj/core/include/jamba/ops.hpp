#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "jamba/tensor.hpp"

// Differentiable operations. Broadcasting is limited to trailing-dimension
// expansion: where noted, `b` may have a shape equal to a suffix of `a`'s
// shape and is repeated over the leading dimensions.
namespace jamba {

inline constexpr double kDefaultRmsEps = 1e-6;

// Elementwise; `b` may be trailing-broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// a: [..., k], b: [k, n] -> [..., n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [..., k], b: [n, k] -> [..., n]  (a times b transposed)
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& a, int axis = -1);
Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor softplus(const Tensor& a);
// y = x / sqrt(mean(x^2) + eps) * gain over the last axis; gain: [d].
Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps = kDefaultRmsEps);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [rows, n] (leading dims flattened) -> [n]
Tensor mean_rows(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
// Columns [begin, end) of the last axis.
Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end);

// Rows of `table` ([vocab, d]) selected by ids; result shape leading + [d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, Shape leading);

// Mean token cross-entropy over positions whose mask is nonzero.
// logits: [..., vocab] with one row per target. Returns 0 when nothing is masked in.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     std::span<const std::uint8_t> mask);

// x viewed as [rows, d]: selects rows -> [idx.size(), d].
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx);
// src [m, d] added into a zero [rows, d] at the given row indices.
Tensor scatter_add_rows(const Tensor& src, std::span<const std::size_t> idx, std::size_t rows);
// Flat element gather -> [idx.size()].
Tensor gather_elements(const Tensor& x, std::span<const std::size_t> idx);
// x [m, d] with row i multiplied by s[i]; s: [m].
Tensor scale_rows(const Tensor& x, const Tensor& s);

}  // namespace jamba
