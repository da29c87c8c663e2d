#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "zsseg/tensor.hpp"

ZSSEG_NAMESPACE_BEGIN

// Differentiable operations. Every op checks shapes explicitly; the only
// broadcast supported is scalar-times-tensor. Reductions accumulate in double.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
/// Multiplies every element of `a` by the rank-0 tensor `factor`.
Tensor scale_by(const Tensor& a, const Tensor& factor);
/// Adds the vector `bias` to every row of the matrix `x`.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor exp(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Temperature softmax along `axis` (0 or 1 for matrices, 0 for vectors),
/// stabilised by max subtraction.
Tensor softmax(const Tensor& x, std::size_t axis, Real temperature = Real(1));

/// Each row divided by max(||row||, 1e-12).
Tensor l2_normalize_rows(const Tensor& x);

/// Mean of the listed rows of a matrix; returns a vector of length cols.
Tensor mean_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor row(const Tensor& x, std::size_t r);
/// Stacks vectors (as single rows) and matrices with equal column counts.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = Real(1e-5));
/// tanh approximation of GELU.
Tensor gelu(const Tensor& x);

/// Mean over rows of -log softmax(logits)[row, target]; probabilities are
/// clamped to >= 1e-12 before the log.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

/// out[index[i]] += x[i] for every row i; `groups` output rows.
Tensor scatter_add_rows(const Tensor& x, std::span<const std::size_t> index, std::size_t groups);

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

/// Row range [begin, begin + length) of a packed batch of sequences.
struct Segment {
  std::size_t begin = 0;
  std::size_t length = 0;
};

/// Scaled dot-product attention over packed sequences: each segment attends
/// only within itself, and with `causal` row i attends to rows <= i.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const Segment> segments,
                 bool causal);

ZSSEG_NAMESPACE_END
