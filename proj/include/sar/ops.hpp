#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sar/tensor.hpp"

// Differentiable tensor operations. Each op computes its value eagerly and,
// when any operand is tracked, records a backward closure on that operand's
// tape. Untracked operands are treated as constants.
namespace sar::ad {

// Floor applied inside log() so that underflowed probabilities stay finite.
inline constexpr double kLogFloor = 1e-12;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor exp(const Tensor& x);
// ln(max(x, kLogFloor)); the gradient is zero where the floor is active.
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Softmax of x / temperature along the last axis (each row of a matrix).
Tensor softmax(const Tensor& x, double temperature);
Tensor log_softmax(const Tensor& x, double temperature);

// Cosine similarity of two vectors, returned as a scalar.
Tensor cosine(const Tensor& a, const Tensor& b);
// Cosine of corresponding rows of two [n x d] matrices -> [n].
Tensor row_cosine(const Tensor& a, const Tensor& b);
// Scales each row to unit L2 norm.
Tensor normalize_rows(const Tensor& x);

// Builds an [n x d] matrix from n vectors of length d.
Tensor stack_rows(std::span<const Tensor> rows);
// Rows of x at the given indices, in order; indices may repeat.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
// out[i] = x[i, columns[i]] for an [n x m] matrix.
Tensor pick(const Tensor& x, std::span<const std::size_t> columns);

}  // namespace sar::ad
