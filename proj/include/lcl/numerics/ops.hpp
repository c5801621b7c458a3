#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lcl/numerics/tape.hpp"
#include "lcl/numerics/tensor.hpp"

namespace lcl {

// ---------------------------------------------------------------------------
// Plain kernels on tensors (no tape).
// ---------------------------------------------------------------------------

/// Standard matrix product; throws ShapeError naming both shapes on mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// Softmax of a vector (any shape, treated as flat). Max-subtracted.
Tensor softmax(const Tensor& v);
/// Row-wise softmax of a matrix.
Tensor softmax_rows(const Tensor& m);
Tensor relu(const Tensor& v);

// ---------------------------------------------------------------------------
// Differentiable operations. All operate on rank-2 values; the result lives on
// the tape of the first argument.
// ---------------------------------------------------------------------------
namespace ops {

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// a + r with r a 1 x n row broadcast over the rows of a.
Var add_row(Var a, Var r);
/// a + t with t (m x n) repeated down the rows of a (k*m x n).
Var add_tiled(Var a, Var t);
Var scale(Var a, double s);
Var mul(Var a, Var b);
Var relu(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
/// Row-wise layer norm with affine 1 x n gain and bias.
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);

/// Mean over consecutive groups of `block` rows: (B*block x n) -> (B x n).
Var mean_blocks(Var a, std::size_t block);
/// Scales every row in group b by s[b] where s is B x 1.
Var scale_blocks(Var a, Var s, std::size_t block);

Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);

/// Multi-head scaled dot-product self-attention over `batch` independent
/// groups of `tokens` rows. q, k, v are (batch*tokens x d).
Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t tokens, std::size_t heads);

Var sum(Var a);
Var mean(Var a);
/// Sum of squared differences, as a 1x1 value.
Var squared_error(Var a, Var b);

/// Soft Dice loss averaged over `groups` equal row groups:
/// 1 - (2 sum(p t) + eps) / (sum p + sum t + eps) per group.
Var dice_loss(Var probs, const Tensor& target, std::size_t groups = 1, double eps = 1e-5);
/// Mean binary cross-entropy with probabilities clamped to [clamp, 1 - clamp].
Var bce_loss(Var probs, const Tensor& target, double clamp = 1e-7);

}  // namespace ops
}  // namespace lcl
