#pragma once

#include "pimgpt/bf16.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace pimgpt::numerics {

// Functional model of the ASIC computation blocks. Every operation consumes
// and produces BF16 with every intermediate rounded to BF16, matching the
// fixed-function datapaths: add/multiply units plus iterative approximations
// for everything else (Newton-Raphson reciprocal, fast inverse square root,
// truncated Taylor series for exp and tanh).

// Reciprocal of d via Newton-Raphson: scale d into [0.5, 1) by exponent
// subtraction, seed X = 48/17 - 32/17 * D', run exactly three iterations
// X += X * (1 - D' * X), rescale. Throws std::domain_error on d == 0.
Bf16 nr_reciprocal(Bf16 d);

// numerator / d computed as numerator * nr_reciprocal(d).
Bf16 nr_divide(Bf16 numerator, Bf16 d);

// 1/sqrt(d) via the Quake bit hack seeded from d's bit pattern padded to 32
// bits, followed by exactly two Newton iterations X * (1.5 - D' * X * X)
// with D' = 0.5 * d. Throws std::domain_error unless d is finite and > 0.
Bf16 fast_inv_sqrt(Bf16 d);

// exp(x) with a six-term Taylor polynomial after range reduction
// x = k*ln2 + r, r in [-ln2/2, ln2/2]; the 2^k rescale is an exponent shift.
Bf16 taylor_exp(Bf16 x);

// tanh(x): six-term Maclaurin series for |x| <= 1, the exp identity
// 1 - 2/(e^{2x}+1) for 1 < |x| < 3.5, saturation to +/-1 beyond.
Bf16 taylor_tanh(Bf16 x);

// x/2 * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3)))
Bf16 gelu(Bf16 x);

// Sum reduction matching the MAC/ASIC adder arrangement: 16-wide binary tree
// per chunk, chunk partials combined sequentially in order.
Bf16 tree_sum(std::span<const Bf16> v);

// Dot product with the same accumulation shape (products rounded, 16-wide
// tree per chunk, sequential combine across chunks).
Bf16 dot(std::span<const Bf16> a, std::span<const Bf16> b);

// Dot product split into GB-sized rounds of the reduction dimension: each
// round is a dot() over its slice; round partials are added sequentially.
// round_elems == 0 means no split.
Bf16 dot_split(std::span<const Bf16> a, std::span<const Bf16> b, size_t round_elems);

// softmax: max subtraction, taylor_exp, tree_sum denominator,
// nr_reciprocal, one multiply per element. Output elements lie in [0, 1].
Bf16Vector softmax(std::span<const Bf16> scores);

// Layer normalization: mean/variance via tree_sum and multiplication by the
// precomputed constant 1/n, rsqrt via fast_inv_sqrt, then gamma/beta affine.
Bf16Vector layernorm(std::span<const Bf16> x, std::span<const Bf16> gamma,
                     std::span<const Bf16> beta, Bf16 epsilon);

Bf16Vector gelu_vec(std::span<const Bf16> x);
Bf16Vector residual_add(std::span<const Bf16> a, std::span<const Bf16> b);

// One attention head, softmax(q.K^T / sqrt(d_k)).V: scores scaled by the precomputed
// constant bf16(1/sqrt(d_k)), softmax, output_j = dot(s, V[:,j]).
// K is row-major t x d_k (row per cached token), V row-major t x d_v.
Bf16Vector attention_head(std::span<const Bf16> q, const std::vector<Bf16Vector>& K,
                          const std::vector<Bf16Vector>& V);

inline Bf16 inv_sqrt_const(size_t d_k) {
    return Bf16(1.0 / std::sqrt(static_cast<double>(d_k)));
}

} // namespace pimgpt::numerics
