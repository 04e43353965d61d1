#pragma once

#include <span>

#include "calclab/tensor.hpp"

namespace calclab {

// Reverse-mode building blocks. Every op computes its forward value and, when
// `tape` is non-null and some input requires grad, records a backward closure.
// Outputs of recorded ops have requires_grad = true so that reachability
// propagates; subgraphs with no trainable inputs are never recorded, which is
// what lets a masked fine-tune skip the backward work below the mask.

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);     // [m,k]x[k,n] -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b, Tape* tape = nullptr);  // [m,k]x[n,k]^T -> [m,n]

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);            // same shape
Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr);    // [n,d] + [d]
Tensor scale(const Tensor& x, double factor, Tape* tape = nullptr);

Tensor softmax_lastdim(const Tensor& x, Tape* tape = nullptr);
// Row i is a softmax over columns 0..i; columns above the diagonal are zero.
Tensor causal_softmax(const Tensor& scores, Tape* tape = nullptr);

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps, Tape* tape = nullptr);

Tensor gelu(const Tensor& x, Tape* tape = nullptr);
Tensor silu(const Tensor& x, Tape* tape = nullptr);

Tensor gather_rows(const Tensor& table, std::span<const int> ids, Tape* tape = nullptr);  // [R,C] -> [n,C]
Tensor select_row(const Tensor& x, std::int64_t row, Tape* tape = nullptr);               // [n,d] -> [d]

Tensor cross_entropy(const Tensor& logits, int target, Tape* tape = nullptr);  // [V] -> scalar
Tensor mean_of(const std::vector<Tensor>& scalars, Tape* tape = nullptr);

}  // namespace calclab
