#pragma once

#include <vector>

#include "lr/tape.hpp"
#include "lr/tensor.hpp"

namespace lr {

// Primitive operations. Every op is pure (inputs are never modified) and
// returns a fresh tensor. Passing a tape records the backward rule whenever
// some input participates in differentiation; with tape == nullptr the call
// is a plain forward evaluation.

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// Cross-correlation (no kernel flip) of x:[N,C,H,W] with k:[F,C,3,3].
// stride in {1,2}, pad in {0,1}; output [N,F,H',W'] with
// H' = (H + 2*pad - 3) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad, Tape* tape = nullptr);

Tensor relu(const Tensor& x, Tape* tape = nullptr);

// Elementwise, shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// Sum of all elements -> scalar (shape [1]).
Tensor sum(const Tensor& x, Tape* tape = nullptr);

// Same data, new shape (element count must match). Gradient passes through.
Tensor reshape(const Tensor& x, Shape new_shape, Tape* tape = nullptr);

// x:[N,D] + b:[D], broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& b, Tape* tape = nullptr);

// x:[N,C,H,W] + b:[C], broadcast over batch and space.
Tensor add_channel_bias(const Tensor& x, const Tensor& b, Tape* tape = nullptr);

// Row-wise softmax of [N,C] logits. Forward-only helper.
Tensor softmax(const Tensor& logits);

// Mean over rows of -log softmax(logits)[label]; max-subtraction stabilized.
// labels[i] must lie in [0, C).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tape* tape = nullptr);

// Mean over all elements of (pred - target)^2; for [N,D] inputs this equals
// the per-dimension MSE averaged over the batch.
Tensor mse_loss(const Tensor& pred, const Tensor& target, Tape* tape = nullptr);

// Per-row squared error / D for [N,D] inputs. Forward-only helper.
std::vector<double> mse_per_sample(const Tensor& pred, const Tensor& target);

// argmax per row of [N,C]; ties resolve to the lower index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace lr
