#pragma once

// Differentiable free functions over Var<S>. Implemented for float and double.

#include <vector>

#include "mmdt/autograd.hpp"

namespace mmdt {

// ---- elementwise -------------------------------------------------------------------------------

template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> scale(const Var<S>& a, S factor);
template <typename S> Var<S> add_scalar(const Var<S>& a, S offset);
template <typename S> Var<S> leaky_relu(const Var<S>& a, S slope);
template <typename S> Var<S> tanh(const Var<S>& a);
/// Exact (erf) GELU.
template <typename S> Var<S> gelu(const Var<S>& a);
/// Clamp; the gradient passes only where lo < a < hi.
template <typename S> Var<S> clamp(const Var<S>& a, S lo, S hi);

template <typename S> Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <typename S> Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }
template <typename S> Var<S> operator*(const Var<S>& a, const Var<S>& b) { return mul(a, b); }
template <typename S> Var<S> operator*(S s, const Var<S>& a) { return scale(a, s); }

/// Same elements, new shape.
template <typename S> Var<S> reshape(const Var<S>& a, Shape shape);

// ---- reductions (scalar results have shape {1}) ------------------------------------------------

template <typename S> Var<S> mean(const Var<S>& a);
/// mean(a^2)
template <typename S> Var<S> mean_square(const Var<S>& a);
/// mean((a - target)^2)
template <typename S> Var<S> mean_square_to(const Var<S>& a, S target);
/// mean(|a - b|)
template <typename S> Var<S> mean_abs_diff(const Var<S>& a, const Var<S>& b);

// ---- image / convolution ops on (N, C, H, W) -------------------------------------------------

/// Weight (Cout, Cin, k, k); bias (Cout) or undefined.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, int pad);

/// Weight (Cin, Cout, k, k); output side (H-1)*stride - 2*pad + k + out_pad.
template <typename S>
Var<S> conv_transpose2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride,
                        int pad, int out_pad);

enum class NormMode {
  kTrain,          ///< batch statistics, running statistics updated
  kTrainNoUpdate,  ///< batch statistics, running statistics untouched
  kEval,           ///< running statistics
};

template <typename S>
Var<S> batch_norm2d(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                    Tensor<S>& running_mean, Tensor<S>& running_var, NormMode mode,
                    S momentum = S(0.1), S eps = S(1e-5));

/// Bilinear resampling with half-pixel centers (align_corners = false).
template <typename S> Var<S> resize_bilinear(const Var<S>& x, Index out_h, Index out_w);

template <typename S> Var<S> concat_channels(const std::vector<Var<S>>& parts);
template <typename S> Var<S> concat_batch(const std::vector<Var<S>>& parts);
template <typename S> Var<S> slice_batch(const Var<S>& x, Index start, Index count);

// ---- token ops on (B, L, D) ------------------------------------------------------------------

/// y = x W^T + b over the last axis. Weight (Dout, Din), bias (Dout) or undefined.
template <typename S> Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias);
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-6));
/// Multi-head scaled dot-product attention. qkv: (B, L, 3D) packed [q | k | v]; returns (B, L, D).
template <typename S> Var<S> attention(const Var<S>& qkv, int heads);
template <typename S> Var<S> softmax_last(const Var<S>& x);
template <typename S> Var<S> token_slice(const Var<S>& x, Index start, Index len);
template <typename S> Var<S> token_concat(const std::vector<Var<S>>& parts);
/// Mean over the token axis: (B, L, D) -> (B, 1, D).
template <typename S> Var<S> token_mean(const Var<S>& x);
template <typename S> Var<S> slice_last(const Var<S>& x, Index start, Index len);
template <typename S> Var<S> concat_last(const std::vector<Var<S>>& parts);
/// Per-sample scaling: x (B, ...) times w (B, 1, 1).
template <typename S> Var<S> scale_per_sample(const Var<S>& x, const Var<S>& w);
/// Broadcast add of a (1, L, D) table to (B, L, D).
template <typename S> Var<S> add_broadcast(const Var<S>& x, const Var<S>& table);
/// x (B, L, D) plus c (B, 1, D) on every token.
template <typename S> Var<S> add_per_token(const Var<S>& x, const Var<S>& c);
/// Repeat a (1, L, D) tensor to (B, L, D).
template <typename S> Var<S> repeat_batch(const Var<S>& x, Index batch);
/// Mean softmax cross-entropy of logits (B, K) against integer labels.
template <typename S> Var<S> cross_entropy(const Var<S>& logits, const std::vector<int>& labels);

}  // namespace mmdt
