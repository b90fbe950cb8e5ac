#pragma once

#include "promptir/tensor.hpp"

namespace promptir {

// Elementwise / linear-algebra kit. All ops are pure and differentiable;
// shapes are validated and mismatches throw with the offending dims.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);   // Hadamard
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);                    // -> scalar
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor narrow(const Tensor& a, int axis, int start, int length);
Tensor slice_channels(const Tensor& x, int c0, int c1); // BCHW channel range [c0,c1)
Tensor transpose2d(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b); // [M,K] x [K,N]
// Batched matmul over the leading axis: [B,M,K] x [B,K,N]; trans_* swap
// the last two axes of the corresponding operand before multiplying.
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias); // [B,in] x [out,in]' + b

// Activation / normalization.
Tensor gelu(const Tensor& x); // exact Gaussian-CDF form x * Phi(x)
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm_channel(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps);
// L2-normalize along the last axis: x / max(||x||, eps).
Tensor l2_normalize_last(const Tensor& x, double eps = 1e-12);
// logits [B*heads, M, P] divided per head by alpha[heads].
Tensor div_per_head(const Tensor& logits, const Tensor& alpha, int heads);

// Convolution (cross-correlation). weight [out, in/groups, k, k]; bias
// optional (pass Tensor() for bias-free). Square kernels, symmetric
// padding.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, int groups);

// Spatial ops on BCHW.
Tensor global_avg_pool(const Tensor& x);        // -> [B, C]
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w); // half-pixel centers, edge clamp
Tensor pixel_unshuffle(const Tensor& x, int r); // B,C,H,W -> B,C*r^2,H/r,W/r
Tensor pixel_shuffle(const Tensor& x, int r);   // inverse
Tensor reflect_pad2d(const Tensor& x, int pad_bottom, int pad_right);
Tensor crop2d(const Tensor& x, int h0, int h, int w0, int w);

// Mean absolute error; subgradient at exact zeros is 0.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

} // namespace promptir
