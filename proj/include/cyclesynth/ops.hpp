#pragma once

#include "cyclesynth/tensor.hpp"

namespace cyclesynth::ops {

// Elementwise arithmetic. Binary ops take equal shapes, or one operand with a
// single element (broadcast as a scalar).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);
Tensor add_scalar(const Tensor& a, Scalar value);

Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, Scalar slope);

// Full reductions to a one-element tensor. Accumulation is in double, in index order.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

enum class PadMode { zeros, reflect };

/// 2D cross-correlation. x: [N,Cin,H,W], w: [Cout,Cin,k,k], b: [Cout] (may be
/// undefined). Output spatial size is floor((H + 2*pad - k)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
              PadMode pad_mode = PadMode::zeros);

/// Fractionally strided convolution; the adjoint of conv2d with the same geometry.
/// w: [Cin,Cout,k,k]. Output size is (H-1)*stride - 2*pad + k + output_pad.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
                        int output_pad);

/// Per-(sample, channel) standardization with biased variance, then gamma*x + beta.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = Scalar(1e-5));

std::int64_t conv_out_size(std::int64_t in, int k, int stride, int pad);
std::int64_t conv_transpose_out_size(std::int64_t in, int k, int stride, int pad, int output_pad);

} // namespace cyclesynth::ops
