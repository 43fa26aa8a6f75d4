#pragma once

#include <utility>
#include <vector>

#include "vseg/tensor.hpp"

namespace vseg {

/// Weights and hyperparameters of one convolution (or transposed
/// convolution). Weight layout: (out_c, in_c, kh, kw).
struct ConvParams {
    Tensor4 weights;
    std::vector<float> bias;
    int stride = 1;
    int pad = 0;

    int out_channels() const { return weights.shape.n; }
    int in_channels() const { return weights.shape.c; }
    int kh() const { return weights.shape.h; }
    int kw() const { return weights.shape.w; }
};

/// Gradients of a conv layer's own parameters.
struct ConvGrad {
    Tensor4 dweights;
    std::vector<float> dbias;
};

/// Result of a layer backward pass: gradient w.r.t. the layer input plus
/// gradients w.r.t. the layer's parameters. Shapes mirror the forward
/// inputs exactly.
struct LayerGrad {
    Tensor4 input_grad;
    ConvGrad param_grad;
};

/// Winning input positions of a 2x2 max pool, one flat input index per
/// output element. Ties resolve to the first window element in row-major
/// scan order.
struct ArgmaxMap {
    Shape4 in_shape;
    Shape4 out_shape;
    std::vector<std::int32_t> index;
};

struct PoolResult {
    Tensor4 out;
    ArgmaxMap argmax;
};

struct CeLoss {
    double loss = 0.0;
    /// Combined softmax + cross-entropy gradient w.r.t. the logits: P - G.
    Tensor4 grad_logits;
};

/// 2D convolution, cross-correlation convention (no kernel flip), zero
/// padding. Output dims: (n, out_c, (h+2*pad-kh)/stride+1, (w+2*pad-kw)/stride+1).
Tensor4 conv2d_forward(const Tensor4& x, const ConvParams& p);
LayerGrad conv2d_backward(const Tensor4& x, const ConvParams& p, const Tensor4& out_grad);

/// 2x2 max pool, stride 2. Requires even h and w.
PoolResult maxpool2_forward(const Tensor4& x);
Tensor4 maxpool2_backward(const ArgmaxMap& argmax, const Tensor4& out_grad);

/// 2x2 stride-2 transposed convolution (the adjoint of a stride-2 2x2
/// convolution). Output dims: (n, out_c, 2h, 2w).
Tensor4 deconv2_forward(const Tensor4& x, const ConvParams& p);
LayerGrad deconv2_backward(const Tensor4& x, const ConvParams& p, const Tensor4& out_grad);

Tensor4 relu_forward(const Tensor4& x);
/// Masks out_grad where the forward input was <= 0 (gradient 0 at exactly 0).
Tensor4 relu_backward(const Tensor4& x, const Tensor4& out_grad);

/// Per-pixel softmax over the channel axis, max-subtracted for stability.
Tensor4 softmax_channels(const Tensor4& x);

/// Cross-entropy of post-softmax probabilities against a one-hot target,
/// summed (not averaged) over batch, channels and the full spatial grid.
/// log arguments are clamped at 1e-12.
CeLoss cross_entropy_loss(const Tensor4& probs, const Tensor4& onehot);

/// Stacks b's channels after a's. Spatial and batch dims must match.
Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);

/// Splits a gradient back into the two channel spans of a concat.
std::pair<Tensor4, Tensor4> split_channels(const Tensor4& g, int c_first);

}  // namespace vseg
