#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vseg/layers.hpp"

namespace vseg {

/// Architecture description of the encoder-decoder network: `depth` pooling
/// stages, `base_features` channels at the top level, doubling per level up
/// to `feature_cap`.
struct UNetSpec {
    int depth = 3;
    int base_features = 8;
    int in_channels = 1;
    int out_channels = 2;
    int feature_cap = 1024;

    bool operator==(const UNetSpec&) const = default;

    int features_at(int level) const;

    /// Counted layers: convs (4*depth+2) + pools (depth) + deconvs (depth)
    /// + final 1x1 conv + softmax = 6*depth + 4.
    int counted_layers() const { return 6 * depth + 4; }

    /// Number of parameterized layers (convolutions + deconvolutions).
    int param_count() const { return 5 * depth + 3; }

    void validate() const;
};

/// All parameter tensors in topology order:
///   enc{L}.conv1, enc{L}.conv2 for L = 0..depth-1,
///   bottleneck.conv1, bottleneck.conv2,
///   dec{L}.up, dec{L}.conv1, dec{L}.conv2 for L = depth-1..0,
///   out.
struct UNetParams {
    UNetSpec spec;
    std::vector<ConvParams> layers;

    bool operator==(const UNetParams&) const = default;
};

/// Serialization names of the parameter tensors, two per layer
/// ("<layer>.w", "<layer>.b"), in topology order.
std::vector<std::string> unet_param_names(const UNetSpec& spec);

/// He-initialized parameters: weights ~ N(0, 2/fan_in), biases zero, drawn
/// in topology order from a generator seeded by `seed`.
UNetParams unet_build(const UNetSpec& spec, std::uint64_t seed);

/// Everything the backward pass needs from one forward invocation.
struct UNetCache {
    std::vector<Tensor4> inputs;    // input to each parameterized layer
    std::vector<Tensor4> pre_act;   // pre-ReLU conv outputs (empty where no ReLU)
    std::vector<ArgmaxMap> pools;   // one per encoder level
    std::vector<int> skip_channels; // concat split points, indexed by decoder level
};

struct UNetForwardResult {
    Tensor4 probs;  // (n, out_channels, h, w), per-pixel softmax applied
    UNetCache cache;
};

/// Runs the network. Input must be (n, in_channels, h, w) with h and w
/// divisible by 2^depth.
UNetForwardResult unet_forward(const UNetParams& params, const Tensor4& x);

/// Inference-only forward (no cache kept).
Tensor4 unet_predict(const UNetParams& params, const Tensor4& x);

using UNetGrads = std::vector<ConvGrad>;

/// Backpropagates the combined softmax+cross-entropy gradient (P - G)
/// through the whole network. The cache must come from a forward pass over
/// the same parameter set.
UNetGrads unet_backward(const UNetParams& params, const UNetCache& cache,
                        const Tensor4& grad_logits);

/// Checkpoint I/O. Binary format: magic "UNET", version, spec fields, then
/// one record per tensor (name, dims, little-endian float32 payload).
/// Round trips are bit-exact.
void unet_save(const UNetParams& params, const std::filesystem::path& path);
UNetParams unet_load(const std::filesystem::path& path);

/// Load and verify against an expected architecture; throws ShapeError
/// naming the first mismatching tensor.
UNetParams unet_load(const std::filesystem::path& path, const UNetSpec& expect);

}  // namespace vseg
