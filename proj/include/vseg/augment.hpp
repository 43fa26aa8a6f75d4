// Deterministic slice expansions: gray-value variation + window translation,
// and the eight lossless rotation/mirror variants.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "vseg/volume.hpp"

namespace vseg {

/// Linear intensity map v' = a * v + b, clamped to the representable
/// intensity range. Applied to images only, never labels.
struct GrayMap {
    double a = 1.0;
    double b = 0.0;
};

/// Bounds gray-mapped intensities; matches the 16-bit image voxel range.
inline constexpr float kIntensityMin = -32768.0f;
inline constexpr float kIntensityMax = 32767.0f;

SlicePair apply_gray(const SlicePair& slice, const GrayMap& m);

/// Sliding-window origins over a slice: one window start per stride step,
/// per axis count = floor((extent - window) / stride) + 1.
struct WindowGrid {
    int window = 512;
    int stride = 64;
};

/// Row-major (y outer, x inner) top-left origins (x0, y0).
std::vector<std::array<int, 2>> enumerate_windows(int width, int height,
                                                  const WindowGrid& grid);

SlicePair crop_window(const SlicePair& slice, int x0, int y0, int size);

enum class AugKind { GrayTranslate, RotateMirror };

struct AugPolicy {
    AugKind kind = AugKind::GrayTranslate;
    int gray_variant_count = 8;
    double a_min = 0.8, a_max = 1.2;
    double b_min = -100.0, b_max = 100.0;
    WindowGrid grid;
    std::uint64_t seed = 0;
};

/// The policy's gray maps, identity first, remaining draws seeded — the same
/// list for every slice so the expansion is enumerable up front.
std::vector<GrayMap> gray_variants(const AugPolicy& policy);

/// One of the 8 dihedral variants of a square slice (k in [0, 8)): k % 4
/// quarter-turns clockwise, preceded by a horizontal mirror when k >= 4.
/// Image and label move in lockstep.
SlicePair rm_variant(const SlicePair& slice, int k);

/// Gray variants x window origins (variant-major, windows row-major inside).
std::vector<SlicePair> expand_gt(const SlicePair& slice, const AugPolicy& policy);

/// The 8 dihedral variants; requires a square slice.
std::vector<SlicePair> expand_rm(const SlicePair& slice, const AugPolicy& policy);

/// Dispatch on policy.kind.
std::vector<SlicePair> expand(const SlicePair& slice, const AugPolicy& policy);

}  // namespace vseg
