// Probability stack -> binary volume -> cleaned single component -> surface.
#pragma once

#include <array>
#include <cstddef>

#include "vseg/mesh.hpp"
#include "vseg/tensor.hpp"
#include "vseg/volume.hpp"

namespace vseg {

/// Threshold a per-slice two-channel probability stack (n = z slices,
/// channel 1 = foreground): voxel = 1 iff p_fg > 0.5, ties to background.
MaskVolume argmax_mask(const Tensor4& probs, std::array<double, 3> spacing_mm);

struct ComponentResult {
    MaskVolume mask;
    bool empty = false;            // nothing survived the cleanup
    std::size_t voxel_count = 0;   // of the kept component
    int components_before = 0;     // before the min_size filter
};

/// 26-connected labeling; components below min_size are removed first, then
/// the largest survivor is kept (size ties broken by smallest first-voxel
/// scan index). An all-background result sets `empty` instead of throwing.
ComponentResult largest_component(const MaskVolume& v, std::size_t min_size = 64);

/// Marching cubes over the zero-padded voxel grid. Vertices sit at crossed
/// cell-edge midpoints (binary data makes interpolation degenerate), scaled
/// to mm by the volume spacing, with consistent outward orientation. The
/// 256-way case table is constructed at startup by contouring each cube
/// face and stitching the directed segments into loops; the face rule
/// depends only on that face's corner pattern (ambiguous saddle faces join
/// the diagonal inside corners), so adjacent cells always agree and every
/// produced surface is closed.
Mesh marching_cubes(const MaskVolume& v, double iso = 0.5);

}  // namespace vseg
