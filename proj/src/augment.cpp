#include "vseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace vseg {

namespace {

void check_slice(const SlicePair& s, const char* who) {
    if (s.h < 1 || s.w < 1)
        throw ValidationError(std::string(who) + ": empty slice");
    const std::size_t n = static_cast<std::size_t>(s.h) * s.w;
    if (s.image.size() != n || s.label.size() != n)
        throw ValidationError(std::string(who) + ": slice buffers do not match dims");
}

std::string format_gray(const GrayMap& m) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "a=%g,b=%g", m.a, m.b);
    return buf;
}

std::string append_descriptor(const std::string& existing, const std::string& tag) {
    return existing.empty() ? tag : existing + "|" + tag;
}

}  // namespace

SlicePair apply_gray(const SlicePair& slice, const GrayMap& m) {
    check_slice(slice, "apply_gray");
    if (!(m.a > 0.0))
        throw ValidationError("apply_gray: slope a must be positive, got " +
                              std::to_string(m.a));
    SlicePair out = slice;
    for (float& v : out.image)
        v = std::clamp(static_cast<float>(m.a * v + m.b), kIntensityMin, kIntensityMax);
    return out;
}

std::vector<std::array<int, 2>> enumerate_windows(int width, int height,
                                                  const WindowGrid& grid) {
    if (grid.window < 1 || grid.stride < 1)
        throw ValidationError("enumerate_windows: window and stride must be positive");
    if (width < grid.window || height < grid.window)
        throw ValidationError("enumerate_windows: slice " + std::to_string(width) +
                              "x" + std::to_string(height) + " is smaller than the " +
                              std::to_string(grid.window) +
                              " window; extents of at least " +
                              std::to_string(grid.window) + " are required");
    const int nx = (width - grid.window) / grid.stride + 1;
    const int ny = (height - grid.window) / grid.stride + 1;
    std::vector<std::array<int, 2>> origins;
    origins.reserve(static_cast<std::size_t>(nx) * ny);
    for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix)
            origins.push_back({ix * grid.stride, iy * grid.stride});
    return origins;
}

SlicePair crop_window(const SlicePair& slice, int x0, int y0, int size) {
    check_slice(slice, "crop_window");
    if (x0 < 0 || y0 < 0 || x0 + size > slice.w || y0 + size > slice.h)
        throw ValidationError("crop_window: window (" + std::to_string(x0) + ", " +
                              std::to_string(y0) + ") + " + std::to_string(size) +
                              " exceeds the " + std::to_string(slice.w) + "x" +
                              std::to_string(slice.h) + " slice");
    SlicePair out;
    out.h = size;
    out.w = size;
    out.subject = slice.subject;
    out.slice_index = slice.slice_index;
    out.descriptor = slice.descriptor;
    out.image.resize(static_cast<std::size_t>(size) * size);
    out.label.resize(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y) {
        const std::size_t src = static_cast<std::size_t>(y0 + y) * slice.w + x0;
        const std::size_t dst = static_cast<std::size_t>(y) * size;
        std::copy_n(slice.image.begin() + src, size, out.image.begin() + dst);
        std::copy_n(slice.label.begin() + src, size, out.label.begin() + dst);
    }
    return out;
}

std::vector<GrayMap> gray_variants(const AugPolicy& policy) {
    if (policy.gray_variant_count < 1)
        throw ValidationError("gray_variants: need at least the identity variant");
    if (!(policy.a_min > 0.0) || policy.a_max < policy.a_min ||
        policy.b_max < policy.b_min)
        throw ValidationError("gray_variants: invalid (a, b) sampling ranges");

    std::vector<GrayMap> maps;
    maps.reserve(policy.gray_variant_count);
    maps.push_back({1.0, 0.0});  // identity-first rule
    auto rng = substream_rng(policy.seed, "augment.gray");
    std::uniform_real_distribution<double> da(policy.a_min, policy.a_max);
    std::uniform_real_distribution<double> db(policy.b_min, policy.b_max);
    for (int i = 1; i < policy.gray_variant_count; ++i) {
        const double a = da(rng);
        const double b = db(rng);
        maps.push_back({a, b});
    }
    return maps;
}

SlicePair rm_variant(const SlicePair& slice, int k) {
    check_slice(slice, "rm_variant");
    if (slice.h != slice.w)
        throw ValidationError("rm_variant: slice must be square, got " +
                              std::to_string(slice.w) + "x" + std::to_string(slice.h));
    if (k < 0 || k >= 8)
        throw ValidationError("rm_variant: variant index must be in [0, 8)");

    const int n = slice.h;
    const int m = n - 1;
    const bool mirror = k >= 4;
    const int rot = k % 4;

    SlicePair out = slice;
    static const char* tags[8] = {"rm:r0",  "rm:r90",  "rm:r180",  "rm:r270",
                                  "rm:r0m", "rm:r90m", "rm:r180m", "rm:r270m"};
    out.descriptor = append_descriptor(slice.descriptor, tags[k]);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            // Source pixel (y, x) first mirrors horizontally, then rotates
            // clockwise by `rot` quarter turns ((iy, ix) -> (ix, m - iy)).
            const int iy = y, ix = mirror ? m - x : x;
            int dy = iy, dx = ix;
            switch (rot) {
                case 1: dy = ix; dx = m - iy; break;
                case 2: dy = m - iy; dx = m - ix; break;
                case 3: dy = m - ix; dx = iy; break;
                default: break;
            }
            const std::size_t from = static_cast<std::size_t>(y) * n + x;
            const std::size_t to = static_cast<std::size_t>(dy) * n + dx;
            out.image[to] = slice.image[from];
            out.label[to] = slice.label[from];
        }
    return out;
}

std::vector<SlicePair> expand_gt(const SlicePair& slice, const AugPolicy& policy) {
    if (policy.kind != AugKind::GrayTranslate)
        throw ValidationError("expand_gt called with a non-GT policy");
    check_slice(slice, "expand_gt");
    const std::vector<GrayMap> maps = gray_variants(policy);
    const auto origins = enumerate_windows(slice.w, slice.h, policy.grid);

    std::vector<SlicePair> out;
    out.reserve(maps.size() * origins.size());
    for (std::size_t mi = 0; mi < maps.size(); ++mi) {
        for (const auto& [x0, y0] : origins) {
            SlicePair cropped = crop_window(slice, x0, y0, policy.grid.window);
            SlicePair mapped = apply_gray(cropped, maps[mi]);
            mapped.descriptor = append_descriptor(
                slice.descriptor, "gt:" + format_gray(maps[mi]) + ",w=(" +
                                      std::to_string(x0) + "," + std::to_string(y0) + ")");
            out.push_back(std::move(mapped));
        }
    }
    return out;
}

std::vector<SlicePair> expand_rm(const SlicePair& slice, const AugPolicy& policy) {
    if (policy.kind != AugKind::RotateMirror)
        throw ValidationError("expand_rm called with a non-RM policy");
    check_slice(slice, "expand_rm");
    std::vector<SlicePair> out;
    out.reserve(8);
    for (int k = 0; k < 8; ++k) out.push_back(rm_variant(slice, k));
    return out;
}

std::vector<SlicePair> expand(const SlicePair& slice, const AugPolicy& policy) {
    return policy.kind == AugKind::GrayTranslate ? expand_gt(slice, policy)
                                                 : expand_rm(slice, policy);
}

}  // namespace vseg
