// Volume containers, bundle I/O, in-plane resampling, intensity
// normalization, and the synthetic tube-with-bulge phantom generator.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vseg/common.hpp"

namespace vseg {

/// Dense 3D grid, x fastest, with physical voxel spacing in mm.
template <typename T>
struct Grid3 {
    int nx = 0, ny = 0, nz = 0;
    std::array<double, 3> spacing_mm = {1.0, 1.0, 1.0};
    std::vector<T> voxels;

    Grid3() = default;
    Grid3(int x, int y, int z, std::array<double, 3> spacing)
        : nx(x), ny(y), nz(z), spacing_mm(spacing),
          voxels(static_cast<std::size_t>(x) * y * z) {}

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * ny + y) * nx + x;
    }
    T& at(int x, int y, int z) { return voxels[index(x, y, z)]; }
    const T& at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
    std::size_t size() const { return voxels.size(); }
};

using ImageVolume = Grid3<std::int16_t>;  // intensities, pseudo-HU
using MaskVolume = Grid3<std::uint8_t>;   // {0, 1}

/// One 2D training slice: raw float intensities plus its binary label and
/// provenance for manifests.
struct SlicePair {
    int h = 0, w = 0;
    std::vector<float> image;
    std::vector<std::uint8_t> label;
    std::string subject;
    int slice_index = 0;
    std::string descriptor;  // augmentation applied, "" for originals
};

// --- Bundle I/O ------------------------------------------------------------
// A bundle is a directory holding meta.json ({"dims", "spacing_mm",
// "dtype":"i16"|"u8"}) and voxels.raw (little-endian, x fastest).

void write_bundle(const ImageVolume& v, const std::filesystem::path& dir);
void write_bundle(const MaskVolume& v, const std::filesystem::path& dir);
ImageVolume read_image_bundle(const std::filesystem::path& dir);
MaskVolume read_mask_bundle(const std::filesystem::path& dir);
/// Declared dtype of a bundle ("i16" or "u8") without loading the payload.
std::string bundle_dtype(const std::filesystem::path& dir);

// --- Resampling ------------------------------------------------------------

/// Resample every z-slice to the target in-plane spacing by bilinear
/// interpolation on physical coordinates (pixel centers at index * spacing).
/// Output extent per axis is round(n * s / target); border samples clamp.
/// z is untouched.
ImageVolume resample_xy(const ImageVolume& v, double target_sx, double target_sy);

/// Same grid geometry as resample_xy but nearest-neighbor, keeping labels
/// strictly binary.
MaskVolume resample_mask_xy(const MaskVolume& v, double target_sx, double target_sy);

// --- Intensity normalization ----------------------------------------------

/// Linear map of [lo, hi] to [0, 1] with clamping outside the window.
float normalize_intensity(float v, float lo = -100.0f, float hi = 500.0f);
void normalize_intensity(std::vector<float>& vals, float lo = -100.0f,
                         float hi = 500.0f);

/// Raw (unnormalized) slice pairs for one subject, z-major order.
std::vector<SlicePair> extract_slice_pairs(const ImageVolume& image,
                                           const MaskVolume& mask,
                                           const std::string& subject);

// --- Phantom ---------------------------------------------------------------

/// Tube with a Gaussian radius bulge: per slice z, a disc of radius
/// r(z) = base_radius + bulge_amplitude * exp(-((z/(n-1) - bulge_center) /
/// bulge_sigma)^2 / 2) centered at the slice center plus (dx, dy). The image
/// is a * level + b plus seeded Gaussian noise; the mask is the noiseless
/// disc.
struct PhantomSpec {
    int n_slices = 32;
    int width = 64;
    int height = 64;
    std::array<double, 3> spacing_mm = {0.645, 0.645, 1.0};

    double base_radius = 8.0;
    double bulge_amplitude = 6.0;
    double bulge_center = 0.5;  // fraction of the z range
    double bulge_sigma = 0.15;  // fraction of the z range

    double background_level = 0.0;
    double aorta_level = 300.0;
    double noise_sd = 25.0;

    double a = 1.0;  // contrast slope
    double b = 0.0;  // contrast offset
    double dx = 0.0;  // disc offset from slice center, px
    double dy = 0.0;

    std::uint64_t seed = 0;

    void validate() const;
    double radius_at(int z) const;
};

struct Phantom {
    ImageVolume image;
    MaskVolume mask;
};

Phantom make_phantom(const PhantomSpec& spec);

/// Parse a phantom spec from a JSON file; unknown keys are configuration
/// errors so config typos fail loudly.
PhantomSpec phantom_spec_from_json_file(const std::filesystem::path& path);
PhantomSpec phantom_spec_from_json_text(const std::string& text);

}  // namespace vseg
