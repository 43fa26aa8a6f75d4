// Segmentation quality metrics: per-slice Dice scores with aggregation,
// rigid point-cloud-to-mesh alignment (ICP), and cloud-to-mesh distance
// statistics with histogram reporting.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vseg/mesh.hpp"
#include "vseg/volume.hpp"

namespace vseg {

/// In-plane pixel pitch (mm) used to express distances in pixel units.
inline constexpr double kPixelSpacingMm = 0.645;

/// Dice similarity 2|A∩B| / (|A|+|B|) of two equally-sized binary masks;
/// 1.0 when both are empty (documented convention).
double dsc_slice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

struct DscReport {
    std::vector<double> per_slice;  // aggregated slices only, z order
    double mean = 1.0;
    double std_dev = 0.0;  // population standard deviation
    int excluded_both_empty = 0;
    std::string policy =
        "slices empty in both masks score 1.0 and are excluded; population std";
};

/// Per-z-slice Dice of two volumes. Slices empty in both volumes are
/// excluded from the aggregation (their count is reported); if every slice
/// is excluded the report degenerates to mean 1.0, std 0.0.
DscReport dsc_volume(const MaskVolume& pred, const MaskVolume& gt);

struct RigidTransform {
    std::array<std::array<double, 3>, 3> rotation = {
        {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
    std::array<double, 3> translation_mm = {0.0, 0.0, 0.0};

    std::array<double, 3> apply(const std::array<double, 3>& p) const;
};

/// Throws ValidationError unless rotation is orthonormal with determinant
/// +1, both within 1e-9.
void validate_transform(const RigidTransform& t);

using PointCloud = std::vector<std::array<double, 3>>;

/// Exact unsigned distance from p to triangle (a, b, c), clamping to the
/// nearest edge or vertex outside the face region.
double point_triangle_distance(const std::array<double, 3>& p,
                               const std::array<double, 3>& a,
                               const std::array<double, 3>& b,
                               const std::array<double, 3>& c);

/// Closest-triangle query structure: triangles bucketed into a uniform grid
/// built once, then shared read-only by distance queries.
class MeshIndex {
public:
    explicit MeshIndex(const Mesh& mesh);

    /// Unsigned distance from p to the nearest surface point.
    double distance(const std::array<double, 3>& p) const;
    /// The nearest surface point itself.
    std::array<double, 3> closest_point(const std::array<double, 3>& p) const;

private:
    const Mesh& mesh_;
    std::array<double, 3> origin_ = {0.0, 0.0, 0.0};
    std::array<double, 3> cell_ = {1.0, 1.0, 1.0};
    std::array<int, 3> dims_ = {1, 1, 1};
    std::vector<std::vector<int>> buckets_;

    std::array<int, 3> cell_of(const std::array<double, 3>& p) const;
    void search(const std::array<double, 3>& p, double& best_d2,
                std::array<double, 3>& best_q) const;
};

struct IcpResult {
    RigidTransform transform;        // best (lowest-residual) iterate
    std::vector<double> rms_history; // residual after each iteration's fit
    double final_rms = 0.0;          // residual of the returned transform
    int iterations = 0;
};

/// Point-to-surface ICP: nearest mesh-surface correspondences, closed-form
/// rigid fit via the cross-covariance decomposition, iterated until the RMS
/// residual changes by less than tol or max_iter is reached. The residual
/// sequence is non-increasing; the lowest-residual transform is returned.
IcpResult icp_align(const PointCloud& points, const Mesh& mesh, int max_iter = 50,
                    double tol = 1e-6);

struct C2mReport {
    std::vector<double> distances_mm;  // one per input point, input order
    std::vector<double> distances_px;  // distances_mm / kPixelSpacingMm
    double mean_mm = 0.0;
    double max_mm = 0.0;
    std::vector<double> bin_edges;        // bins + 1 uniform edges over [0, max]
    std::vector<std::size_t> bin_counts;  // sums to the point count
};

/// Unsigned distance from each transformed point to the mesh surface, with
/// mm and pixel units and a uniform histogram over [0, max].
C2mReport c2m_distances(const PointCloud& points, const Mesh& mesh,
                        const RigidTransform& transform, int bins = 20);

// --- JSON serialization -----------------------------------------------------

nlohmann::json to_json(const DscReport& r);
nlohmann::json to_json(const RigidTransform& t);
nlohmann::json to_json(const C2mReport& r);

}  // namespace vseg
