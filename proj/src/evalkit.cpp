#include "vseg/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "vseg/common.hpp"

namespace vseg {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 sub(const Vec3& a, const Vec3& b) {
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
double dot(const Vec3& a, const Vec3& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
double norm2(const Vec3& a) { return dot(a, a); }

/// Closest point on triangle (a, b, c) to p; the Voronoi-region walk over
/// vertex, edge, and face regions.
Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                         const Vec3& c) {
    const Vec3 ab = sub(b, a), ac = sub(c, a), ap = sub(p, a);
    const double d1 = dot(ab, ap), d2 = dot(ac, ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;

    const Vec3 bp = sub(p, b);
    const double d3 = dot(ab, bp), d4 = dot(ac, bp);
    if (d3 >= 0.0 && d4 <= d3) return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return {a[0] + v * ab[0], a[1] + v * ab[1], a[2] + v * ab[2]};
    }

    const Vec3 cp = sub(p, c);
    const double d5 = dot(ab, cp), d6 = dot(ac, cp);
    if (d6 >= 0.0 && d5 <= d6) return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return {a[0] + w * ac[0], a[1] + w * ac[1], a[2] + w * ac[2]};
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return {b[0] + w * (c[0] - b[0]), b[1] + w * (c[1] - b[1]),
                b[2] + w * (c[2] - b[2])};
    }

    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return {a[0] + v * ab[0] + w * ac[0], a[1] + v * ab[1] + w * ac[1],
            a[2] + v * ab[2] + w * ac[2]};
}

}  // namespace

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c) {
    return std::sqrt(norm2(sub(p, closest_on_triangle(p, a, b, c))));
}

// --- Dice ------------------------------------------------------------------

double dsc_slice(std::span<const std::uint8_t> pred,
                 std::span<const std::uint8_t> gt) {
    if (pred.size() != gt.size())
        throw ShapeError("dsc_slice: mask sizes differ (" +
                         std::to_string(pred.size()) + " vs " +
                         std::to_string(gt.size()) + ")");
    std::size_t na = 0, nb = 0, tp = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        na += pred[i] ? 1 : 0;
        nb += gt[i] ? 1 : 0;
        tp += (pred[i] && gt[i]) ? 1 : 0;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(na + nb);
}

DscReport dsc_volume(const MaskVolume& pred, const MaskVolume& gt) {
    if (pred.nx != gt.nx || pred.ny != gt.ny || pred.nz != gt.nz)
        throw ShapeError("dsc_volume: dims differ (" + std::to_string(pred.nx) +
                         "x" + std::to_string(pred.ny) + "x" +
                         std::to_string(pred.nz) + " vs " + std::to_string(gt.nx) +
                         "x" + std::to_string(gt.ny) + "x" + std::to_string(gt.nz) +
                         ")");
    DscReport rep;
    const std::size_t slice = static_cast<std::size_t>(pred.nx) * pred.ny;
    for (int z = 0; z < pred.nz; ++z) {
        const std::span<const std::uint8_t> a(&pred.voxels[slice * z], slice);
        const std::span<const std::uint8_t> b(&gt.voxels[slice * z], slice);
        bool any = false;
        for (std::size_t i = 0; i < slice && !any; ++i) any = a[i] || b[i];
        if (!any) {
            ++rep.excluded_both_empty;
            continue;
        }
        rep.per_slice.push_back(dsc_slice(a, b));
    }
    if (rep.per_slice.empty()) {
        rep.mean = 1.0;
        rep.std_dev = 0.0;
        return rep;
    }
    double sum = 0.0;
    for (double d : rep.per_slice) sum += d;
    rep.mean = sum / static_cast<double>(rep.per_slice.size());
    double var = 0.0;
    for (double d : rep.per_slice) var += (d - rep.mean) * (d - rep.mean);
    rep.std_dev = std::sqrt(var / static_cast<double>(rep.per_slice.size()));
    return rep;
}

// --- Rigid transforms ------------------------------------------------------

Vec3 RigidTransform::apply(const Vec3& p) const {
    Vec3 out;
    for (int r = 0; r < 3; ++r)
        out[r] = rotation[r][0] * p[0] + rotation[r][1] * p[1] +
                 rotation[r][2] * p[2] + translation_mm[r];
    return out;
}

void validate_transform(const RigidTransform& t) {
    const auto& R = t.rotation;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double dot_ij = 0.0;
            for (int k = 0; k < 3; ++k) dot_ij += R[k][i] * R[k][j];
            const double want = i == j ? 1.0 : 0.0;
            if (std::abs(dot_ij - want) > 1e-9)
                throw ValidationError("rigid transform: rotation is not orthonormal");
        }
    const double det = R[0][0] * (R[1][1] * R[2][2] - R[1][2] * R[2][1]) -
                       R[0][1] * (R[1][0] * R[2][2] - R[1][2] * R[2][0]) +
                       R[0][2] * (R[1][0] * R[2][1] - R[1][1] * R[2][0]);
    if (std::abs(det - 1.0) > 1e-9)
        throw ValidationError("rigid transform: determinant is not +1");
}

// --- MeshIndex -------------------------------------------------------------

MeshIndex::MeshIndex(const Mesh& mesh) : mesh_(mesh) {
    if (mesh.empty())
        throw ValidationError("mesh index: mesh has no triangles");
    validate_mesh(mesh);

    Vec3 lo = mesh.vertices[0], hi = mesh.vertices[0];
    for (const auto& v : mesh.vertices)
        for (int k = 0; k < 3; ++k) {
            lo[k] = std::min(lo[k], v[k]);
            hi[k] = std::max(hi[k], v[k]);
        }
    origin_ = lo;

    const int per_axis = std::clamp(
        static_cast<int>(std::ceil(std::cbrt(
            static_cast<double>(mesh.triangles.size())))),
        1, 64);
    for (int k = 0; k < 3; ++k) {
        const double extent = std::max(hi[k] - lo[k], 1e-9);
        dims_[k] = per_axis;
        cell_[k] = extent / per_axis;
    }
    buckets_.resize(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2]);

    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        Vec3 tlo = mesh.vertices[tri[0]], thi = tlo;
        for (int c = 1; c < 3; ++c)
            for (int k = 0; k < 3; ++k) {
                tlo[k] = std::min(tlo[k], mesh.vertices[tri[c]][k]);
                thi[k] = std::max(thi[k], mesh.vertices[tri[c]][k]);
            }
        const auto clo = cell_of(tlo), chi = cell_of(thi);
        for (int z = clo[2]; z <= chi[2]; ++z)
            for (int y = clo[1]; y <= chi[1]; ++y)
                for (int x = clo[0]; x <= chi[0]; ++x)
                    buckets_[(static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] +
                             x]
                        .push_back(static_cast<int>(t));
    }
}

std::array<int, 3> MeshIndex::cell_of(const Vec3& p) const {
    std::array<int, 3> c;
    for (int k = 0; k < 3; ++k) {
        const int i = static_cast<int>(std::floor((p[k] - origin_[k]) / cell_[k]));
        c[k] = std::clamp(i, 0, dims_[k] - 1);
    }
    return c;
}

void MeshIndex::search(const Vec3& p, double& best_d2, Vec3& best_q) const {
    const auto c0 = cell_of(p);
    const double min_cell = std::min({cell_[0], cell_[1], cell_[2]});
    const int max_ring =
        std::max({dims_[0], dims_[1], dims_[2]});

    best_d2 = std::numeric_limits<double>::infinity();
    for (int ring = 0; ring <= max_ring; ++ring) {
        for (int dz = -ring; dz <= ring; ++dz)
            for (int dy = -ring; dy <= ring; ++dy)
                for (int dx = -ring; dx <= ring; ++dx) {
                    if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
                        continue;  // shell surface only
                    const int x = c0[0] + dx, y = c0[1] + dy, z = c0[2] + dz;
                    if (x < 0 || y < 0 || z < 0 || x >= dims_[0] || y >= dims_[1] ||
                        z >= dims_[2])
                        continue;
                    for (int t :
                         buckets_[(static_cast<std::size_t>(z) * dims_[1] + y) *
                                      dims_[0] +
                                  x]) {
                        const auto& tri = mesh_.triangles[t];
                        const Vec3 q = closest_on_triangle(
                            p, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]],
                            mesh_.vertices[tri[2]]);
                        const double d2 = norm2(sub(p, q));
                        if (d2 < best_d2) {
                            best_d2 = d2;
                            best_q = q;
                        }
                    }
                }
        // Cells not yet examined sit at Chebyshev distance >= ring + 1, so
        // nothing in them can be closer than ring whole cells.
        const double safe = ring * min_cell;
        if (best_d2 <= safe * safe) break;
    }
}

double MeshIndex::distance(const Vec3& p) const {
    double d2;
    Vec3 q;
    search(p, d2, q);
    return std::sqrt(d2);
}

Vec3 MeshIndex::closest_point(const Vec3& p) const {
    double d2;
    Vec3 q;
    search(p, d2, q);
    return q;
}

// --- ICP -------------------------------------------------------------------

namespace {

RigidTransform kabsch_fit(const PointCloud& p, const PointCloud& q) {
    const double n = static_cast<double>(p.size());
    Eigen::Vector3d pbar = Eigen::Vector3d::Zero(), qbar = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < p.size(); ++i) {
        pbar += Eigen::Vector3d(p[i][0], p[i][1], p[i][2]);
        qbar += Eigen::Vector3d(q[i][0], q[i][1], q[i][2]);
    }
    pbar /= n;
    qbar /= n;

    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Eigen::Vector3d dp = Eigen::Vector3d(p[i][0], p[i][1], p[i][2]) - pbar;
        const Eigen::Vector3d dq = Eigen::Vector3d(q[i][0], q[i][1], q[i][2]) - qbar;
        H += dp * dq.transpose();
    }

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(H,
                                          Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
    Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
    D(2, 2) = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    const Eigen::Matrix3d R = V * D * U.transpose();
    const Eigen::Vector3d t = qbar - R * pbar;

    RigidTransform out;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) out.rotation[r][c] = R(r, c);
        out.translation_mm[r] = t(r);
    }
    return out;
}

void require_well_spread(const PointCloud& points) {
    if (points.size() < 3)
        throw DegeneracyError("icp: need at least 3 points, got " +
                              std::to_string(points.size()));
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : points) mean += Eigen::Vector3d(p[0], p[1], p[2]);
    mean /= static_cast<double>(points.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : points) {
        const Eigen::Vector3d d = Eigen::Vector3d(p[0], p[1], p[2]) - mean;
        cov += d * d.transpose();
    }
    cov /= static_cast<double>(points.size());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const auto ev = es.eigenvalues();  // ascending
    if (ev(1) <= 1e-12 * std::max(ev(2), 1.0))
        throw DegeneracyError("icp: point cloud is collinear or coincident");
}

}  // namespace

IcpResult icp_align(const PointCloud& points, const Mesh& mesh, int max_iter,
                    double tol) {
    require_well_spread(points);
    if (max_iter < 1) throw ValidationError("icp: max_iter must be positive");
    const MeshIndex index(mesh);  // throws on an empty mesh

    IcpResult res;
    RigidTransform current;
    double best_rms = std::numeric_limits<double>::infinity();
    double prev_rms = std::numeric_limits<double>::infinity();

    PointCloud corr(points.size());
    for (int iter = 0; iter < max_iter; ++iter) {
        for (std::size_t i = 0; i < points.size(); ++i)
            corr[i] = index.closest_point(current.apply(points[i]));

        current = kabsch_fit(points, corr);

        double sq = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i)
            sq += norm2(sub(current.apply(points[i]), corr[i]));
        const double rms = std::sqrt(sq / static_cast<double>(points.size()));

        if (rms > prev_rms + 1e-9 * (1.0 + prev_rms))
            throw Error("icp: residual increased between iterations");
        res.rms_history.push_back(rms);
        if (rms < best_rms) {
            best_rms = rms;
            res.transform = current;
        }
        if (iter > 0 && std::abs(prev_rms - rms) < tol) break;
        prev_rms = rms;
    }
    res.iterations = static_cast<int>(res.rms_history.size());
    res.final_rms = best_rms;
    validate_transform(res.transform);
    return res;
}

// --- Cloud-to-mesh distances -----------------------------------------------

C2mReport c2m_distances(const PointCloud& points, const Mesh& mesh,
                        const RigidTransform& transform, int bins) {
    if (points.empty()) throw ValidationError("c2m: empty point cloud");
    if (bins < 1) throw ValidationError("c2m: bins must be positive");
    validate_transform(transform);
    const MeshIndex index(mesh);  // throws on an empty mesh

    C2mReport rep;
    rep.distances_mm.reserve(points.size());
    double sum = 0.0;
    for (const auto& p : points) {
        const double d = index.distance(transform.apply(p));
        rep.distances_mm.push_back(d);
        rep.distances_px.push_back(d / kPixelSpacingMm);
        sum += d;
        rep.max_mm = std::max(rep.max_mm, d);
    }
    rep.mean_mm = sum / static_cast<double>(points.size());

    rep.bin_edges.resize(bins + 1);
    rep.bin_counts.assign(bins, 0);
    const double width = rep.max_mm / bins;
    for (int i = 0; i <= bins; ++i) rep.bin_edges[i] = width * i;
    for (double d : rep.distances_mm) {
        const int idx =
            width > 0.0
                ? std::min(bins - 1, static_cast<int>(std::floor(d / width)))
                : 0;
        rep.bin_counts[idx] += 1;
    }
    return rep;
}

// --- JSON ------------------------------------------------------------------

nlohmann::json to_json(const DscReport& r) {
    return {{"mean", r.mean},
            {"std", r.std_dev},
            {"per_slice", r.per_slice},
            {"excluded_both_empty", r.excluded_both_empty},
            {"policy", r.policy}};
}

nlohmann::json to_json(const RigidTransform& t) {
    return {{"rotation", t.rotation}, {"translation_mm", t.translation_mm}};
}

nlohmann::json to_json(const C2mReport& r) {
    return {{"mean_mm", r.mean_mm},
            {"max_mm", r.max_mm},
            {"mean_px", r.mean_mm / kPixelSpacingMm},
            {"max_px", r.max_mm / kPixelSpacingMm},
            {"count", r.distances_mm.size()},
            {"hist", {{"bin_edges_mm", r.bin_edges}, {"counts", r.bin_counts}}}};
}

}  // namespace vseg
