#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "vseg/common.hpp"
#include "vseg/evalkit.hpp"
#include "vseg/mesh.hpp"
#include "vseg/postrecon.hpp"
#include "vseg/volume.hpp"

using namespace vseg;

namespace {

constexpr std::array<double, 3> kUnit = {1.0, 1.0, 1.0};

std::vector<std::uint8_t> bits(std::initializer_list<int> v) {
    std::vector<std::uint8_t> out;
    for (int b : v) out.push_back(static_cast<std::uint8_t>(b));
    return out;
}

/// An asymmetric blob (two fused boxes) whose mesh pins down a unique rigid
/// alignment, unlike anything rotationally symmetric.
Mesh blob_mesh() {
    MaskVolume v(14, 12, 10, kUnit);
    for (int z = 1; z < 7; ++z)
        for (int y = 1; y < 9; ++y)
            for (int x = 1; x < 6; ++x) v.at(x, y, z) = 1;
    for (int z = 3; z < 9; ++z)
        for (int y = 2; y < 6; ++y)
            for (int x = 5; x < 13; ++x) v.at(x, y, z) = 1;
    return marching_cubes(v);
}

RigidTransform rot_z(double rad, std::array<double, 3> t = {0, 0, 0}) {
    RigidTransform out;
    out.rotation = {{{std::cos(rad), -std::sin(rad), 0.0},
                     {std::sin(rad), std::cos(rad), 0.0},
                     {0.0, 0.0, 1.0}}};
    out.translation_mm = t;
    return out;
}

/// Rotation angle of R, from its trace.
double rotation_angle(const std::array<std::array<double, 3>, 3>& r) {
    const double tr = r[0][0] + r[1][1] + r[2][2];
    return std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0));
}

/// Angle of the composition R1·R2 — zero when R1 inverts R2.
double composed_angle(const RigidTransform& a, const RigidTransform& b) {
    std::array<std::array<double, 3>, 3> m{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                m[i][j] += a.rotation[i][k] * b.rotation[k][j];
    return rotation_angle(m);
}

double norm3(const std::array<double, 3>& v) {
    return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}

/// Brute-force nearest-surface distance: scan every triangle.
double brute_distance(const std::array<double, 3>& p, const Mesh& m) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : m.triangles)
        best = std::min(best,
                        point_triangle_distance(p, m.vertices[t[0]],
                                                m.vertices[t[1]], m.vertices[t[2]]));
    return best;
}

}  // namespace

// --- dsc_slice -------------------------------------------------------------

TEST_CASE("Dice of identical, disjoint, and partial masks") {
    const auto a = bits({1, 1, 0, 0});
    CHECK(dsc_slice(a, a) == 1.0);

    CHECK(dsc_slice(bits({1, 1, 0, 0}), bits({0, 0, 1, 1})) == 0.0);

    // |A| = 4, |B| = 2, overlap 2: 2*2 / (4+2).
    const auto big = bits({1, 1, 1, 1, 0, 0});
    const auto small = bits({1, 1, 0, 0, 0, 0});
    CHECK(dsc_slice(big, small) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("Dice of two empty masks is one by convention") {
    CHECK(dsc_slice(bits({0, 0, 0}), bits({0, 0, 0})) == 1.0);
}

TEST_CASE("Dice rejects size mismatches") {
    CHECK_THROWS_AS(dsc_slice(bits({1, 0}), bits({1, 0, 0})), ShapeError);
}

TEST_CASE("Dice is symmetric and monotone in overlap") {
    auto rng = substream_rng(42, "test.dsc");
    std::bernoulli_distribution flip(0.4);
    for (int c = 0; c < 20; ++c) {
        std::vector<std::uint8_t> a(64), b(64);
        for (auto& v : a) v = flip(rng);
        for (auto& v : b) v = flip(rng);
        CHECK(dsc_slice(a, b) == dsc_slice(b, a));
    }

    // Fixed |A| = |B| = 8 in 32 pixels; slide B to change only the overlap.
    double prev = -1.0;
    for (int overlap = 0; overlap <= 8; ++overlap) {
        std::vector<std::uint8_t> a(32, 0), b(32, 0);
        for (int i = 0; i < 8; ++i) a[i] = 1;
        for (int i = 0; i < 8; ++i) b[8 - overlap + i] = 1;
        const double d = dsc_slice(a, b);
        CHECK(d > prev);
        prev = d;
    }
    CHECK(prev == 1.0);
}

// --- dsc_volume ------------------------------------------------------------

namespace {

MaskVolume from_slices(const std::vector<std::vector<std::uint8_t>>& slices, int w,
                       int h) {
    MaskVolume v(w, h, static_cast<int>(slices.size()), kUnit);
    for (std::size_t z = 0; z < slices.size(); ++z)
        std::copy(slices[z].begin(), slices[z].end(),
                  v.voxels.begin() + static_cast<std::ptrdiff_t>(z * slices[z].size()));
    return v;
}

}  // namespace

TEST_CASE("volume Dice of a perfect prediction is one with zero spread") {
    const MaskVolume gt = from_slices({bits({1, 0, 1, 0}), bits({0, 1, 1, 0})}, 2, 2);
    const DscReport r = dsc_volume(gt, gt);
    CHECK(r.mean == 1.0);
    CHECK(r.std_dev == 0.0);
    CHECK(r.per_slice.size() == 2);
    CHECK(r.excluded_both_empty == 0);
}

TEST_CASE("volume Dice of slice-wise complements is zero") {
    const MaskVolume gt = from_slices({bits({1, 0, 1, 0}), bits({0, 1, 1, 0})}, 2, 2);
    MaskVolume pred = gt;
    for (auto& v : pred.voxels) v = v ? 0 : 1;
    const DscReport r = dsc_volume(pred, gt);
    CHECK(r.mean == 0.0);
}

TEST_CASE("three-slice report with Dice values one, half, zero") {
    // Slice 0: identical; slice 1: |A|=2,|B|=2 overlap 1; slice 2: disjoint.
    const MaskVolume gt = from_slices(
        {bits({1, 1, 0, 0}), bits({1, 1, 0, 0}), bits({1, 0, 0, 0})}, 2, 2);
    const MaskVolume pred = from_slices(
        {bits({1, 1, 0, 0}), bits({1, 0, 1, 0}), bits({0, 1, 0, 0})}, 2, 2);
    const DscReport r = dsc_volume(pred, gt);
    REQUIRE(r.per_slice.size() == 3);
    CHECK(r.per_slice[0] == 1.0);
    CHECK(r.per_slice[1] == 0.5);
    CHECK(r.per_slice[2] == 0.0);
    CHECK(r.mean == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.std_dev == doctest::Approx(std::sqrt(1.0 / 6.0)).epsilon(1e-12));
}

TEST_CASE("slices empty in both volumes are excluded and counted") {
    const MaskVolume gt = from_slices(
        {bits({0, 0, 0, 0}), bits({1, 1, 0, 0}), bits({0, 0, 0, 0})}, 2, 2);
    const MaskVolume pred = from_slices(
        {bits({0, 0, 0, 0}), bits({1, 0, 0, 0}), bits({0, 0, 0, 0})}, 2, 2);
    const DscReport r = dsc_volume(pred, gt);
    CHECK(r.excluded_both_empty == 2);
    REQUIRE(r.per_slice.size() == 1);
    CHECK(r.per_slice[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    const MaskVolume zero(2, 2, 3, kUnit);
    const DscReport all_empty = dsc_volume(zero, zero);
    CHECK(all_empty.excluded_both_empty == 3);
    CHECK(all_empty.per_slice.empty());
    CHECK(all_empty.mean == 1.0);
    CHECK(all_empty.std_dev == 0.0);
}

TEST_CASE("volume Dice rejects mismatched dims") {
    CHECK_THROWS_AS(dsc_volume(MaskVolume(2, 2, 2, kUnit), MaskVolume(2, 2, 3, kUnit)),
                    ShapeError);
}

TEST_CASE("volume Dice matches the pixel-counting oracle on 100 random pairs") {
    auto rng = substream_rng(99, "test.dscvol");
    for (int c = 0; c < 100; ++c) {
        const int w = 3 + c % 5, h = 2 + c % 4, nz = 1 + c % 6;
        std::bernoulli_distribution flip(0.1 + 0.008 * c);
        MaskVolume pred(w, h, nz, kUnit), gt(w, h, nz, kUnit);
        for (auto& v : pred.voxels) v = flip(rng);
        for (auto& v : gt.voxels) v = flip(rng);

        const DscReport r = dsc_volume(pred, gt);
        const std::size_t slice = static_cast<std::size_t>(w) * h;
        std::vector<double> want;
        int excluded = 0;
        for (int z = 0; z < nz; ++z) {
            std::vector<std::uint8_t> a(pred.voxels.begin() + slice * z,
                                        pred.voxels.begin() + slice * (z + 1));
            std::vector<std::uint8_t> b(gt.voxels.begin() + slice * z,
                                        gt.voxels.begin() + slice * (z + 1));
            const bool any = std::any_of(a.begin(), a.end(), [](auto x) { return x; }) ||
                             std::any_of(b.begin(), b.end(), [](auto x) { return x; });
            if (!any) {
                ++excluded;
                continue;
            }
            want.push_back(oracle::dsc_counts(a, b));
        }
        CAPTURE(c);
        CHECK(r.excluded_both_empty == excluded);
        REQUIRE(r.per_slice.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i)
            CHECK(std::abs(r.per_slice[i] - want[i]) < 1e-12);
        if (!want.empty()) {
            const double mean =
                std::accumulate(want.begin(), want.end(), 0.0) /
                static_cast<double>(want.size());
            CHECK(std::abs(r.mean - mean) < 1e-12);
        }
    }
}

// --- point-triangle distance -----------------------------------------------

TEST_CASE("distance is zero on the triangle and d above its centroid") {
    const std::array<double, 3> a = {0, 0, 0}, b = {2, 0, 0}, c = {0, 2, 0};
    CHECK(point_triangle_distance({0.5, 0.5, 0.0}, a, b, c) == 0.0);
    CHECK(point_triangle_distance({2.0 / 3, 2.0 / 3, 1.25}, a, b, c) ==
          doctest::Approx(1.25).epsilon(1e-12));
}

TEST_CASE("distance beyond an edge clamps to the edge") {
    const std::array<double, 3> a = {0, 0, 0}, b = {2, 0, 0}, c = {0, 2, 0};
    // Beyond edge ab at y = -3: closest is (1, 0, 0).
    CHECK(point_triangle_distance({1.0, -3.0, 0.0}, a, b, c) ==
          doctest::Approx(3.0).epsilon(1e-12));
    // Beyond vertex b.
    CHECK(point_triangle_distance({5.0, -1.0, 0.0}, a, b, c) ==
          doctest::Approx(std::sqrt(9.0 + 1.0)).epsilon(1e-12));
}

TEST_CASE("distance agrees with dense barycentric sampling") {
    auto rng = substream_rng(7, "test.tridist");
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    for (int c = 0; c < 25; ++c) {
        std::array<double, 3> tri[3], p;
        for (auto& v : tri)
            v = {uni(rng), uni(rng), uni(rng)};
        p = {uni(rng), uni(rng), uni(rng)};

        const double got = point_triangle_distance(p, tri[0], tri[1], tri[2]);
        // Sampling error is quadratic in the grid pitch for points off the
        // surface; skip the rare near-touching draw where 1e-4 would need an
        // impractically fine grid (the exact on-surface case has its own
        // closed-form tests above).
        if (got < 0.05) continue;
        double best = std::numeric_limits<double>::infinity();
        const int steps = 2000;
        for (int i = 0; i <= steps; ++i)
            for (int j = 0; j <= steps - i; ++j) {
                const double s = static_cast<double>(i) / steps;
                const double t = static_cast<double>(j) / steps;
                double d2 = 0.0;
                for (int k = 0; k < 3; ++k) {
                    const double q = tri[0][k] + s * (tri[1][k] - tri[0][k]) +
                                     t * (tri[2][k] - tri[0][k]);
                    d2 += (p[k] - q) * (p[k] - q);
                }
                best = std::min(best, d2);
            }
        best = std::sqrt(best);
        CAPTURE(c);
        CHECK(got <= best + 1e-12);  // the exact result can only be closer
        CHECK(best - got < 1e-4);    // and the dense grid approaches it
    }
}

// --- RigidTransform --------------------------------------------------------

TEST_CASE("transform validation enforces orthonormality and handedness") {
    CHECK_NOTHROW(validate_transform(RigidTransform{}));
    CHECK_NOTHROW(validate_transform(rot_z(0.3, {1, 2, 3})));

    RigidTransform scaled = rot_z(0.3);
    for (auto& row : scaled.rotation)
        for (auto& v : row) v *= 1.001;
    CHECK_THROWS_AS(validate_transform(scaled), ValidationError);

    RigidTransform mirror;
    mirror.rotation[0][0] = -1.0;  // reflection: det = -1
    CHECK_THROWS_AS(validate_transform(mirror), ValidationError);
}

TEST_CASE("applying a quarter turn about z plus an offset") {
    const RigidTransform t = rot_z(M_PI / 2, {10, 0, 0});
    const auto q = t.apply({1, 0, 0});
    CHECK(q[0] == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(q[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(q[2] == doctest::Approx(0.0).epsilon(1e-12));
}

// --- MeshIndex -------------------------------------------------------------

TEST_CASE("grid-accelerated distances equal a full triangle scan") {
    for (std::uint64_t seed : {21u, 22u}) {
        MaskVolume v(8, 8, 8, kUnit);
        auto vol_rng = substream_rng(seed, "test.meshidx");
        std::bernoulli_distribution flip(0.3);
        for (auto& b : v.voxels) b = flip(vol_rng);
        const Mesh m = marching_cubes(v);
        if (m.empty()) continue;

        const MeshIndex index(m);
        std::uniform_real_distribution<double> uni(-4.0, 12.0);
        for (int c = 0; c < 200; ++c) {
            const std::array<double, 3> p = {uni(vol_rng), uni(vol_rng),
                                             uni(vol_rng)};
            const double want = brute_distance(p, m);
            CAPTURE(seed);
            CAPTURE(c);
            CHECK(index.distance(p) == doctest::Approx(want).epsilon(1e-12));
            const auto q = index.closest_point(p);
            const double via_point = std::sqrt(
                (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                (p[2] - q[2]) * (p[2] - q[2]));
            CHECK(via_point == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("an empty mesh cannot be indexed") {
    CHECK_THROWS_AS(MeshIndex(Mesh{}), ValidationError);
}

// --- ICP -------------------------------------------------------------------

TEST_CASE("a cloud sampled on the mesh aligns to the identity") {
    const Mesh m = blob_mesh();
    const PointCloud cloud(m.vertices.begin(), m.vertices.end());
    const IcpResult r = icp_align(cloud, m);
    CHECK(r.final_rms < 1e-9);
    CHECK(rotation_angle(r.transform.rotation) < 1e-9);
    CHECK(norm3(r.transform.translation_mm) < 1e-9);
}

TEST_CASE("ICP recovers a pure translation of (5, -3, 2) mm") {
    const Mesh m = blob_mesh();
    const std::array<double, 3> d = {5.0, -3.0, 2.0};
    PointCloud cloud;
    for (const auto& v : m.vertices)
        cloud.push_back({v[0] + d[0], v[1] + d[1], v[2] + d[2]});

    const IcpResult r = icp_align(cloud, m);
    // Recovered transform must undo the shift: R ~ I, t ~ -d.
    CHECK(rotation_angle(r.transform.rotation) < 1e-3);
    CHECK(std::abs(r.transform.translation_mm[0] + d[0]) < 1e-3);
    CHECK(std::abs(r.transform.translation_mm[1] + d[1]) < 1e-3);
    CHECK(std::abs(r.transform.translation_mm[2] + d[2]) < 1e-3);
}

TEST_CASE("ICP recovers a ten-degree rotation about z") {
    const Mesh m = blob_mesh();
    const double angle = 10.0 * M_PI / 180.0;
    const RigidTransform forward = rot_z(angle);
    PointCloud cloud;
    for (const auto& v : m.vertices) cloud.push_back(forward.apply(v));

    const IcpResult r = icp_align(cloud, m);
    // Composition with the forward rotation must cancel to ~identity.
    CHECK(composed_angle(r.transform, forward) < 1e-3);

    // A deeper budget drives the residual to numerical zero: once every
    // correspondence is its own source point the fit inverts exactly.
    // acos of a near-3 trace bottoms out around sqrt(eps) ~ 1e-8, so the
    // angle check cannot meaningfully go tighter than ~1e-6.
    const IcpResult deep = icp_align(cloud, m, 300, 1e-12);
    CHECK(deep.final_rms < 1e-9);
    CHECK(composed_angle(deep.transform, forward) < 1e-6);
}

TEST_CASE("ICP recovers a combined rotation and translation") {
    const Mesh m = blob_mesh();
    const double angle = 10.0 * M_PI / 180.0;
    const RigidTransform forward = rot_z(angle, {5.0, -3.0, 2.0});
    PointCloud cloud;
    for (const auto& v : m.vertices) cloud.push_back(forward.apply(v));

    const IcpResult r = icp_align(cloud, m);
    CHECK(composed_angle(r.transform, forward) < 1e-3);
    // Residual translation of the composition.
    const auto t_comp = r.transform.apply(forward.apply({0, 0, 0}));
    CHECK(norm3(t_comp) < 1e-3);

    const IcpResult deep = icp_align(cloud, m, 300, 1e-12);
    CHECK(deep.final_rms < 1e-9);
    CHECK(norm3(deep.transform.apply(forward.apply({0, 0, 0}))) < 1e-9);
}

TEST_CASE("ICP residuals never increase across iterations") {
    const Mesh m = blob_mesh();
    const RigidTransform forward = rot_z(0.12, {2.0, 1.0, -1.5});
    PointCloud cloud;
    for (const auto& v : m.vertices) cloud.push_back(forward.apply(v));
    const IcpResult r = icp_align(cloud, m);
    REQUIRE_FALSE(r.rms_history.empty());
    for (std::size_t i = 1; i < r.rms_history.size(); ++i)
        CHECK(r.rms_history[i] <= r.rms_history[i - 1] + 1e-12);
    CHECK_NOTHROW(validate_transform(r.transform));
}

TEST_CASE("degenerate clouds are rejected") {
    const Mesh m = blob_mesh();
    CHECK_THROWS_AS(icp_align({{0, 0, 0}, {1, 1, 1}}, m), DegeneracyError);

    PointCloud line;
    for (int i = 0; i < 10; ++i) line.push_back({1.0 * i, 2.0 * i, 3.0 * i});
    CHECK_THROWS_AS(icp_align(line, m), DegeneracyError);

    PointCloud same(10, {1.0, 2.0, 3.0});
    CHECK_THROWS_AS(icp_align(same, m), DegeneracyError);

    const PointCloud ok = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    CHECK_THROWS_AS(icp_align(ok, Mesh{}), ValidationError);
    CHECK_THROWS_AS(icp_align(ok, m, 0), ValidationError);
}

// --- c2m_distances ---------------------------------------------------------

TEST_CASE("cloud-to-mesh distances report mm, pixels, and a histogram") {
    Mesh tri;
    tri.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 2, 0}};
    tri.triangles = {{0, 1, 2}};
    const PointCloud cloud = {{0.5, 0.5, 0.0},   // on the face: 0
                              {2.0 / 3, 2.0 / 3, 1.29},  // above centroid
                              {1.0, -0.645, 0.0}};       // beyond edge ab

    const C2mReport r = c2m_distances(cloud, tri, RigidTransform{}, 4);
    REQUIRE(r.distances_mm.size() == 3);
    CHECK(r.distances_mm[0] == 0.0);
    CHECK(r.distances_mm[1] == doctest::Approx(1.29).epsilon(1e-12));
    CHECK(r.distances_mm[2] == doctest::Approx(0.645).epsilon(1e-12));
    CHECK(r.distances_px[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.distances_px[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.max_mm == doctest::Approx(1.29).epsilon(1e-12));
    CHECK(r.mean_mm == doctest::Approx((0.0 + 1.29 + 0.645) / 3).epsilon(1e-12));

    REQUIRE(r.bin_edges.size() == 5);
    CHECK(r.bin_edges.front() == 0.0);
    CHECK(r.bin_edges.back() == doctest::Approx(1.29).epsilon(1e-12));
    CHECK(std::accumulate(r.bin_counts.begin(), r.bin_counts.end(),
                          std::size_t{0}) == cloud.size());
}

TEST_CASE("all-zero distances degenerate to a single-bin histogram") {
    Mesh tri;
    tri.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 2, 0}};
    tri.triangles = {{0, 1, 2}};
    const PointCloud on = {{0.1, 0.1, 0.0}, {0.5, 0.5, 0.0}, {0.2, 1.0, 0.0}};
    const C2mReport r = c2m_distances(on, tri, RigidTransform{}, 8);
    CHECK(r.max_mm == 0.0);
    CHECK(r.bin_counts[0] == 3);
    CHECK(std::accumulate(r.bin_counts.begin(), r.bin_counts.end(),
                          std::size_t{0}) == 3);
}

TEST_CASE("c2m distances are invariant under a shared rigid motion") {
    const Mesh m = blob_mesh();
    auto rng = substream_rng(5, "test.c2minv");
    std::uniform_real_distribution<double> uni(-2.0, 14.0);
    PointCloud cloud;
    for (int i = 0; i < 50; ++i) cloud.push_back({uni(rng), uni(rng), uni(rng)});

    const C2mReport base = c2m_distances(cloud, m, RigidTransform{}, 10);

    const RigidTransform motion = rot_z(0.7, {3.0, -1.0, 2.5});
    Mesh moved = m;
    for (auto& v : moved.vertices) v = motion.apply(v);
    PointCloud moved_cloud;
    for (const auto& p : cloud) moved_cloud.push_back(motion.apply(p));

    const C2mReport shifted = c2m_distances(moved_cloud, moved, RigidTransform{}, 10);
    REQUIRE(shifted.distances_mm.size() == base.distances_mm.size());
    for (std::size_t i = 0; i < base.distances_mm.size(); ++i)
        CHECK(shifted.distances_mm[i] ==
              doctest::Approx(base.distances_mm[i]).epsilon(1e-9));
}

TEST_CASE("c2m validates its inputs") {
    Mesh tri;
    tri.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    tri.triangles = {{0, 1, 2}};
    CHECK_THROWS_AS(c2m_distances({}, tri, RigidTransform{}, 4), ValidationError);
    CHECK_THROWS_AS(c2m_distances({{0, 0, 0}}, Mesh{}, RigidTransform{}, 4),
                    ValidationError);
    CHECK_THROWS_AS(c2m_distances({{0, 0, 0}}, tri, RigidTransform{}, 0),
                    ValidationError);
    RigidTransform bad;
    bad.rotation[0][0] = 2.0;
    CHECK_THROWS_AS(c2m_distances({{0, 0, 0}}, tri, bad, 4), ValidationError);
}

// --- JSON ------------------------------------------------------------------

TEST_CASE("reports serialize with the documented key structure") {
    const MaskVolume gt = from_slices({bits({1, 1, 0, 0})}, 2, 2);
    const MaskVolume pred = from_slices({bits({1, 0, 0, 0})}, 2, 2);
    const auto dsc = to_json(dsc_volume(pred, gt));
    CHECK(dsc["mean"] == doctest::Approx(2.0 / 3.0));
    CHECK(dsc["per_slice"].size() == 1);
    CHECK(dsc.contains("std"));
    CHECK(dsc.contains("excluded_both_empty"));

    const auto t = to_json(rot_z(0.5, {1, 2, 3}));
    CHECK(t["rotation"].size() == 3);
    CHECK(t["translation_mm"] == nlohmann::json::array({1.0, 2.0, 3.0}));

    Mesh tri;
    tri.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 2, 0}};
    tri.triangles = {{0, 1, 2}};
    const auto c2m =
        to_json(c2m_distances({{0.5, 0.5, 1.0}}, tri, RigidTransform{}, 2));
    CHECK(c2m["mean_mm"] == doctest::Approx(1.0));
    CHECK(c2m["count"] == 1);
    CHECK(c2m["hist"]["counts"].size() == 2);
}
