#include "vseg/postrecon.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <unordered_map>
#include <vector>

#include "vseg/common.hpp"

namespace vseg {

MaskVolume argmax_mask(const Tensor4& probs, std::array<double, 3> spacing_mm) {
    if (probs.shape.c != 2)
        throw ShapeError("argmax_mask: expected a 2-channel probability stack, got " +
                         probs.shape.str());
    MaskVolume out(probs.shape.w, probs.shape.h, probs.shape.n, spacing_mm);
    for (int z = 0; z < probs.shape.n; ++z)
        for (int y = 0; y < probs.shape.h; ++y)
            for (int x = 0; x < probs.shape.w; ++x)
                out.at(x, y, z) = probs.at(z, 1, y, x) > 0.5f ? 1 : 0;
    return out;
}

namespace {

struct UnionFind {
    std::vector<std::int32_t> parent;

    std::int32_t make() {
        parent.push_back(static_cast<std::int32_t>(parent.size()));
        return parent.back();
    }
    std::int32_t find(std::int32_t a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];  // path halving
            a = parent[a];
        }
        return a;
    }
    void unite(std::int32_t a, std::int32_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace

ComponentResult largest_component(const MaskVolume& v, std::size_t min_size) {
    for (auto b : v.voxels)
        if (b > 1) throw ValidationError("largest_component: volume is not binary");

    ComponentResult res;
    res.mask = MaskVolume(v.nx, v.ny, v.nz, v.spacing_mm);

    std::vector<std::int32_t> label(v.size(), -1);
    UnionFind uf;

    // Offsets to already-scanned 26-neighbors (z, then y, then x ascending).
    std::vector<std::array<int, 3>> prev;
    for (int dz = -1; dz <= 0; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0))))
                    prev.push_back({dx, dy, dz});
            }

    for (int z = 0; z < v.nz; ++z)
        for (int y = 0; y < v.ny; ++y)
            for (int x = 0; x < v.nx; ++x) {
                const std::size_t i = v.index(x, y, z);
                if (!v.voxels[i]) continue;
                std::int32_t assigned = -1;
                for (const auto& [dx, dy, dz] : prev) {
                    const int px = x + dx, py = y + dy, pz = z + dz;
                    if (px < 0 || py < 0 || pz < 0 || px >= v.nx || py >= v.ny)
                        continue;
                    const std::int32_t nl = label[v.index(px, py, pz)];
                    if (nl < 0) continue;
                    if (assigned < 0)
                        assigned = nl;
                    else
                        uf.unite(assigned, nl);
                }
                label[i] = assigned >= 0 ? assigned : uf.make();
            }

    // Component statistics keyed by resolved root.
    std::unordered_map<std::int32_t, std::pair<std::size_t, std::size_t>> stats;
    for (std::size_t i = 0; i < label.size(); ++i) {
        if (label[i] < 0) continue;
        const std::int32_t root = uf.find(label[i]);
        auto [it, fresh] = stats.try_emplace(root, 0, i);
        it->second.first += 1;
        if (fresh) it->second.second = i;  // first voxel in scan order
    }
    res.components_before = static_cast<int>(stats.size());

    std::int32_t best = -1;
    std::size_t best_size = 0, best_first = 0;
    for (const auto& [root, s] : stats) {
        const auto [size, first] = s;
        if (size < min_size) continue;  // bwareaopen-style pre-filter
        if (size > best_size || (size == best_size && first < best_first)) {
            best = root;
            best_size = size;
            best_first = first;
        }
    }

    if (best < 0) {
        res.empty = true;
        return res;
    }
    for (std::size_t i = 0; i < label.size(); ++i)
        if (label[i] >= 0 && uf.find(label[i]) == best) res.mask.voxels[i] = 1;
    res.voxel_count = best_size;
    return res;
}

// --- Marching cubes --------------------------------------------------------

namespace {

// Cube corners (x, y, z offsets) and the edges between them.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
// Faces as corner cycles, counterclockwise when viewed from outside the cube.
constexpr int kFace[6][4] = {{0, 3, 2, 1},   // z = 0
                             {4, 5, 6, 7},   // z = 1
                             {0, 1, 5, 4},   // y = 0
                             {2, 3, 7, 6},   // y = 1
                             {0, 4, 7, 3},   // x = 0
                             {1, 2, 6, 5}};  // x = 1

int edge_between(int a, int b) {
    for (int e = 0; e < 12; ++e)
        if ((kEdge[e][0] == a && kEdge[e][1] == b) ||
            (kEdge[e][0] == b && kEdge[e][1] == a))
            return e;
    return -1;
}

/// Per-configuration contour loops as cyclic edge-index lists. Built once
/// by contouring every face of the cube and stitching the directed segments
/// into loops; a face's segments depend only on its own corner pattern, so
/// the two cells sharing a face always produce the same contour there and
/// the global surface is watertight (including ambiguous saddle faces,
/// where the rule joins the diagonal inside corners).
struct CaseTable {
    std::vector<std::vector<int>> loops[256];

    CaseTable() {
        for (int pattern = 0; pattern < 256; ++pattern) build(pattern);
    }

    void build(int pattern) {
        const auto inside = [&](int corner) { return (pattern >> corner) & 1; };

        // next_edge[e] = entry edge of the directed face segment leaving e.
        int next_edge[12];
        std::fill(std::begin(next_edge), std::end(next_edge), -1);
        for (const auto& face : kFace) {
            // Crossings in cycle order; they alternate exit/entry, so each
            // exit pairs with the crossing that follows it.
            int crossings[4], kinds[4], n = 0;
            for (int i = 0; i < 4; ++i) {
                const int a = face[i], b = face[(i + 1) % 4];
                if (inside(a) == inside(b)) continue;
                crossings[n] = edge_between(a, b);
                kinds[n] = inside(a);  // traversing in->out marks an exit
                ++n;
            }
            for (int i = 0; i < n; ++i)
                if (kinds[i] == 1) next_edge[crossings[i]] = crossings[(i + 1) % n];
        }

        bool used[12] = {};
        for (int start = 0; start < 12; ++start) {
            if (next_edge[start] < 0 || used[start]) continue;
            std::vector<int> loop;
            for (int e = start; !used[e]; e = next_edge[e]) {
                used[e] = true;
                loop.push_back(e);
            }
            // Face traversal order yields inward-facing loops; reverse for
            // outward normals.
            std::reverse(loop.begin(), loop.end());
            loops[pattern].push_back(std::move(loop));
        }
    }
};

const CaseTable& case_table() {
    static const CaseTable table;
    return table;
}

}  // namespace

Mesh marching_cubes(const MaskVolume& v, double iso) {
    if (!(iso > 0.0 && iso < 1.0))
        throw ValidationError("marching_cubes: iso must lie strictly inside (0, 1)");
    for (auto b : v.voxels)
        if (b > 1) throw ValidationError("marching_cubes: volume is not binary");

    const auto& table = case_table();
    // Sample grid including the zero border: voxel coordinates -1 .. n.
    const auto sample = [&](int x, int y, int z) -> int {
        if (x < 0 || y < 0 || z < 0 || x >= v.nx || y >= v.ny || z >= v.nz) return 0;
        return v.at(x, y, z);
    };

    Mesh mesh;
    std::unordered_map<std::uint64_t, int> edge_vertex;
    const std::uint64_t m = static_cast<std::uint64_t>(
                                std::max({v.nx, v.ny, v.nz})) + 3;
    const auto midpoint_mm = [&](int bx, int by, int bz,
                                 int e) -> std::array<double, 3> {
        const int a = kEdge[e][0], b = kEdge[e][1];
        return {(bx + (kCorner[a][0] + kCorner[b][0]) * 0.5) * v.spacing_mm[0],
                (by + (kCorner[a][1] + kCorner[b][1]) * 0.5) * v.spacing_mm[1],
                (bz + (kCorner[a][2] + kCorner[b][2]) * 0.5) * v.spacing_mm[2]};
    };

    // Vertices sit at crossed-edge midpoints; welding keys an edge by its
    // lower lattice endpoint plus its axis so neighboring cells share them.
    const auto weld = [&](int bx, int by, int bz, int e) -> int {
        const int a = kEdge[e][0], b = kEdge[e][1];
        const int lx = bx + std::min(kCorner[a][0], kCorner[b][0]);
        const int ly = by + std::min(kCorner[a][1], kCorner[b][1]);
        const int lz = bz + std::min(kCorner[a][2], kCorner[b][2]);
        const int axis = (kCorner[a][0] != kCorner[b][0])   ? 0
                         : (kCorner[a][1] != kCorner[b][1]) ? 1
                                                            : 2;
        const std::uint64_t key =
            ((static_cast<std::uint64_t>(lz + 1) * m + (ly + 1)) * m + (lx + 1)) * 3 +
            axis;
        const auto [it, fresh] =
            edge_vertex.try_emplace(key, static_cast<int>(mesh.vertices.size()));
        if (fresh) mesh.vertices.push_back(midpoint_mm(bx, by, bz, e));
        return it->second;
    };

    std::vector<int> ring;
    for (int bz = -1; bz < v.nz; ++bz)
        for (int by = -1; by < v.ny; ++by)
            for (int bx = -1; bx < v.nx; ++bx) {
                int pattern = 0;
                for (int c = 0; c < 8; ++c)
                    pattern |= sample(bx + kCorner[c][0], by + kCorner[c][1],
                                      bz + kCorner[c][2])
                               << c;
                if (pattern == 0 || pattern == 255) continue;
                for (const auto& loop : table.loops[pattern]) {
                    ring.clear();
                    for (int e : loop) ring.push_back(weld(bx, by, bz, e));
                    if (ring.size() == 3) {
                        mesh.triangles.push_back({ring[0], ring[1], ring[2]});
                        continue;
                    }
                    // Larger loops fan around a private centroid vertex:
                    // fan diagonals between welded vertices could coincide
                    // across neighboring cells and stack four triangles on
                    // one edge, while centroid spokes are never shared.
                    std::array<double, 3> c = {0.0, 0.0, 0.0};
                    for (int e : loop) {
                        const auto p = midpoint_mm(bx, by, bz, e);
                        for (int k = 0; k < 3; ++k) c[k] += p[k];
                    }
                    for (int k = 0; k < 3; ++k) c[k] /= static_cast<double>(loop.size());
                    const int center = static_cast<int>(mesh.vertices.size());
                    mesh.vertices.push_back(c);
                    for (std::size_t i = 0; i < ring.size(); ++i)
                        mesh.triangles.push_back(
                            {center, ring[i], ring[(i + 1) % ring.size()]});
                }
            }
    return mesh;
}

}  // namespace vseg
