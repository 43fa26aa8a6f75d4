// Triangle meshes in physical (mm) coordinates plus STL/OBJ export and OBJ
// import.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace vseg {

struct Mesh {
    std::vector<std::array<double, 3>> vertices;   // mm
    std::vector<std::array<int, 3>> triangles;     // vertex indices

    bool empty() const { return triangles.empty(); }
};

/// Throws ValidationError on out-of-range indices or degenerate
/// (repeated-index) triangles.
void validate_mesh(const Mesh& m);

/// ASCII STL with per-facet normals recomputed from the vertex winding.
void write_stl_ascii(const Mesh& m, const std::filesystem::path& path,
                     const std::string& solid_name = "mesh");

void write_obj(const Mesh& m, const std::filesystem::path& path);

/// Reads v/f records; faces with more than 3 vertices are fan-triangulated.
Mesh read_obj(const std::filesystem::path& path);

}  // namespace vseg
