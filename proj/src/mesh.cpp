#include "vseg/mesh.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "vseg/common.hpp"

namespace vseg {

void validate_mesh(const Mesh& m) {
    const int n = static_cast<int>(m.vertices.size());
    for (std::size_t t = 0; t < m.triangles.size(); ++t) {
        const auto& tri = m.triangles[t];
        for (int idx : tri)
            if (idx < 0 || idx >= n)
                throw ValidationError("mesh triangle " + std::to_string(t) +
                                      " references vertex " + std::to_string(idx) +
                                      " of " + std::to_string(n));
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
            throw ValidationError("mesh triangle " + std::to_string(t) +
                                  " repeats a vertex index");
    }
}

namespace {

std::array<double, 3> facet_normal(const Mesh& m, const std::array<int, 3>& tri) {
    const auto& a = m.vertices[tri[0]];
    const auto& b = m.vertices[tri[1]];
    const auto& c = m.vertices[tri[2]];
    const double ux = b[0] - a[0], uy = b[1] - a[1], uz = b[2] - a[2];
    const double vx = c[0] - a[0], vy = c[1] - a[1], vz = c[2] - a[2];
    std::array<double, 3> n = {uy * vz - uz * vy, uz * vx - ux * vz,
                               ux * vy - uy * vx};
    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    if (len > 0.0)
        for (double& x : n) x /= len;
    return n;
}

}  // namespace

void write_stl_ascii(const Mesh& m, const std::filesystem::path& path,
                     const std::string& solid_name) {
    validate_mesh(m);
    std::ofstream os(path);
    if (!os) throw IoError("cannot write STL: " + path.string());
    os.precision(17);
    os << "solid " << solid_name << "\n";
    for (const auto& tri : m.triangles) {
        const auto n = facet_normal(m, tri);
        os << "  facet normal " << n[0] << " " << n[1] << " " << n[2] << "\n"
           << "    outer loop\n";
        for (int idx : tri) {
            const auto& v = m.vertices[idx];
            os << "      vertex " << v[0] << " " << v[1] << " " << v[2] << "\n";
        }
        os << "    endloop\n  endfacet\n";
    }
    os << "endsolid " << solid_name << "\n";
    if (!os) throw IoError("write failure on STL: " + path.string());
}

void write_obj(const Mesh& m, const std::filesystem::path& path) {
    validate_mesh(m);
    std::ofstream os(path);
    if (!os) throw IoError("cannot write OBJ: " + path.string());
    os.precision(17);
    for (const auto& v : m.vertices)
        os << "v " << v[0] << " " << v[1] << " " << v[2] << "\n";
    for (const auto& t : m.triangles)
        os << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
    if (!os) throw IoError("write failure on OBJ: " + path.string());
}

Mesh read_obj(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open OBJ: " + path.string());

    Mesh m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            std::array<double, 3> v{};
            if (!(ls >> v[0] >> v[1] >> v[2]))
                throw FormatError("OBJ " + path.string() + ":" +
                                  std::to_string(lineno) + ": malformed vertex");
            m.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<int> face;
            std::string item;
            while (ls >> item) {
                // Accept "i", "i/t", "i/t/n"; only the vertex index is used.
                const std::size_t slash = item.find('/');
                const std::string head = item.substr(0, slash);
                int idx = 0;
                try {
                    idx = std::stoi(head);
                } catch (const std::exception&) {
                    throw FormatError("OBJ " + path.string() + ":" +
                                      std::to_string(lineno) +
                                      ": malformed face index '" + item + "'");
                }
                if (idx < 1 || idx > static_cast<int>(m.vertices.size()))
                    throw FormatError("OBJ " + path.string() + ":" +
                                      std::to_string(lineno) +
                                      ": face index out of range: " + head);
                face.push_back(idx - 1);
            }
            if (face.size() < 3)
                throw FormatError("OBJ " + path.string() + ":" +
                                  std::to_string(lineno) + ": face with fewer than 3 vertices");
            for (std::size_t i = 1; i + 1 < face.size(); ++i)
                m.triangles.push_back({face[0], face[i], face[i + 1]});
        }
        // Other record types (vn, vt, o, g, s, mtllib, usemtl) are ignored.
    }
    validate_mesh(m);
    return m;
}

}  // namespace vseg
