// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/ply.hpp"
#include "dnsplat/types.hpp"

#include <array>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace dnsplat {

template <typename T> struct TriangleMesh {
    std::vector<Vec3<T>> vertices;
    std::vector<std::array<int, 3>> triangles;

    bool empty() const { return triangles.empty(); }

    T triangle_area(std::size_t t) const {
        const auto &f = triangles[t];
        return (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]).norm() / T(2);
    }

    T surface_area() const {
        T a = T(0);
        for (std::size_t t = 0; t < triangles.size(); ++t) a += triangle_area(t);
        return a;
    }

    /// True when every index addresses an existing vertex.
    bool indices_valid() const {
        for (const auto &f : triangles)
            for (int i : f)
                if (i < 0 || static_cast<std::size_t>(i) >= vertices.size()) return false;
        return true;
    }
};

class MeshFormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

template <typename T> std::string save_obj(const TriangleMesh<T> &mesh) {
    std::string out = "# dnsplat mesh\n";
    for (const auto &v : mesh.vertices) {
        out += "v " + detail::shortest_repr(double(v.x())) + ' ' + detail::shortest_repr(double(v.y())) + ' ' +
               detail::shortest_repr(double(v.z())) + '\n';
    }
    for (const auto &f : mesh.triangles) {
        out += "f " + std::to_string(f[0] + 1) + ' ' + std::to_string(f[1] + 1) + ' ' + std::to_string(f[2] + 1) + '\n';
    }
    return out;
}

/// Binary little-endian PLY with float vertices and int32 triangle lists.
template <typename T> std::string save_mesh_ply(const TriangleMesh<T> &mesh) {
    std::string out = "ply\nformat binary_little_endian 1.0\n";
    out += "element vertex " + std::to_string(mesh.vertices.size()) + "\n";
    out += "property float x\nproperty float y\nproperty float z\n";
    out += "element face " + std::to_string(mesh.triangles.size()) + "\n";
    out += "property list uchar int vertex_indices\nend_header\n";
    for (const auto &v : mesh.vertices)
        for (int c = 0; c < 3; ++c) detail::put_le(out, static_cast<float>(v[c]));
    for (const auto &f : mesh.triangles) {
        detail::put_le(out, std::uint8_t{3});
        for (int i : f) detail::put_le(out, static_cast<std::int32_t>(i));
    }
    return out;
}

namespace detail {

template <typename V> V get_le(std::string_view bytes, std::size_t &pos) {
    if (pos + sizeof(V) > bytes.size()) throw MeshFormatError("mesh: truncated body");
    V v;
    std::memcpy(&v, bytes.data() + pos, sizeof(V));
    pos += sizeof(V);
    return v;
}

template <typename T> TriangleMesh<T> load_obj(std::string_view text) {
    TriangleMesh<T> mesh;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        const auto tok = split_ws(line);
        if (tok.empty() || tok[0][0] == '#') continue;
        if (tok[0] == "v") {
            if (tok.size() < 4) throw MeshFormatError("obj: short vertex line");
            mesh.vertices.emplace_back(T(parse_double(tok[1])), T(parse_double(tok[2])), T(parse_double(tok[3])));
        } else if (tok[0] == "f") {
            std::vector<int> idx;
            for (std::size_t i = 1; i < tok.size(); ++i) {
                const std::string_view s = tok[i].substr(0, tok[i].find('/'));
                int v                    = 0;
                const auto r             = std::from_chars(s.data(), s.data() + s.size(), v);
                if (r.ec != std::errc() || v == 0) throw MeshFormatError("obj: bad face index");
                idx.push_back(v > 0 ? v - 1 : static_cast<int>(mesh.vertices.size()) + v);
            }
            if (idx.size() < 3) throw MeshFormatError("obj: face with fewer than 3 vertices");
            for (std::size_t i = 1; i + 1 < idx.size(); ++i) mesh.triangles.push_back({idx[0], idx[i], idx[i + 1]});
        }
    }
    return mesh;
}

// Reads the subset written by save_mesh_ply (float or double xyz, uchar/int lists).
template <typename T> TriangleMesh<T> load_binary_mesh_ply(std::string_view bytes) {
    const std::size_t end = bytes.find("end_header\n");
    if (end == std::string_view::npos) throw MeshFormatError("ply: missing end_header");
    std::istringstream hdr{std::string(bytes.substr(0, end))};
    std::string line;
    std::size_t nv = 0, nf = 0;
    bool vertex_double = false, in_vertex = false;
    int vertex_props = 0;
    while (std::getline(hdr, line)) {
        const auto tok = split_ws(line);
        if (tok.empty()) continue;
        if (tok[0] == "format" && (tok.size() < 2 || tok[1] != "binary_little_endian")) {
            throw MeshFormatError("ply: only binary_little_endian meshes are supported");
        }
        if (tok[0] == "element" && tok.size() == 3) {
            in_vertex = tok[1] == "vertex";
            (in_vertex ? nv : nf) = static_cast<std::size_t>(parse_double(tok[2]));
        } else if (tok[0] == "property" && in_vertex) {
            if (tok.size() != 3 || (tok[1] != "float" && tok[1] != "double")) {
                throw MeshFormatError("ply: unsupported vertex property");
            }
            vertex_double = tok[1] == "double";
            ++vertex_props;
        }
    }
    if (vertex_props != 3) throw MeshFormatError("ply: expected x, y, z vertex properties");
    TriangleMesh<T> mesh;
    std::size_t pos = end + std::strlen("end_header\n");
    for (std::size_t i = 0; i < nv; ++i) {
        Vec3<T> v;
        for (int c = 0; c < 3; ++c) {
            v[c] = vertex_double ? T(get_le<double>(bytes, pos)) : T(get_le<float>(bytes, pos));
        }
        mesh.vertices.push_back(v);
    }
    for (std::size_t i = 0; i < nf; ++i) {
        const int n = get_le<std::uint8_t>(bytes, pos);
        std::vector<int> idx(static_cast<std::size_t>(n));
        for (auto &v : idx) v = get_le<std::int32_t>(bytes, pos);
        for (int k = 1; k + 1 < n; ++k) mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
    }
    if (!mesh.indices_valid()) throw MeshFormatError("ply: face index out of range");
    return mesh;
}

} // namespace detail

/// Parses OBJ or binary PLY, chosen by the leading magic.
template <typename T> TriangleMesh<T> load_mesh(std::string_view bytes) {
    if (bytes.starts_with("ply")) return detail::load_binary_mesh_ply<T>(bytes);
    TriangleMesh<T> m = detail::load_obj<T>(bytes);
    if (!m.indices_valid()) throw MeshFormatError("obj: face index out of range");
    return m;
}

} // namespace dnsplat
