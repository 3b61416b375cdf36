// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/mc_tables.hpp"
#include "dnsplat/mesh.hpp"
#include "dnsplat/parallel.hpp"
#include "dnsplat/tsdf.hpp"

#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

namespace dnsplat {

inline constexpr double kMinTriangleArea = 1e-12;

/// Extracts the zero level set. A cube contributes only when all eight corner samples have
/// positive weight; vertices shared between cubes are welded, so closed surfaces come out watertight.
template <typename T> TriangleMesh<T> marching_cubes(const TsdfVolume<T> &vol, const ExecutionPolicy &exec = {}) {
    const int nx = vol.dims[0], ny = vol.dims[1], nz = vol.dims[2];
    TriangleMesh<T> mesh;
    if (nx < 2 || ny < 2 || nz < 2) return mesh;

    // An edge is keyed by its lower corner voxel and axis.
    auto edge_key = [&](int i, int j, int k, int e) -> std::uint64_t {
        const auto &c0 = mc::kCornerOffset[static_cast<std::size_t>(mc::kEdgeCorners[static_cast<std::size_t>(e)][0])];
        const auto &c1 = mc::kCornerOffset[static_cast<std::size_t>(mc::kEdgeCorners[static_cast<std::size_t>(e)][1])];
        int axis = 0;
        while (c0[static_cast<std::size_t>(axis)] == c1[static_cast<std::size_t>(axis)]) ++axis;
        const int bi = i + std::min(c0[0], c1[0]), bj = j + std::min(c0[1], c1[1]), bk = k + std::min(c0[2], c1[2]);
        return static_cast<std::uint64_t>(vol.index(bi, bj, bk)) * 3 + static_cast<std::uint64_t>(axis);
    };

    struct Slab {
        std::vector<std::array<std::uint64_t, 3>> tris;
        std::unordered_map<std::uint64_t, Vec3<T>> points;
    };
    const std::size_t n_slabs = static_cast<std::size_t>(nz - 1);
    std::vector<Slab> slabs(n_slabs);
    parallel_chunks(n_slabs, exec.worker_count(n_slabs), [&](int, std::size_t kb, std::size_t ke) {
        for (std::size_t ks = kb; ks < ke; ++ks) {
            Slab &slab  = slabs[ks];
            const int k = static_cast<int>(ks);
            for (int j = 0; j + 1 < ny; ++j) {
                for (int i = 0; i + 1 < nx; ++i) {
                    std::array<T, 8> val{};
                    std::array<Vec3<T>, 8> pos;
                    int config    = 0;
                    bool observed = true;
                    for (int c = 0; c < 8; ++c) {
                        const auto &o = mc::kCornerOffset[static_cast<std::size_t>(c)];
                        const std::size_t idx = vol.index(i + o[0], j + o[1], k + o[2]);
                        if (!(vol.weight[idx] > T(0))) {
                            observed = false;
                            break;
                        }
                        val[static_cast<std::size_t>(c)] = vol.tsdf[idx];
                        pos[static_cast<std::size_t>(c)] = vol.voxel_center(i + o[0], j + o[1], k + o[2]);
                        if (vol.tsdf[idx] <= T(0)) config |= 1 << c;
                    }
                    if (!observed || config == 0 || config == 255) continue;
                    const auto &row = mc::kTriangleTable[static_cast<std::size_t>(config)];
                    for (int t = 0; row[static_cast<std::size_t>(t)] != -1; t += 3) {
                        std::array<std::uint64_t, 3> tri{};
                        for (int v = 0; v < 3; ++v) {
                            const int e  = row[static_cast<std::size_t>(t + v)];
                            const auto &ec = mc::kEdgeCorners[static_cast<std::size_t>(e)];
                            const T fa = val[static_cast<std::size_t>(ec[0])], fb = val[static_cast<std::size_t>(ec[1])];
                            const T s  = std::abs(fb - fa) > T(1e-12) ? std::clamp(fa / (fa - fb), T(0), T(1)) : T(0.5);
                            tri[static_cast<std::size_t>(v)] = edge_key(i, j, k, e);
                            slab.points.try_emplace(tri[static_cast<std::size_t>(v)],
                                                    pos[static_cast<std::size_t>(ec[0])] +
                                                        s * (pos[static_cast<std::size_t>(ec[1])] - pos[static_cast<std::size_t>(ec[0])]));
                        }
                        slab.tris.push_back(tri);
                    }
                }
            }
        }
    });

    std::unordered_map<std::uint64_t, int> vertex_of;
    for (const Slab &slab : slabs) {
        for (const auto &tri : slab.tris) {
            std::array<int, 3> f{};
            for (int v = 0; v < 3; ++v) {
                const auto key = tri[static_cast<std::size_t>(v)];
                auto [it, inserted] = vertex_of.try_emplace(key, static_cast<int>(mesh.vertices.size()));
                if (inserted) mesh.vertices.push_back(slab.points.at(key));
                f[static_cast<std::size_t>(v)] = it->second;
            }
            if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
            const Vec3<T> &a = mesh.vertices[static_cast<std::size_t>(f[0])];
            const T area = (mesh.vertices[static_cast<std::size_t>(f[1])] - a)
                               .cross(mesh.vertices[static_cast<std::size_t>(f[2])] - a)
                               .norm() / T(2);
            if (area < T(kMinTriangleArea)) continue;
            mesh.triangles.push_back(f);
        }
    }
    return mesh;
}

} // namespace dnsplat
