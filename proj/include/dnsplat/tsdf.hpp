// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/gaussian.hpp"
#include "dnsplat/geometry.hpp"
#include "dnsplat/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace dnsplat {

inline constexpr double kTruncationVoxels = 4.0;
inline constexpr int kDefaultGridResolution = 128;

/// Dense voxel grid of truncated signed distances; samples sit at voxel centers.
template <typename T> struct TsdfVolume {
    Vec3<T> origin = Vec3<T>::Zero(); // corner of voxel (0, 0, 0)
    T voxel_size   = T(1);
    std::array<int, 3> dims{0, 0, 0};
    T truncation = T(4);
    std::vector<T> tsdf;   // in [-1, 1], 1 where unobserved
    std::vector<T> weight; // 0 where unobserved

    TsdfVolume() = default;
    TsdfVolume(const Vec3<T> &o, T voxel, std::array<int, 3> d, T trunc = T(0))
        : origin(o), voxel_size(voxel), dims(d), truncation(trunc > T(0) ? trunc : T(kTruncationVoxels) * voxel) {
        if (!(voxel > T(0)) || d[0] <= 0 || d[1] <= 0 || d[2] <= 0) {
            throw std::domain_error("tsdf: voxel size and dimensions must be positive");
        }
        tsdf.assign(voxel_count(), T(1));
        weight.assign(voxel_count(), T(0));
    }

    /// Cubic voxels covering `box`; the longest side gets `resolution` voxels.
    static TsdfVolume covering(const Aabb<T> &box, int resolution = kDefaultGridResolution) {
        const Vec3<T> ext = box.hi - box.lo;
        const T voxel     = ext.maxCoeff() / T(resolution);
        return with_voxel_size(box, voxel);
    }

    static TsdfVolume with_voxel_size(const Aabb<T> &box, T voxel) {
        if (!(voxel > T(0))) throw std::domain_error("tsdf: voxel size must be positive");
        const Vec3<T> ext = box.hi - box.lo;
        std::array<int, 3> d{};
        for (int a = 0; a < 3; ++a) d[a] = std::max(1, static_cast<int>(std::ceil(ext[a] / voxel - T(1e-9))));
        return TsdfVolume(box.lo, voxel, d);
    }

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
    }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * dims[1] + static_cast<std::size_t>(j)) * dims[0] + static_cast<std::size_t>(i);
    }
    Vec3<T> voxel_center(int i, int j, int k) const {
        return origin + voxel_size * Vec3<T>(T(i) + T(0.5), T(j) + T(0.5), T(k) + T(0.5));
    }
};

/// Integrates one depth frame with unit weight. Pixels with mask == 0 or non-positive depth
/// are ignored; voxels further than the truncation behind the observed surface are untouched.
template <typename T>
void fuse_depth(TsdfVolume<T> &vol, const Image<T> &depth, const Camera<T> &cam, const PixelMask &mask,
                const ExecutionPolicy &exec = {}) {
    if (depth.width != cam.width || depth.height != cam.height || depth.channels != 1) {
        throw std::invalid_argument("fuse_depth: depth image does not match the camera");
    }
    if (!mask.empty() && mask.size() != depth.pixel_count()) {
        throw std::invalid_argument("fuse_depth: mask size mismatch");
    }
    const T tau = vol.truncation;
    const std::size_t slabs = static_cast<std::size_t>(vol.dims[2]);
    parallel_chunks(slabs, exec.worker_count(slabs), [&](int, std::size_t kb, std::size_t ke) {
        for (std::size_t k = kb; k < ke; ++k) {
            for (int j = 0; j < vol.dims[1]; ++j) {
                for (int i = 0; i < vol.dims[0]; ++i) {
                    const Vec3<T> pc = cam.to_camera(vol.voxel_center(i, j, static_cast<int>(k)));
                    if (!(pc.z() > T(kNearPlane))) continue;
                    const T u = cam.fx * pc.x() / pc.z() + cam.cx;
                    const T v = cam.fy * pc.y() / pc.z() + cam.cy;
                    if (!(u >= T(0) && v >= T(0) && u < T(cam.width) && v < T(cam.height))) continue;
                    const int px = static_cast<int>(u), py = static_cast<int>(v);
                    const std::size_t pix = static_cast<std::size_t>(py) * cam.width + px;
                    if (!mask.empty() && !mask[pix]) continue;
                    const T d = depth.data[pix];
                    if (!(d > T(0))) continue;
                    const T sdf = d - pc.z();
                    if (sdf < -tau) continue;
                    const T t             = std::min(T(1), sdf / tau);
                    const std::size_t idx = vol.index(i, j, static_cast<int>(k));
                    const T w             = vol.weight[idx];
                    vol.tsdf[idx]         = (vol.tsdf[idx] * w + t) / (w + T(1));
                    vol.weight[idx]       = w + T(1);
                }
            }
        }
    });
}

/// Mask from an alpha image: pixels with alpha above `threshold` are fused.
template <typename T> PixelMask alpha_mask(const Image<T> &alpha, T threshold = T(0.5)) {
    PixelMask m(alpha.pixel_count(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = alpha.data[i] > threshold ? 1 : 0;
    return m;
}

} // namespace dnsplat
