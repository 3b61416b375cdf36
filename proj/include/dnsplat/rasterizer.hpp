// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/gaussian.hpp"
#include "dnsplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace dnsplat {

inline constexpr int kTileSize               = 16;
inline constexpr double kMinAlpha            = 1.0 / 255.0;
inline constexpr double kMaxAlpha            = 0.99;
inline constexpr double kMinTransmittance    = 1e-4;
inline constexpr double kParallelEpsilon     = 1e-6;
inline constexpr double kDepthClampLow       = 0.2;
inline constexpr double kDepthClampHigh      = 5.0;

enum class DepthMode : std::uint8_t { plane, parallel_fallback, clamped_low, clamped_high };

/// z-depth where `ray` meets the plane through `p` with normal `n` (camera frame):
/// r_z (n.p) / (n.r). Falls back to p_z when the ray is within 1e-6 of parallel.
template <typename T> T intersection_depth(const Vec3<T> &n, const Vec3<T> &p, const Ray<T> &ray) {
    const T nr = n.dot(ray.direction);
    if (std::abs(nr) < T(kParallelEpsilon)) {
        return p.z();
    }
    return ray.direction.z() * n.dot(p) / nr;
}

/// Per-contributor depth used by the rasterizer: plane intersection clamped to
/// [0.2 p_z, 5 p_z], or p_z for near-parallel rays.
template <typename T> std::pair<T, DepthMode> splat_depth(const Vec3<T> &n, const Vec3<T> &p, const Vec3<T> &ray_dir) {
    const T nr = n.dot(ray_dir);
    if (std::abs(nr) < T(kParallelEpsilon)) {
        return {p.z(), DepthMode::parallel_fallback};
    }
    const T d  = ray_dir.z() * n.dot(p) / nr;
    const T lo = T(kDepthClampLow) * p.z();
    const T hi = T(kDepthClampHigh) * p.z();
    if (!(d >= lo)) return {lo, DepthMode::clamped_low};
    if (d > hi) return {hi, DepthMode::clamped_high};
    return {d, DepthMode::plane};
}

/// A Gaussian projected into one camera.
template <typename T> struct Splat2D {
    int index = -1;
    Vec2<T> mean2d;
    Mat2<T> cov2d;
    Mat2<T> inv_cov2d;
    T depth = T(0); // camera-space z of the center, also the sort key
    Vec3<T> p_cam;
    Vec3<T> normal_cam; // unit, camera-facing
    T plane_offset = T(0);
    T opacity      = T(0);
    Vec3<T> color;
    Vec3<T> view_dir; // world, camera center -> Gaussian
    int normal_axis = 0;
    T flip          = T(1);
    // pixel bounds [x0, x1) x [y0, y1) where alpha can reach 1/255
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

template <typename T> struct Contributor {
    std::int32_t splat = 0;
    T alpha            = T(0);
    T transmittance    = T(1); // before this contributor
    T depth            = T(0);
    bool alpha_clamped = false;
    DepthMode depth_mode = DepthMode::plane;
};

template <typename T> struct RenderBuffers {
    int width  = 0;
    int height = 0;
    Image<T> color;  // 3 channels, composited over black
    Image<T> alpha;  // 1 channel
    Image<T> depth;  // normalized blend of intersection depths, 0 where empty
    Image<T> normal; // normalized blend of camera-frame normals (not unit length)
    std::vector<T> weight_sum;
    std::vector<std::uint32_t> contrib_begin;
    std::vector<std::uint32_t> contrib_count;
    std::vector<Contributor<T>> contributors;
    std::vector<Splat2D<T>> splats;
    std::size_t scene_size = 0;
    Camera<T> camera;

    std::span<const Contributor<T>> contributors_at(int x, int y) const {
        const std::size_t p = static_cast<std::size_t>(y) * width + x;
        return {contributors.data() + contrib_begin[p], contrib_count[p]};
    }
    int gaussian_of(const Contributor<T> &c) const { return splats[static_cast<std::size_t>(c.splat)].index; }
};

/// Projects one Gaussian; nullopt when culled (behind the near plane, too transparent,
/// or no pixel can reach the alpha threshold).
template <typename T>
std::optional<Splat2D<T>> project_gaussian(const Gaussian<T> &g, int index, const Camera<T> &cam) {
    Splat2D<T> s;
    s.index = index;
    s.p_cam = cam.to_camera(g.position);
    if (!(s.p_cam.z() > T(kNearPlane))) {
        return std::nullopt;
    }
    s.opacity = g.opacity();
    if (!(s.opacity >= T(kMinAlpha))) {
        return std::nullopt;
    }
    const Mat3<T> R     = quat_to_rotation(g.rotation);
    const Vec3<T> scale = g.scales();
    const Mat3<T> M     = R * scale.asDiagonal();
    const Mat3<T> sigma = M * M.transpose();
    auto cov            = project_covariance(sigma, cam, s.p_cam);
    if (!cov) {
        return std::nullopt;
    }
    s.cov2d     = *cov;
    const T det = s.cov2d.determinant();
    if (!(det > T(0))) {
        return std::nullopt;
    }
    s.inv_cov2d << s.cov2d(1, 1) / det, -s.cov2d(0, 1) / det, -s.cov2d(1, 0) / det, s.cov2d(0, 0) / det;

    const T iz = T(1) / s.p_cam.z();
    s.mean2d   = {cam.fx * s.p_cam.x() * iz + cam.cx, cam.fy * s.p_cam.y() * iz + cam.cy};

    // alpha >= 1/255  <=>  d^T Q d <= 2 ln(255 o); the ellipse's x-extent is sqrt(c * cov_xx).
    const T qmax = std::max(T(0), T(2) * std::log(T(255) * s.opacity));
    const T ex   = std::sqrt(qmax * s.cov2d(0, 0));
    const T ey   = std::sqrt(qmax * s.cov2d(1, 1));
    const T fx0  = std::ceil(s.mean2d.x() - ex - T(0.5)) - T(1);
    const T fx1  = std::floor(s.mean2d.x() + ex - T(0.5)) + T(2);
    const T fy0  = std::ceil(s.mean2d.y() - ey - T(0.5)) - T(1);
    const T fy1  = std::floor(s.mean2d.y() + ey - T(0.5)) + T(2);
    if (!(fx1 > T(0) && fy1 > T(0) && fx0 < T(cam.width) && fy0 < T(cam.height))) {
        return std::nullopt;
    }
    s.x0 = static_cast<int>(std::max(T(0), fx0));
    s.y0 = static_cast<int>(std::max(T(0), fy0));
    s.x1 = static_cast<int>(std::min(T(cam.width), fx1));
    s.y1 = static_cast<int>(std::min(T(cam.height), fy1));
    if (s.x0 >= s.x1 || s.y0 >= s.y1) {
        return std::nullopt;
    }

    s.depth       = s.p_cam.z();
    s.normal_axis = g.normal_axis();
    Vec3<T> n     = cam.rotation * R.col(s.normal_axis);
    s.flip        = n.dot(s.p_cam) > T(0) ? T(-1) : T(1);
    s.normal_cam  = s.flip * n;
    s.plane_offset = s.normal_cam.dot(s.p_cam);
    s.view_dir    = (g.position - cam.center()).normalized();
    s.color       = evaluate_color(g, s.view_dir);
    return s;
}

/// Unit camera-frame ray directions for every pixel center.
template <typename T> std::vector<Vec3<T>> pixel_rays(const Camera<T> &cam) {
    std::vector<Vec3<T>> rays(static_cast<std::size_t>(cam.width) * cam.height);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            rays[static_cast<std::size_t>(y) * cam.width + x] = pixel_ray_unnormalized(cam, T(x), T(y)).normalized();
        }
    }
    return rays;
}

template <typename T> std::vector<Splat2D<T>> project_scene(const Scene<T> &scene, const Camera<T> &cam) {
    std::vector<Splat2D<T>> splats;
    splats.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (auto s = project_gaussian(scene.gaussians[i], static_cast<int>(i), cam)) {
            splats.push_back(*s);
        }
    }
    return splats;
}

/// Tile-based front-to-back splatting of color, alpha, depth and normal.
template <typename T>
RenderBuffers<T> rasterize(const Scene<T> &scene, const Camera<T> &cam, const ExecutionPolicy &exec = {}) {
    const int W = cam.width;
    const int H = cam.height;
    RenderBuffers<T> out;
    out.width      = W;
    out.height     = H;
    out.color      = Image<T>(W, H, 3);
    out.alpha      = Image<T>(W, H, 1);
    out.depth      = Image<T>(W, H, 1);
    out.normal     = Image<T>(W, H, 3);
    out.weight_sum.assign(static_cast<std::size_t>(W) * H, T(0));
    out.contrib_begin.assign(static_cast<std::size_t>(W) * H, 0);
    out.contrib_count.assign(static_cast<std::size_t>(W) * H, 0);
    out.scene_size = scene.size();
    out.camera     = cam;
    out.splats     = project_scene(scene, cam);

    const auto &splats = out.splats;
    std::vector<std::int32_t> order(splats.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        return splats[static_cast<std::size_t>(a)].depth < splats[static_cast<std::size_t>(b)].depth;
    });

    const int tiles_x = (W + kTileSize - 1) / kTileSize;
    const int tiles_y = (H + kTileSize - 1) / kTileSize;
    std::vector<std::vector<std::int32_t>> tile_lists(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (std::int32_t id : order) {
        const auto &s = splats[static_cast<std::size_t>(id)];
        for (int ty = s.y0 / kTileSize; ty <= (s.y1 - 1) / kTileSize; ++ty) {
            for (int tx = s.x0 / kTileSize; tx <= (s.x1 - 1) / kTileSize; ++tx) {
                tile_lists[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(id);
            }
        }
    }

    const std::vector<Vec3<T>> rays = pixel_rays(cam);
    std::vector<std::vector<Contributor<T>>> tile_contribs(tile_lists.size());

    auto render_tile = [&](std::size_t tile) {
        const int tx = static_cast<int>(tile) % tiles_x;
        const int ty = static_cast<int>(tile) / tiles_x;
        const auto &list = tile_lists[tile];
        auto &local      = tile_contribs[tile];
        for (int y = ty * kTileSize; y < std::min(H, (ty + 1) * kTileSize); ++y) {
            for (int x = tx * kTileSize; x < std::min(W, (tx + 1) * kTileSize); ++x) {
                const std::size_t pix = static_cast<std::size_t>(y) * W + x;
                const T px            = T(x) + T(0.5);
                const T py            = T(y) + T(0.5);
                const Vec3<T> &ray    = rays[pix];
                const std::size_t first = local.size();
                T trans  = T(1);
                T wsum   = T(0);
                Vec3<T> color = Vec3<T>::Zero();
                for (std::int32_t id : list) {
                    const auto &s = splats[static_cast<std::size_t>(id)];
                    if (x < s.x0 || x >= s.x1 || y < s.y0 || y >= s.y1) continue;
                    const T dx    = px - s.mean2d.x();
                    const T dy    = py - s.mean2d.y();
                    const T power = s.inv_cov2d(0, 0) * dx * dx + T(2) * s.inv_cov2d(0, 1) * dx * dy +
                                    s.inv_cov2d(1, 1) * dy * dy;
                    const T raw = s.opacity * std::exp(T(-0.5) * power);
                    if (raw < T(kMinAlpha)) continue;
                    const bool clamped = raw > T(kMaxAlpha);
                    const T a          = clamped ? T(kMaxAlpha) : raw;
                    const T next       = trans * (T(1) - a);
                    if (next < T(kMinTransmittance)) break;
                    const auto [d, mode] = splat_depth(s.normal_cam, s.p_cam, ray);
                    local.push_back({id, a, trans, d, clamped, mode});
                    const T w = a * trans;
                    color += w * s.color;
                    wsum += w;
                    trans = next;
                }
                out.color.set_vec3(x, y, color);
                out.alpha(x, y) = T(1) - trans;
                out.weight_sum[pix] = wsum;
                out.contrib_count[pix] = static_cast<std::uint32_t>(local.size() - first);
                out.contrib_begin[pix] = static_cast<std::uint32_t>(first); // tile-local for now
                if (wsum > T(0)) {
                    T depth      = T(0);
                    Vec3<T> nrm  = Vec3<T>::Zero();
                    for (std::size_t i = first; i < local.size(); ++i) {
                        const auto &c = local[i];
                        const T share = (c.alpha * c.transmittance) / wsum;
                        depth += c.depth * share;
                        nrm += splats[static_cast<std::size_t>(c.splat)].normal_cam * share;
                    }
                    out.depth(x, y) = depth;
                    out.normal.set_vec3(x, y, nrm);
                }
            }
        }
    };

    const int workers = exec.worker_count(tile_lists.size());
    if (exec.deterministic) {
        parallel_chunks(tile_lists.size(), workers, [&](int, std::size_t b, std::size_t e) {
            for (std::size_t t = b; t < e; ++t) render_tile(t);
        });
    } else {
        parallel_dynamic(tile_lists.size(), workers, [&](int, std::size_t t) { render_tile(t); });
    }

    std::size_t total = 0;
    for (const auto &tc : tile_contribs) total += tc.size();
    out.contributors.reserve(total);
    std::vector<std::uint32_t> tile_offset(tile_lists.size(), 0);
    for (std::size_t t = 0; t < tile_lists.size(); ++t) {
        tile_offset[t] = static_cast<std::uint32_t>(out.contributors.size());
        out.contributors.insert(out.contributors.end(), tile_contribs[t].begin(), tile_contribs[t].end());
    }
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t tile = static_cast<std::size_t>(y / kTileSize) * tiles_x + x / kTileSize;
            out.contrib_begin[static_cast<std::size_t>(y) * W + x] += tile_offset[tile];
        }
    }
    return out;
}

/// Front-most Gaussian index per pixel, -1 where nothing reaches the alpha threshold.
template <typename T>
std::vector<int> first_intersection_map(const Scene<T> &scene, const Camera<T> &cam, const ExecutionPolicy &exec = {}) {
    const RenderBuffers<T> buf = rasterize(scene, cam, exec);
    std::vector<int> ids(static_cast<std::size_t>(cam.width) * cam.height, -1);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const auto c = buf.contributors_at(x, y);
            if (!c.empty()) ids[static_cast<std::size_t>(y) * cam.width + x] = buf.gaussian_of(c.front());
        }
    }
    return ids;
}

} // namespace dnsplat
