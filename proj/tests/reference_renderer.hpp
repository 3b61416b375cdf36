// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

// Unoptimized per-pixel renderer: every Gaussian is evaluated at every pixel after one global
// depth sort. Built on Eigen's quaternion routines rather than the library's own.

#pragma once

#include <dnsplat/rasterizer.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace ref {

struct Frame {
    int width = 0, height = 0;
    std::vector<double> color, alpha, depth, normal;
};

struct Projected {
    Eigen::Vector3d p_cam, normal, color;
    Eigen::Vector2d mean;
    Eigen::Matrix2d conic;
    double opacity = 0;
};

inline Frame render(const dnsplat::Scene<double> &scene, const dnsplat::Camera<double> &cam) {
    const int W = cam.width, H = cam.height;
    Frame f{W, H, std::vector<double>(3 * W * H, 0.0), std::vector<double>(W * H, 0.0),
            std::vector<double>(W * H, 0.0), std::vector<double>(3 * W * H, 0.0)};

    std::vector<Projected> list;
    const Eigen::Vector3d eye = -cam.rotation.transpose() * cam.translation;
    for (const auto &g : scene.gaussians) {
        Projected p;
        p.p_cam = cam.rotation * g.position + cam.translation;
        if (p.p_cam.z() <= 0.01) continue;
        p.opacity = 1.0 / (1.0 + std::exp(-g.opacity_logit));
        if (p.opacity < 1.0 / 255.0) continue;
        const Eigen::Matrix3d R =
            Eigen::Quaterniond(g.rotation.w, g.rotation.x, g.rotation.y, g.rotation.z).normalized().toRotationMatrix();
        const Eigen::Vector3d s = g.log_scale.array().exp();
        const Eigen::Matrix3d cov3 = R * s.cwiseAbs2().asDiagonal() * R.transpose();
        const double z = p.p_cam.z();
        Eigen::Matrix<double, 2, 3> J;
        J << cam.fx / z, 0, -cam.fx * p.p_cam.x() / (z * z), 0, cam.fy / z, -cam.fy * p.p_cam.y() / (z * z);
        Eigen::Matrix2d cov2 = J * cam.rotation * cov3 * cam.rotation.transpose() * J.transpose();
        cov2 = 0.5 * (cov2 + cov2.transpose()).eval();
        cov2 += 0.3 * Eigen::Matrix2d::Identity();
        p.conic = cov2.inverse();
        p.mean  = {cam.fx * p.p_cam.x() / z + cam.cx, cam.fy * p.p_cam.y() / z + cam.cy};
        int k = 0;
        for (int i = 1; i < 3; ++i)
            if (g.log_scale[i] < g.log_scale[k]) k = i;
        p.normal = cam.rotation * R.col(k);
        if (p.normal.dot(p.p_cam) > 0) p.normal = -p.normal;
        const Eigen::Vector3d d = (g.position - eye).normalized();
        for (int ch = 0; ch < 3; ++ch) {
            p.color[ch] = g.color[ch] + 0.4886025119029199 * (-d.y() * g.color[3 + ch] + d.z() * g.color[6 + ch] -
                                                               d.x() * g.color[9 + ch]);
        }
        list.push_back(p);
    }
    std::vector<int> order(list.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return list[a].p_cam.z() < list[b].p_cam.z(); });

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const Eigen::Vector2d px(x + 0.5, y + 0.5);
            const Eigen::Vector3d ray =
                Eigen::Vector3d((px.x() - cam.cx) / cam.fx, (px.y() - cam.cy) / cam.fy, 1.0).normalized();
            double T = 1.0;
            std::vector<std::pair<double, int>> hits; // weight, index
            std::vector<double> depths;
            for (int id : order) {
                const auto &p = list[id];
                const Eigen::Vector2d d = px - p.mean;
                double a = p.opacity * std::exp(-0.5 * d.dot(p.conic * d));
                if (a < 1.0 / 255.0) continue;
                a = std::min(a, 0.99);
                if (T * (1 - a) < 1e-4) break;
                double dep;
                const double nr = p.normal.dot(ray);
                if (std::abs(nr) < 1e-6) {
                    dep = p.p_cam.z();
                } else {
                    // solve o + t r on the plane, report the z coordinate
                    const double t = p.normal.dot(p.p_cam) / nr;
                    dep = std::clamp(t * ray.z(), 0.2 * p.p_cam.z(), 5.0 * p.p_cam.z());
                }
                hits.emplace_back(a * T, id);
                depths.push_back(dep);
                T *= 1 - a;
            }
            const int pix = y * W + x;
            double wsum = 0;
            for (const auto &[w, id] : hits) {
                for (int c = 0; c < 3; ++c) f.color[3 * pix + c] += w * list[id].color[c];
                wsum += w;
            }
            f.alpha[pix] = 1 - T;
            if (wsum > 0) {
                for (std::size_t i = 0; i < hits.size(); ++i) {
                    f.depth[pix] += depths[i] * hits[i].first / wsum;
                    for (int c = 0; c < 3; ++c) f.normal[3 * pix + c] += list[hits[i].second].normal[c] * hits[i].first / wsum;
                }
            }
        }
    }
    return f;
}

/// Up to `max_n` Gaussians with mixed sizes, orientations and opacities (some saturating the
/// alpha clamp, some behind the camera), in front of a `size` x `size` camera.
struct RandomScene {
    dnsplat::Scene<double> scene;
    dnsplat::Camera<double> camera;
};

inline RandomScene random_scene(std::uint64_t seed, int max_n, int size) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto range = [&](double a, double b) { return a + (b - a) * u(rng); };
    RandomScene r;
    r.camera = dnsplat::Camera<double>::look_at({range(-0.5, 0.5), range(-0.5, 0.5), -3.0}, {0, 0, 0}, {0, -1, 0},
                                                size, size, range(0.7, 1.3) * size);
    const int n = 1 + static_cast<int>(u(rng) * max_n) % max_n;
    for (int i = 0; i < n; ++i) {
        dnsplat::Gaussian<double> g;
        g.position = {range(-0.8, 0.8), range(-0.8, 0.8), range(-1.0, 2.0)};
        if (u(rng) < 0.1) g.position.z() = -3.5;
        g.rotation  = {range(-1, 1), range(-1, 1), range(-1, 1), range(-1, 1)};
        g.log_scale = {std::log(range(0.02, 0.5)), std::log(range(0.02, 0.5)), std::log(range(0.005, 0.5))};
        g.opacity_logit = dnsplat::logit(range(0.05, 0.999));
        for (auto &c : g.color) c = range(-0.3, 1.0);
        r.scene.gaussians.push_back(g);
    }
    r.scene.bounds = {Eigen::Vector3d::Constant(-1), Eigen::Vector3d::Constant(1)};
    return r;
}

/// Largest per-pixel, per-channel difference between the library output and the reference.
inline double max_difference(const dnsplat::RenderBuffers<double> &a, const Frame &b) {
    double m = 0;
    auto cmp = [&](const std::vector<double> &x, const std::vector<double> &y) {
        for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    };
    cmp(a.color.data, b.color);
    cmp(a.alpha.data, b.alpha);
    cmp(a.depth.data, b.depth);
    cmp(a.normal.data, b.normal);
    return m;
}

} // namespace ref
