// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/rasterizer.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace dnsplat {

/// Upstream gradients of a scalar loss with respect to each render buffer.
template <typename T> struct PixelGrads {
    Image<T> color;
    Image<T> alpha;
    Image<T> depth;
    Image<T> normal;

    static PixelGrads zeros(int w, int h) {
        return {Image<T>(w, h, 3), Image<T>(w, h, 1), Image<T>(w, h, 1), Image<T>(w, h, 3)};
    }
    PixelGrads &operator+=(const PixelGrads &o) {
        auto add = [](Image<T> &a, const Image<T> &b) {
            for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
        };
        add(color, o.color);
        add(alpha, o.alpha);
        add(depth, o.depth);
        add(normal, o.normal);
        return *this;
    }
};

template <typename T> struct GaussianGrad {
    Vec3<T> position  = Vec3<T>::Zero();
    Vec4<T> rotation  = Vec4<T>::Zero(); // (w, x, y, z)
    Vec3<T> log_scale = Vec3<T>::Zero();
    T opacity_logit   = T(0);
    std::array<T, kColorCoeffs> color{};

    T &operator[](int i) {
        if (i < 3) return position[i];
        if (i < 7) return rotation[i - 3];
        if (i < 10) return log_scale[i - 7];
        if (i == 10) return opacity_logit;
        return color[static_cast<std::size_t>(i - 11)];
    }
    T operator[](int i) const { return const_cast<GaussianGrad &>(*this)[i]; }

    GaussianGrad &operator+=(const GaussianGrad &o) {
        for (int i = 0; i < kParamsPerGaussian; ++i) (*this)[i] += o[i];
        return *this;
    }
};

template <typename T> struct ParamGrads {
    std::vector<GaussianGrad<T>> gaussians;
    /// |dL/d mean2d| in pixels, per Gaussian; densification statistic.
    std::vector<T> mean2d_norm;
    std::vector<unsigned char> visible;

    explicit ParamGrads(std::size_t n = 0) : gaussians(n), mean2d_norm(n, T(0)), visible(n, 0) {}

    ParamGrads &operator+=(const ParamGrads &o) {
        for (std::size_t i = 0; i < gaussians.size(); ++i) gaussians[i] += o.gaussians[i];
        return *this;
    }
};

namespace detail {

template <typename T> struct SplatAccum {
    T mean[2]{};
    T conic[3]{}; // d/d Q00, d/d Q01 (counted once for both off-diagonals), d/d Q11
    T opacity = T(0);
    Vec3<T> color  = Vec3<T>::Zero();
    Vec3<T> normal = Vec3<T>::Zero();
    Vec3<T> pcam   = Vec3<T>::Zero();

    void add(const SplatAccum &o) {
        for (int i = 0; i < 2; ++i) mean[i] += o.mean[i];
        for (int i = 0; i < 3; ++i) conic[i] += o.conic[i];
        opacity += o.opacity;
        color += o.color;
        normal += o.normal;
        pcam += o.pcam;
    }
};

template <typename T> bool same_camera(const Camera<T> &a, const Camera<T> &b) {
    return a.width == b.width && a.height == b.height && a.fx == b.fx && a.fy == b.fy && a.cx == b.cx &&
           a.cy == b.cy && a.rotation == b.rotation && a.translation == b.translation;
}

} // namespace detail

/// Reverse-mode gradients of the rasterizer. Non-smooth branches (alpha clamp, depth
/// clamp, scale argmin, normal flip) take the derivative of the active branch.
template <typename T>
ParamGrads<T> backward(const Scene<T> &scene, const Camera<T> &cam, const RenderBuffers<T> &buf,
                       const PixelGrads<T> &up, const ExecutionPolicy &exec = {}) {
    if (buf.scene_size != scene.size() || buf.width != cam.width || buf.height != cam.height ||
        !detail::same_camera(buf.camera, cam)) {
        throw ContractViolation("backward: render buffers do not belong to this scene/camera");
    }
    const int W = buf.width;
    const int H = buf.height;
    if (up.color.width != W || up.color.height != H || up.color.channels != 3 || up.alpha.width != W ||
        up.alpha.height != H || up.depth.width != W || up.depth.height != H || up.normal.width != W ||
        up.normal.height != H || up.normal.channels != 3) {
        throw ContractViolation("backward: upstream gradient images have the wrong shape");
    }
    for (const auto &s : buf.splats) {
        if (s.index < 0 || static_cast<std::size_t>(s.index) >= scene.size()) {
            throw ContractViolation("backward: splat index out of range");
        }
    }

    const std::size_t nsplat = buf.splats.size();
    const std::vector<Vec3<T>> rays = pixel_rays(cam);

    const int workers = exec.worker_count(static_cast<std::size_t>(H));
    std::vector<std::vector<detail::SplatAccum<T>>> partial(static_cast<std::size_t>(workers),
                                                            std::vector<detail::SplatAccum<T>>(nsplat));

    auto pixel_row = [&](int worker, int y) {
        auto &acc = partial[static_cast<std::size_t>(worker)];
        for (int x = 0; x < W; ++x) {
            const auto list = buf.contributors_at(x, y);
            if (list.empty()) continue;
            const Vec3<T> gC = up.color.vec3(x, y);
            const T gA       = up.alpha(x, y);
            const T gD       = up.depth(x, y);
            const Vec3<T> gN = up.normal.vec3(x, y);
            if (gC.isZero(0) && gA == T(0) && gD == T(0) && gN.isZero(0)) continue;

            const std::size_t pix = static_cast<std::size_t>(y) * W + x;
            const T inv_w   = T(1) / buf.weight_sum[pix];
            const T D       = buf.depth(x, y);
            const Vec3<T> N = buf.normal.vec3(x, y);
            const Vec3<T> &ray = rays[pix];
            const T px = T(x) + T(0.5);
            const T py = T(y) + T(0.5);

            T suffix = T(0);
            for (std::size_t ii = list.size(); ii-- > 0;) {
                const auto &c = list[ii];
                const auto &s = buf.splats[static_cast<std::size_t>(c.splat)];
                auto &a       = acc[static_cast<std::size_t>(c.splat)];
                const T w     = c.alpha * c.transmittance;

                const T si = gC.dot(s.color) + gA + gD * (c.depth - D) * inv_w + gN.dot(s.normal_cam - N) * inv_w;
                const T dL_dalpha = si * c.transmittance - suffix / (T(1) - c.alpha);
                suffix += si * w;

                a.color += gC * w;
                a.normal += gN * (w * inv_w);

                const T gd = gD * w * inv_w;
                if (gd != T(0)) {
                    switch (c.depth_mode) {
                    case DepthMode::plane: {
                        const T nr = s.normal_cam.dot(ray);
                        const T np = s.plane_offset;
#ifdef DNSPLAT_INJECT_SIGN_BUG
                        a.pcam -= gd * ray.z() / nr * s.normal_cam;
#else
                        a.pcam += gd * ray.z() / nr * s.normal_cam;
#endif
                        a.normal += gd * (ray.z() / nr * s.p_cam - ray.z() * np / (nr * nr) * ray);
                        break;
                    }
                    case DepthMode::parallel_fallback: a.pcam.z() += gd; break;
                    case DepthMode::clamped_low: a.pcam.z() += gd * T(kDepthClampLow); break;
                    case DepthMode::clamped_high: a.pcam.z() += gd * T(kDepthClampHigh); break;
                    }
                }

                if (!c.alpha_clamped && dL_dalpha != T(0)) {
                    const T dx    = px - s.mean2d.x();
                    const T dy    = py - s.mean2d.y();
                    const auto &Q = s.inv_cov2d;
                    const T power = Q(0, 0) * dx * dx + T(2) * Q(0, 1) * dx * dy + Q(1, 1) * dy * dy;
                    const T G     = std::exp(T(-0.5) * power);
                    a.opacity += dL_dalpha * G;
                    const T dG = dL_dalpha * s.opacity * G;
                    a.mean[0] += dG * (Q(0, 0) * dx + Q(0, 1) * dy);
                    a.mean[1] += dG * (Q(0, 1) * dx + Q(1, 1) * dy);
                    a.conic[0] += T(-0.5) * dG * dx * dx;
                    a.conic[1] += -dG * dx * dy;
                    a.conic[2] += T(-0.5) * dG * dy * dy;
                }
            }
        }
    };

    if (exec.deterministic) {
        parallel_chunks(static_cast<std::size_t>(H), workers, [&](int w, std::size_t b, std::size_t e) {
            for (std::size_t y = b; y < e; ++y) pixel_row(w, static_cast<int>(y));
        });
    } else {
        parallel_dynamic(static_cast<std::size_t>(H), workers,
                         [&](int w, std::size_t y) { pixel_row(w, static_cast<int>(y)); });
    }
    for (std::size_t w = 1; w < partial.size(); ++w) {
        for (std::size_t i = 0; i < nsplat; ++i) partial[0][i].add(partial[w][i]);
    }
    const auto &acc = partial[0];

    ParamGrads<T> grads(scene.size());
    const Vec3<T> cam_center = cam.center();
    const Mat3<T> &Wr        = cam.rotation;
    const T c1               = T(kShC1);

    for (std::size_t si = 0; si < nsplat; ++si) {
        const auto &s  = buf.splats[si];
        const auto &a  = acc[si];
        const auto &g  = scene.gaussians[static_cast<std::size_t>(s.index)];
        auto &out      = grads.gaussians[static_cast<std::size_t>(s.index)];
        grads.visible[static_cast<std::size_t>(s.index)] = 1;

        const Mat3<T> R     = quat_to_rotation(g.rotation);
        const Vec3<T> scale = g.scales();
        const Mat3<T> M     = R * scale.asDiagonal();
        const Mat3<T> sigma = M * M.transpose();
        const Mat3<T> sigma_cam = Wr * sigma * Wr.transpose();
        const Vec3<T> &p    = s.p_cam;
        const Mat23<T> J    = projection_jacobian(cam, p);

        Mat2<T> gQ;
        gQ << a.conic[0], T(0.5) * a.conic[1], T(0.5) * a.conic[1], a.conic[2];
        const Mat2<T> gCov      = -s.inv_cov2d * gQ * s.inv_cov2d;
        const Mat3<T> gSigmaCam = J.transpose() * gCov * J;
        const Mat23<T> gJ       = T(2) * gCov * J * sigma_cam;
        const Mat3<T> gSigma    = Wr.transpose() * gSigmaCam * Wr;
        const Mat3<T> gM        = T(2) * gSigma * M;

        Mat3<T> gR = gM * scale.asDiagonal();
        Vec3<T> gS;
        for (int j = 0; j < 3; ++j) gS[j] = gM.col(j).dot(R.col(j));
        gR.col(s.normal_axis) += s.flip * (Wr.transpose() * a.normal);

        const T iz  = T(1) / p.z();
        const T iz2 = iz * iz;
        const T iz3 = iz2 * iz;
        Vec3<T> gP  = a.pcam;
        gP.x() += a.mean[0] * cam.fx * iz;
        gP.y() += a.mean[1] * cam.fy * iz;
        gP.z() += -a.mean[0] * cam.fx * p.x() * iz2 - a.mean[1] * cam.fy * p.y() * iz2;
        gP.x() += gJ(0, 2) * (-cam.fx * iz2);
        gP.y() += gJ(1, 2) * (-cam.fy * iz2);
        gP.z() += gJ(0, 0) * (-cam.fx * iz2) + gJ(0, 2) * (T(2) * cam.fx * p.x() * iz3) +
                  gJ(1, 1) * (-cam.fy * iz2) + gJ(1, 2) * (T(2) * cam.fy * p.y() * iz3);
        Vec3<T> gPw = Wr.transpose() * gP;

        const Vec3<T> &dir = s.view_dir;
        Vec3<T> gDir       = Vec3<T>::Zero();
        for (int ch = 0; ch < 3; ++ch) {
            const T gc = a.color[ch];
            out.color[static_cast<std::size_t>(ch)] += gc;
            out.color[static_cast<std::size_t>(3 + ch)] += gc * c1 * -dir.y();
            out.color[static_cast<std::size_t>(6 + ch)] += gc * c1 * dir.z();
            out.color[static_cast<std::size_t>(9 + ch)] += gc * c1 * -dir.x();
            gDir += gc * c1 *
                    Vec3<T>(-g.color[static_cast<std::size_t>(9 + ch)], -g.color[static_cast<std::size_t>(3 + ch)],
                            g.color[static_cast<std::size_t>(6 + ch)]);
        }
        const T vlen = (g.position - cam_center).norm();
        gPw += (gDir - dir * dir.dot(gDir)) / vlen;

        out.position += gPw;
        out.rotation += rotation_vjp(g.rotation, gR);
        out.log_scale += gS.cwiseProduct(scale);
        out.opacity_logit += a.opacity * s.opacity * (T(1) - s.opacity);
        grads.mean2d_norm[static_cast<std::size_t>(s.index)] = std::hypot(a.mean[0], a.mean[1]);
    }
    return grads;
}

} // namespace dnsplat
