// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace dnsplat {

/// Base RGB (3) followed by three degree-1 SH coefficients per channel (9).
inline constexpr int kColorCoeffs = 12;
/// position(3) + rotation(4) + log_scale(3) + opacity_logit(1) + color(12)
inline constexpr int kParamsPerGaussian = 23;

inline constexpr double kShC1 = 0.4886025119029199;

enum class ParamClass { position, rotation, log_scale, opacity, color };

inline constexpr std::array<ParamClass, 5> kAllParamClasses = {
    ParamClass::position, ParamClass::rotation, ParamClass::log_scale, ParamClass::opacity, ParamClass::color};

/// Half-open range of flat parameter indices belonging to a class.
constexpr std::pair<int, int> param_range(ParamClass c) {
    switch (c) {
    case ParamClass::position: return {0, 3};
    case ParamClass::rotation: return {3, 7};
    case ParamClass::log_scale: return {7, 10};
    case ParamClass::opacity: return {10, 11};
    case ParamClass::color: return {11, 23};
    }
    return {0, 0};
}

inline const char *param_class_name(ParamClass c) {
    switch (c) {
    case ParamClass::position: return "position";
    case ParamClass::rotation: return "rotation";
    case ParamClass::log_scale: return "log_scale";
    case ParamClass::opacity: return "opacity";
    case ParamClass::color: return "color";
    }
    return "?";
}

template <typename T> T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }
template <typename T> T logit(T p) { return std::log(p / (T(1) - p)); }

/// Index of the smallest component; ties go to the lowest index.
template <typename T> int argmin3(const Vec3<T> &v) {
    int k = 0;
    for (int i = 1; i < 3; ++i) {
        if (v[i] < v[k]) k = i;
    }
    return k;
}

/// Index of the largest component; ties go to the lowest index.
template <typename T> int argmax3(const Vec3<T> &v) {
    int k = 0;
    for (int i = 1; i < 3; ++i) {
        if (v[i] > v[k]) k = i;
    }
    return k;
}

template <typename T> struct Gaussian {
    Vec3<T> position        = Vec3<T>::Zero();
    Quaternion<T> rotation  = Quaternion<T>::identity();
    Vec3<T> log_scale       = Vec3<T>::Zero();
    T opacity_logit         = T(0);
    std::array<T, kColorCoeffs> color{};

    Vec3<T> scales() const { return log_scale.array().exp().matrix(); }
    T opacity() const { return sigmoid(opacity_logit); }
    Vec3<T> base_color() const { return {color[0], color[1], color[2]}; }

    /// Axis of the flattest extent, i.e. the normal axis.
    int normal_axis() const { return argmin3(log_scale); }
    int major_axis() const { return argmax3(log_scale); }

    T &param(int i) {
        if (i < 3) return position[i];
        switch (i) {
        case 3: return rotation.w;
        case 4: return rotation.x;
        case 5: return rotation.y;
        case 6: return rotation.z;
        default: break;
        }
        if (i < 10) return log_scale[i - 7];
        if (i == 10) return opacity_logit;
        return color[static_cast<std::size_t>(i - 11)];
    }
    T param(int i) const { return const_cast<Gaussian *>(this)->param(i); }

    template <typename U> Gaussian<U> cast() const {
        Gaussian<U> g;
        for (int i = 0; i < kParamsPerGaussian; ++i) {
            g.param(i) = static_cast<U>(param(i));
        }
        return g;
    }
};

/// Axis-aligned box.
template <typename T> struct Aabb {
    Vec3<T> lo = Vec3<T>::Zero();
    Vec3<T> hi = Vec3<T>::Zero();

    Vec3<T> center() const { return (lo + hi) / T(2); }
    T diagonal() const { return (hi - lo).norm(); }
    Aabb expanded(T factor) const {
        const Vec3<T> c = center();
        const Vec3<T> h = (hi - lo) * (factor / T(2));
        return {c - h, c + h};
    }
    bool contains(const Vec3<T> &p) const {
        return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    }
    template <typename U> Aabb<U> cast() const { return {lo.template cast<U>(), hi.template cast<U>()}; }
    static Aabb around(std::span<const Vec3<T>> pts) {
        Aabb b{Vec3<T>::Constant(std::numeric_limits<T>::max()), Vec3<T>::Constant(std::numeric_limits<T>::lowest())};
        for (const auto &p : pts) {
            b.lo = b.lo.cwiseMin(p);
            b.hi = b.hi.cwiseMax(p);
        }
        return b;
    }
};

template <typename T> struct Scene {
    std::vector<Gaussian<T>> gaussians;
    Aabb<T> bounds;

    std::size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }
    /// Scene length scale used by relative thresholds (cuboid diagonal).
    T extent() const { return bounds.diagonal(); }

    template <typename U> Scene<U> cast() const {
        Scene<U> s;
        s.gaussians.reserve(gaussians.size());
        for (const auto &g : gaussians) s.gaussians.push_back(g.template cast<U>());
        s.bounds = {bounds.lo.template cast<U>(), bounds.hi.template cast<U>()};
        return s;
    }
};

/// World-frame normal: the min-scale principal axis, flipped to face against `view_dir`.
///
/// The principal axes of Sigma = R S S^T R^T are the columns of R.
template <typename T> Vec3<T> gaussian_normal(const Gaussian<T> &g, const Vec3<T> &view_dir) {
    const Mat3<T> R = quat_to_rotation(g.rotation);
    Vec3<T> n       = R.col(g.normal_axis());
    if (n.dot(view_dir) > T(0)) {
        n = -n;
    }
    return n.normalized();
}

/// View-dependent RGB: base color plus the degree-1 SH band along `dir` (unit, world).
template <typename T> Vec3<T> evaluate_color(const Gaussian<T> &g, const Vec3<T> &dir) {
    const T c1 = T(kShC1);
    Vec3<T> rgb;
    for (int ch = 0; ch < 3; ++ch) {
        rgb[ch] = g.color[ch] + c1 * (-dir.y() * g.color[3 + ch] + dir.z() * g.color[6 + ch] - dir.x() * g.color[9 + ch]);
    }
    return rgb;
}

inline constexpr double kInitOpacity = 0.1;
inline constexpr double kMinInitScale = 1e-4;

/// One isotropic Gaussian per point; scale = mean distance to the 3 nearest neighbours,
/// clamped to [1e-4, bounds diagonal / 10].
template <typename T>
Scene<T> init_from_points(std::span<const Vec3<T>> points, std::span<const Vec3<T>> colors, const Aabb<T> &bounds) {
    if (points.empty()) {
        throw std::domain_error("init_from_points: no points");
    }
    if (colors.size() != points.size()) {
        throw std::domain_error("init_from_points: color count mismatch");
    }
    Scene<T> scene;
    scene.bounds     = bounds;
    const T max_scale = std::max(T(kMinInitScale), bounds.diagonal() / T(10));
    const std::size_t n = points.size();
    scene.gaussians.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::array<T, 3> best{std::numeric_limits<T>::infinity(), std::numeric_limits<T>::infinity(),
                              std::numeric_limits<T>::infinity()};
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const T d = (points[i] - points[j]).norm();
            if (d < best[2]) {
                best[2] = d;
                if (best[2] < best[1]) std::swap(best[1], best[2]);
                if (best[1] < best[0]) std::swap(best[0], best[1]);
            }
        }
        T sum   = T(0);
        int cnt = 0;
        for (T d : best) {
            if (std::isfinite(d)) {
                sum += d;
                ++cnt;
            }
        }
        T s = cnt > 0 ? sum / T(cnt) : T(0);
        s   = std::clamp(s, T(kMinInitScale), max_scale);

        Gaussian<T> &g  = scene.gaussians[i];
        g.position      = points[i];
        g.rotation      = Quaternion<T>::identity();
        g.log_scale     = Vec3<T>::Constant(std::log(s));
        g.opacity_logit = logit(T(kInitOpacity));
        g.color.fill(T(0));
        for (int c = 0; c < 3; ++c) g.color[c] = colors[i][c];
    }
    return scene;
}

template <typename T> Scene<T> init_from_points(std::span<const Vec3<T>> points, std::span<const Vec3<T>> colors) {
    return init_from_points(points, colors, Aabb<T>::around(points));
}

} // namespace dnsplat
