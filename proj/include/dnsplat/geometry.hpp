// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/types.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <optional>
#include <stdexcept>

namespace dnsplat {

/// Variance (in pixels^2) added to every projected covariance as a low-pass floor.
inline constexpr double kCovarianceDilation = 0.3;
/// Gaussians whose camera-space depth is at or below this are culled.
inline constexpr double kNearPlane = 0.01;

// Unit quaternion stored as (w, x, y, z). Rotation routines normalize on the fly,
// so the stored value may drift in norm during optimization.
template <typename T> struct Quaternion {
    T w = T(1);
    T x = T(0);
    T y = T(0);
    T z = T(0);

    static Quaternion identity() { return {}; }

    static Quaternion from_axis_angle(const Vec3<T> &axis, T angle) {
        const Vec3<T> a = axis.normalized();
        const T h       = angle / T(2);
        const T s       = std::sin(h);
        return {std::cos(h), a.x() * s, a.y() * s, a.z() * s};
    }

    T norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Quaternion normalized() const {
        const T n = norm();
        if (!(n > T(0))) {
            throw std::domain_error("quaternion has zero norm");
        }
        return {w / n, x / n, y / n, z / n};
    }

    Quaternion operator-() const { return {-w, -x, -y, -z}; }

    Vec4<T> coeffs() const { return {w, x, y, z}; }
};

/// Rotation matrix of a (not necessarily normalized) quaternion.
template <typename T> Mat3<T> quat_to_rotation(const Quaternion<T> &q_in) {
    const Quaternion<T> q = q_in.normalized();
    const T w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3<T> R;
    R << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
        T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
        T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return R;
}

/// Shepperd's method; the sign of the result is chosen with w >= 0.
template <typename T> Quaternion<T> rotation_to_quat(const Mat3<T> &R) {
    const T trace = R.trace();
    Quaternion<T> q;
    if (trace > R(0, 0) && trace > R(1, 1) && trace > R(2, 2)) {
        const T s = std::sqrt(T(1) + trace) * T(2);
        q         = {s / T(4), (R(2, 1) - R(1, 2)) / s, (R(0, 2) - R(2, 0)) / s, (R(1, 0) - R(0, 1)) / s};
    } else if (R(0, 0) > R(1, 1) && R(0, 0) > R(2, 2)) {
        const T s = std::sqrt(T(1) + R(0, 0) - R(1, 1) - R(2, 2)) * T(2);
        q         = {(R(2, 1) - R(1, 2)) / s, s / T(4), (R(0, 1) + R(1, 0)) / s, (R(0, 2) + R(2, 0)) / s};
    } else if (R(1, 1) > R(2, 2)) {
        const T s = std::sqrt(T(1) + R(1, 1) - R(0, 0) - R(2, 2)) * T(2);
        q         = {(R(0, 2) - R(2, 0)) / s, (R(0, 1) + R(1, 0)) / s, s / T(4), (R(1, 2) + R(2, 1)) / s};
    } else {
        const T s = std::sqrt(T(1) + R(2, 2) - R(0, 0) - R(1, 1)) * T(2);
        q         = {(R(1, 0) - R(0, 1)) / s, (R(0, 2) + R(2, 0)) / s, (R(1, 2) + R(2, 1)) / s, s / T(4)};
    }
    if (q.w < T(0)) {
        q = -q;
    }
    return q.normalized();
}

/// Pulls dL/dR back to dL/dq for the raw (unnormalized) quaternion, including the
/// normalization Jacobian.
template <typename T> Vec4<T> rotation_vjp(const Quaternion<T> &q_raw, const Mat3<T> &dR) {
    const T n               = q_raw.norm();
    const Quaternion<T> q   = q_raw.normalized();
    const T w = q.w, x = q.x, y = q.y, z = q.z;

    // d R / d(w, x, y, z) for a unit quaternion, entry by entry.
    Vec4<T> g = Vec4<T>::Zero();
    g += dR(0, 0) * Vec4<T>(0, 0, -4 * y, -4 * z);
    g += dR(0, 1) * Vec4<T>(-2 * z, 2 * y, 2 * x, -2 * w);
    g += dR(0, 2) * Vec4<T>(2 * y, 2 * z, 2 * w, 2 * x);
    g += dR(1, 0) * Vec4<T>(2 * z, 2 * y, 2 * x, 2 * w);
    g += dR(1, 1) * Vec4<T>(0, -4 * x, 0, -4 * z);
    g += dR(1, 2) * Vec4<T>(-2 * x, -2 * w, 2 * z, 2 * y);
    g += dR(2, 0) * Vec4<T>(-2 * y, 2 * z, -2 * w, 2 * x);
    g += dR(2, 1) * Vec4<T>(2 * x, 2 * w, 2 * z, 2 * y);
    g += dR(2, 2) * Vec4<T>(0, -4 * x, -4 * y, 0);

    const Vec4<T> qv = q.coeffs();
    return (g - qv * qv.dot(g)) / n;
}

/// Sigma = R S S^T R^T.
template <typename T> Mat3<T> build_covariance(const Quaternion<T> &q, const Vec3<T> &scales) {
    if (!(scales.minCoeff() > T(0))) {
        throw std::domain_error("scales must be strictly positive");
    }
    const Mat3<T> M = quat_to_rotation(q) * scales.asDiagonal();
    return M * M.transpose();
}

/// Pinhole camera; +z looks forward, image y grows downward.
template <typename T> struct Camera {
    T fx = T(1), fy = T(1), cx = T(0), cy = T(0);
    int width = 1, height = 1;
    Mat3<T> rotation    = Mat3<T>::Identity(); // world -> camera
    Vec3<T> translation = Vec3<T>::Zero();

    Vec3<T> to_camera(const Vec3<T> &p_world) const { return rotation * p_world + translation; }
    Vec3<T> center() const { return -rotation.transpose() * translation; }

    void validate() const {
        if (!(fx > T(0) && fy > T(0))) {
            throw std::domain_error("focal lengths must be positive");
        }
        if (width <= 0 || height <= 0) {
            throw std::domain_error("image size must be positive");
        }
        if (!(cx >= T(0) && cx < T(width) && cy >= T(0) && cy < T(height))) {
            throw std::domain_error("principal point outside image");
        }
        const Mat3<T> err = rotation.transpose() * rotation - Mat3<T>::Identity();
        if (err.cwiseAbs().maxCoeff() > T(1e-5)) {
            throw std::domain_error("camera rotation is not orthonormal");
        }
    }

    /// Camera at `eye` looking at `target`; `up` is the world up hint.
    static Camera look_at(const Vec3<T> &eye, const Vec3<T> &target, const Vec3<T> &up, int w, int h, T focal) {
        Camera cam;
        cam.width           = w;
        cam.height          = h;
        cam.fx              = focal;
        cam.fy              = focal;
        cam.cx              = T(w) / T(2);
        cam.cy              = T(h) / T(2);
        const Vec3<T> fwd   = (target - eye).normalized();
        Vec3<T> right       = fwd.cross(up);
        if (right.norm() < T(1e-9)) {
            right = fwd.cross(Vec3<T>::UnitX());
            if (right.norm() < T(1e-9)) {
                right = fwd.cross(Vec3<T>::UnitY());
            }
        }
        right.normalize();
        const Vec3<T> down = fwd.cross(right);
        cam.rotation.row(0) = right.transpose();
        cam.rotation.row(1) = down.transpose();
        cam.rotation.row(2) = fwd.transpose();
        cam.translation     = -cam.rotation * eye;
        return cam;
    }

    template <typename U> Camera<U> cast() const {
        Camera<U> c;
        c.fx          = static_cast<U>(fx);
        c.fy          = static_cast<U>(fy);
        c.cx          = static_cast<U>(cx);
        c.cy          = static_cast<U>(cy);
        c.width       = width;
        c.height      = height;
        c.rotation    = rotation.template cast<U>();
        c.translation = translation.template cast<U>();
        return c;
    }
};

template <typename T> struct Ray {
    Vec3<T> origin    = Vec3<T>::Zero();
    Vec3<T> direction = Vec3<T>::UnitZ();
};

/// K^-1 (u + 0.5, v + 0.5, 1): the camera-frame point at unit z-depth behind a pixel center.
template <typename T> Vec3<T> pixel_ray_unnormalized(const Camera<T> &cam, T u, T v) {
    return {(u + T(0.5) - cam.cx) / cam.fx, (v + T(0.5) - cam.cy) / cam.fy, T(1)};
}

/// Camera-frame ray through the center of pixel (u, v).
template <typename T> Ray<T> pixel_ray(const Camera<T> &cam, T u, T v) {
    if (!(u >= T(0) && u < T(cam.width) && v >= T(0) && v < T(cam.height))) {
        throw std::domain_error("pixel outside image");
    }
    return {Vec3<T>::Zero(), pixel_ray_unnormalized(cam, u, v).normalized()};
}

/// Jacobian of the perspective projection (x, y, z) -> (fx x/z + cx, fy y/z + cy).
template <typename T> Mat23<T> projection_jacobian(const Camera<T> &cam, const Vec3<T> &p_cam) {
    const T iz  = T(1) / p_cam.z();
    const T iz2 = iz * iz;
    Mat23<T> J;
    J << cam.fx * iz, T(0), -cam.fx * p_cam.x() * iz2, T(0), cam.fy * iz, -cam.fy * p_cam.y() * iz2;
    return J;
}

/// Screen-space covariance J W Sigma W^T J^T plus the dilation floor; nullopt when the
/// point is not in front of the near plane.
template <typename T>
std::optional<Mat2<T>> project_covariance(const Mat3<T> &sigma_world, const Camera<T> &cam, const Vec3<T> &p_cam) {
    if (!(p_cam.z() > T(kNearPlane))) {
        return std::nullopt;
    }
    const Mat23<T> J   = projection_jacobian(cam, p_cam);
    const Mat23<T> JW  = J * cam.rotation;
    Mat2<T> cov        = JW * sigma_world * JW.transpose();
    cov(0, 1)          = cov(1, 0) = T(0.5) * (cov(0, 1) + cov(1, 0));
    cov(0, 0)         += T(kCovarianceDilation);
    cov(1, 1)         += T(kCovarianceDilation);
    return cov;
}

} // namespace dnsplat
