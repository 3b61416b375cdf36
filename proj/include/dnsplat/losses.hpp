// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/backward.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace dnsplat {

enum class ConfidenceSource {
    rendered_normal, ///< blended Gaussian normal (default)
    d_normal,        ///< normal derived from the rendered depth
};

template <typename T> struct LossWeights {
    T lambda1      = T(1);     // scale regularization
    T lambda2      = T(0.01);  // rendered-normal supervision
    T lambda3      = T(0.015); // D-Normal supervision
    T gamma        = T(0.005); // confidence temperature; +inf disables the weighting
    T dssim_weight = T(0.2);
    ConfidenceSource confidence_source = ConfidenceSource::rendered_normal;
};

inline constexpr double kMinConfidence = 1e-30;
inline constexpr double kLossMaskAlpha = 0.5;

/// Camera-frame unit normals standing in for a monocular prior, with a validity mask.
template <typename T> struct PseudoNormalFrame {
    Image<T> normal; // 3 channels
    PixelMask valid;
};

/// Scalar loss with its gradient with respect to one image.
template <typename T> struct ImageLoss {
    T value = T(0);
    Image<T> grad;
    std::size_t pixel_count = 0;
};

template <typename T> T sign_of(T v) { return T((v > T(0)) - (v < T(0))); }

/// Pixels with alpha > 0.5 that also carry a valid pseudo normal.
template <typename T> PixelMask make_loss_mask(const Image<T> &alpha, const PixelMask &valid) {
    PixelMask m(alpha.pixel_count(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = (alpha.data[i] > T(kLossMaskAlpha) && (valid.empty() || valid[i])) ? 1 : 0;
    }
    return m;
}

// ---------------------------------------------------------------- photometric

namespace detail {

inline constexpr int kSsimWindow = 11;

template <typename T> std::array<T, kSsimWindow> ssim_kernel() {
    std::array<T, kSsimWindow> k{};
    T sum = T(0);
    for (int i = 0; i < kSsimWindow; ++i) {
        const T d = T(i - kSsimWindow / 2);
        k[static_cast<std::size_t>(i)] = std::exp(-d * d / T(2 * 1.5 * 1.5));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (auto &v : k) v /= sum;
    return k;
}

// Separable zero-padded "same" correlation; the kernel is symmetric so this is also its adjoint.
template <typename T> std::vector<T> gaussian_blur(const std::vector<T> &in, int W, int H) {
    static const auto k = ssim_kernel<T>();
    constexpr int r     = kSsimWindow / 2;
    std::vector<T> tmp(in.size(), T(0)), out(in.size(), T(0));
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            T acc = T(0);
            for (int i = -r; i <= r; ++i) {
                const int xx = x + i;
                if (xx >= 0 && xx < W) acc += k[static_cast<std::size_t>(i + r)] * in[static_cast<std::size_t>(y) * W + xx];
            }
            tmp[static_cast<std::size_t>(y) * W + x] = acc;
        }
    }
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            T acc = T(0);
            for (int i = -r; i <= r; ++i) {
                const int yy = y + i;
                if (yy >= 0 && yy < H) acc += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(yy) * W + x];
            }
            out[static_cast<std::size_t>(y) * W + x] = acc;
        }
    }
    return out;
}

} // namespace detail

/// Mean SSIM over pixels and channels (11x11 Gaussian window, sigma 1.5, zero padding);
/// optionally writes d SSIM / d x into `grad_x`.
template <typename T> T ssim(const Image<T> &x_img, const Image<T> &y_img, Image<T> *grad_x = nullptr) {
    if (!x_img.same_shape(y_img)) throw std::invalid_argument("ssim: image size mismatch");
    const int W = x_img.width, H = x_img.height, C = x_img.channels;
    const std::size_t n = x_img.pixel_count();
    const T C1 = T(0.01 * 0.01), C2 = T(0.03 * 0.03);
    const T norm = T(1) / T(n * static_cast<std::size_t>(C));
    if (grad_x) *grad_x = Image<T>(W, H, C);

    T total = T(0);
    std::vector<T> x(n), y(n), xx(n), yy(n), xy(n);
    for (int c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            x[i]  = x_img.data[i * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)];
            y[i]  = y_img.data[i * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx  = detail::gaussian_blur(x, W, H);
        const auto my  = detail::gaussian_blur(y, W, H);
        const auto exx = detail::gaussian_blur(xx, W, H);
        const auto eyy = detail::gaussian_blur(yy, W, H);
        const auto exy = detail::gaussian_blur(xy, W, H);
        std::vector<T> gm(n), ge(n), gc(n);
        for (std::size_t i = 0; i < n; ++i) {
            const T a1 = T(2) * mx[i] * my[i] + C1;
            const T a2 = T(2) * (exy[i] - mx[i] * my[i]) + C2;
            const T b1 = mx[i] * mx[i] + my[i] * my[i] + C1;
            const T b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + C2;
            const T s  = a1 * a2 / (b1 * b2);
            total += s;
            if (grad_x) {
                const T inv = T(1) / (b1 * b2);
                gm[i] = norm * ((T(2) * my[i] * a2 - T(2) * my[i] * a1) * inv - s * (T(2) * mx[i] / b1 - T(2) * mx[i] / b2));
                ge[i] = norm * (-s / b2);
                gc[i] = norm * (T(2) * a1 * inv);
            }
        }
        if (grad_x) {
            const auto bm = detail::gaussian_blur(gm, W, H);
            const auto be = detail::gaussian_blur(ge, W, H);
            const auto bc = detail::gaussian_blur(gc, W, H);
            for (std::size_t i = 0; i < n; ++i) {
                grad_x->data[i * static_cast<std::size_t>(C) + static_cast<std::size_t>(c)] =
                    bm[i] + T(2) * x[i] * be[i] + y[i] * bc[i];
            }
        }
    }
    return total * norm;
}

/// (1 - w) mean |rendered - target| + w (1 - SSIM) / 2.
template <typename T> ImageLoss<T> loss_rgb(const Image<T> &rendered, const Image<T> &target, T dssim_weight) {
    if (!rendered.same_shape(target)) throw std::invalid_argument("loss_rgb: image size mismatch");
    ImageLoss<T> out;
    out.pixel_count = rendered.pixel_count();
    const T inv_n   = T(1) / T(rendered.data.size());
    T l1            = T(0);
    out.grad        = Image<T>(rendered.width, rendered.height, rendered.channels);
    for (std::size_t i = 0; i < rendered.data.size(); ++i) {
        const T d = rendered.data[i] - target.data[i];
        l1 += std::abs(d);
        out.grad.data[i] = (T(1) - dssim_weight) * sign_of(d) * inv_n;
    }
    out.value = (T(1) - dssim_weight) * l1 * inv_n;
    if (dssim_weight > T(0)) {
        Image<T> gs;
        const T s = ssim(rendered, target, &gs);
        out.value += dssim_weight * (T(1) - s) / T(2);
        for (std::size_t i = 0; i < gs.data.size(); ++i) out.grad.data[i] -= dssim_weight * gs.data[i] / T(2);
    }
    return out;
}

// ---------------------------------------------------------------- scale

/// Mean over Gaussians of the smallest scale.
template <typename T> T loss_scale_values(std::span<const Vec3<T>> scales) {
    if (scales.empty()) return T(0);
    T sum = T(0);
    for (const auto &s : scales) sum += std::abs(s.minCoeff());
    return sum / T(scales.size());
}

template <typename T> struct ScaleLoss {
    T value = T(0);
    std::vector<Vec3<T>> grad_log_scale;
};

template <typename T> ScaleLoss<T> loss_scale(const Scene<T> &scene) {
    ScaleLoss<T> out;
    out.grad_log_scale.assign(scene.size(), Vec3<T>::Zero());
    if (scene.empty()) return out;
    const T inv_n = T(1) / T(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto &g = scene.gaussians[i];
        const int k   = g.normal_axis();
        const T s     = std::exp(g.log_scale[k]);
        out.value += s;
        out.grad_log_scale[i][k] = s * inv_n;
    }
    out.value *= inv_n;
    return out;
}

// ---------------------------------------------------------------- normals

namespace detail {

// f(u) = |u - N|_1 + (1 - u.N) and df/du.
template <typename T> T normal_residual(const Vec3<T> &u, const Vec3<T> &N, Vec3<T> *grad) {
    const Vec3<T> d = u - N;
    if (grad) *grad = Vec3<T>(sign_of(d.x()), sign_of(d.y()), sign_of(d.z())) - N;
    return d.cwiseAbs().sum() + (T(1) - u.dot(N));
}

} // namespace detail

/// Mean over masked pixels of |N^ - N|_1 + (1 - N^.N), with N^ renormalized to unit length.
/// The gradient is taken with respect to the (unnormalized) blended normal image.
template <typename T>
ImageLoss<T> loss_rendered_normal(const Image<T> &normal, const PseudoNormalFrame<T> &pseudo, const PixelMask &mask) {
    ImageLoss<T> out;
    out.grad = Image<T>(normal.width, normal.height, 3);
    std::size_t count = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const Vec3<T> nb = normal.vec3(static_cast<int>(i % normal.width), static_cast<int>(i / normal.width));
        if (mask[i] && nb.norm() > T(0)) ++count;
    }
    out.pixel_count = count;
    if (count == 0) return out;
    const T inv = T(1) / T(count);
    for (int y = 0; y < normal.height; ++y) {
        for (int x = 0; x < normal.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * normal.width + x;
            const Vec3<T> nb    = normal.vec3(x, y);
            const T len         = nb.norm();
            if (!mask[i] || !(len > T(0))) continue;
            const Vec3<T> u = nb / len;
            Vec3<T> gu;
            out.value += detail::normal_residual(u, pseudo.normal.vec3(x, y), &gu) * inv;
            out.grad.set_vec3(x, y, (gu - u * u.dot(gu)) * (inv / len));
        }
    }
    return out;
}

enum class Stencil : unsigned char { none, central, forward, backward };

/// Normal map from a depth image: back-projected points, cross product of the vertical and
/// horizontal differences, oriented toward the camera (z < 0).
template <typename T> struct DNormalMap {
    Image<T> normal;  // unit where valid
    PixelMask valid;  // subset of the input mask
    std::vector<Stencil> h_stencil, v_stencil;
    PixelMask flipped; // cross product pointed away from the camera
};

namespace detail {

template <typename T>
bool stencil_diff(const std::vector<Vec3<T>> &P, const PixelMask &mask, std::size_t i, std::ptrdiff_t step, bool has_prev,
                  bool has_next, Vec3<T> &diff, Stencil &st) {
    const bool prev = has_prev && mask[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) - step)];
    const bool next = has_next && mask[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + step)];
    const auto at   = [&](std::ptrdiff_t off) { return P[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + off)]; };
    if (prev && next) {
        diff = (at(step) - at(-step)) / T(2);
        st   = Stencil::central;
    } else if (next) {
        diff = at(step) - at(0);
        st   = Stencil::forward;
    } else if (prev) {
        diff = at(0) - at(-step);
        st   = Stencil::backward;
    } else {
        st = Stencil::none;
        return false;
    }
    return true;
}

template <typename T> std::vector<Vec3<T>> backproject(const Image<T> &depth, const Camera<T> &cam) {
    std::vector<Vec3<T>> P(depth.pixel_count());
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            P[static_cast<std::size_t>(y) * depth.width + x] = depth(x, y) * pixel_ray_unnormalized(cam, T(x), T(y));
        }
    }
    return P;
}

} // namespace detail

template <typename T> DNormalMap<T> d_normal(const Image<T> &depth, const Camera<T> &cam, const PixelMask &mask) {
    const int W = depth.width, H = depth.height;
    DNormalMap<T> out;
    out.normal = Image<T>(W, H, 3);
    out.valid.assign(depth.pixel_count(), 0);
    out.h_stencil.assign(depth.pixel_count(), Stencil::none);
    out.v_stencil.assign(depth.pixel_count(), Stencil::none);
    out.flipped.assign(depth.pixel_count(), 0);
    const auto P = detail::backproject(depth, cam);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            if (!mask[i]) continue;
            Vec3<T> dh, dv;
            if (!detail::stencil_diff(P, mask, i, 1, x > 0, x < W - 1, dh, out.h_stencil[i])) continue;
            if (!detail::stencil_diff(P, mask, i, W, y > 0, y < H - 1, dv, out.v_stencil[i])) continue;
            const Vec3<T> c = dv.cross(dh);
            const T scale   = dv.norm() * dh.norm();
            const T len     = c.norm();
            if (!(scale > T(0)) || !(len > T(1e-12) * scale)) {
                out.h_stencil[i] = out.v_stencil[i] = Stencil::none;
                continue;
            }
            out.valid[i]   = 1;
            out.flipped[i] = c.z() > T(0) ? 1 : 0;
            out.normal.set_vec3(x, y, (out.flipped[i] ? T(-1) : T(1)) * c / len);
        }
    }
    return out;
}

/// w = exp((N^ . N - 1) / gamma), clamped to [1e-30, 1]; zero outside the mask.
template <typename T>
Image<T> confidence(const Image<T> &normal, const PseudoNormalFrame<T> &pseudo, T gamma, const PixelMask &mask) {
    Image<T> w(normal.width, normal.height, 1);
    for (int y = 0; y < normal.height; ++y) {
        for (int x = 0; x < normal.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * normal.width + x;
            if (!mask[i]) continue;
            const Vec3<T> nb = normal.vec3(x, y);
            const T len      = nb.norm();
            if (!(len > T(0))) continue;
            const T dot = (nb / len).dot(pseudo.normal.vec3(x, y));
            const T v   = std::exp((dot - T(1)) / gamma);
            w(x, y)     = std::clamp(v, T(kMinConfidence), T(1));
        }
    }
    return w;
}

template <typename T> struct DNormalLoss {
    T value = T(0);
    Image<T> depth_grad;    // d loss / d depth
    Image<T> weight;        // confidence actually applied
    Image<T> contribution;  // per-pixel w * residual / count
    DNormalMap<T> dnormal;
    std::size_t pixel_count = 0;
    T mean_weight           = T(0);
};

/// Confidence-weighted D-Normal loss. The weight is a constant for differentiation; pass
/// `frozen_weight` to reuse the weights of an earlier evaluation.
template <typename T>
DNormalLoss<T> loss_d_normal(const Image<T> &depth, const Image<T> &rendered_normal, const PseudoNormalFrame<T> &pseudo,
                             const Camera<T> &cam, const PixelMask &mask, T gamma,
                             ConfidenceSource source = ConfidenceSource::rendered_normal,
                             const Image<T> *frozen_weight = nullptr) {
    const int W = depth.width, H = depth.height;
    DNormalLoss<T> out;
    out.dnormal      = d_normal(depth, cam, mask);
    out.depth_grad   = Image<T>(W, H, 1);
    out.contribution = Image<T>(W, H, 1);
    const auto &dn   = out.dnormal;
    if (frozen_weight) {
        out.weight = *frozen_weight;
    } else if (source == ConfidenceSource::rendered_normal) {
        out.weight = confidence(rendered_normal, pseudo, gamma, mask);
    } else {
        out.weight = confidence(dn.normal, pseudo, gamma, dn.valid);
    }

    for (unsigned char v : dn.valid) out.pixel_count += v;
    if (out.pixel_count == 0) return out;
    const T inv = T(1) / T(out.pixel_count);

    const auto P = detail::backproject(depth, cam);
    std::vector<Vec3<T>> gP(P.size(), Vec3<T>::Zero());
    auto spread = [&](std::size_t i, std::ptrdiff_t step, Stencil st, const Vec3<T> &g) {
        auto at = [&](std::ptrdiff_t off) -> Vec3<T> & {
            return gP[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + off)];
        };
        switch (st) {
        case Stencil::central:
            at(step) += g / T(2);
            at(-step) -= g / T(2);
            break;
        case Stencil::forward:
            at(step) += g;
            at(0) -= g;
            break;
        case Stencil::backward:
            at(0) += g;
            at(-step) -= g;
            break;
        case Stencil::none: break;
        }
    };

    T wsum = T(0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            if (!dn.valid[i]) continue;
            Vec3<T> dh, dv;
            Stencil st;
            detail::stencil_diff(P, mask, i, 1, x > 0, x < W - 1, dh, st);
            detail::stencil_diff(P, mask, i, W, y > 0, y < H - 1, dv, st);
            const Vec3<T> c  = dv.cross(dh);
            const T len      = c.norm();
            const T sigma    = c.z() > T(0) ? T(-1) : T(1);
            const Vec3<T> nd = sigma * c / len;
            const T w        = out.weight(x, y);
            wsum += w;

            Vec3<T> gu;
            const T f = detail::normal_residual(nd, pseudo.normal.vec3(x, y), &gu);
            out.contribution(x, y) = w * f * inv;
            out.value += w * f * inv;

            const Vec3<T> g_nd = gu * (w * inv);
            const Vec3<T> g_c  = sigma * (g_nd - nd * nd.dot(g_nd)) / len;
            spread(i, W, dn.v_stencil[i], dh.cross(g_c));
            spread(i, 1, dn.h_stencil[i], g_c.cross(dv));
        }
    }
    out.mean_weight = wsum * inv;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            out.depth_grad(x, y) = gP[i].dot(pixel_ray_unnormalized(cam, T(x), T(y)));
        }
    }
    return out;
}

/// Individual loss terms and their weighted total.
template <typename T> struct LossTerms {
    T rgb         = T(0);
    T scale       = T(0);
    T normal      = T(0);
    T dnormal     = T(0);
    T total       = T(0);
    T mean_weight = T(0);
};

template <typename T> T loss_total(const LossTerms<T> &t, const LossWeights<T> &w) {
    return t.rgb + w.lambda1 * t.scale + w.lambda2 * t.normal + w.lambda3 * t.dnormal;
}

} // namespace dnsplat
