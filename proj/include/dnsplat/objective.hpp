// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/losses.hpp"

#include <array>

namespace dnsplat {

/// One training view: camera, photometric target and pseudo normals.
template <typename T> struct View {
    Camera<T> camera;
    Image<T> target;
    PseudoNormalFrame<T> pseudo;
};

enum class LossKind { rgb, scale, normal, dnormal };

inline constexpr std::array<LossKind, 4> kAllLossKinds = {LossKind::rgb, LossKind::scale, LossKind::normal,
                                                          LossKind::dnormal};

inline const char *loss_kind_name(LossKind k) {
    switch (k) {
    case LossKind::rgb: return "L_rgb";
    case LossKind::scale: return "L_s";
    case LossKind::normal: return "L_n";
    case LossKind::dnormal: return "L_dn";
    }
    return "?";
}

/// Coefficients (rgb, scale, normal, dnormal) for the weighted total.
template <typename T> std::array<T, 4> total_coefficients(const LossWeights<T> &w) {
    return {T(1), w.lambda1, w.lambda2, w.lambda3};
}

/// Coefficients selecting a single term with unit weight.
template <typename T> std::array<T, 4> single_term(LossKind k) {
    std::array<T, 4> c{};
    c[static_cast<std::size_t>(k)] = T(1);
    return c;
}

template <typename T> struct ObjectiveResult {
    LossTerms<T> terms;
    T value = T(0); // sum of coefficient * term
    RenderBuffers<T> render;
    PixelMask mask;
    ImageLoss<T> rgb;
    ImageLoss<T> normal;
    DNormalLoss<T> dnormal;
    std::vector<int> scale_axis;
    ParamGrads<T> grads;
};

/// Renders one view, evaluates every loss term and, if requested, backpropagates
/// sum_k coef[k] * term_k to the Gaussian parameters.
template <typename T>
ObjectiveResult<T> evaluate_objective(const Scene<T> &scene, const View<T> &view, const LossWeights<T> &weights,
                                      const std::array<T, 4> &coef, const ExecutionPolicy &exec, bool want_grad,
                                      const Image<T> *frozen_weight = nullptr) {
    ObjectiveResult<T> r;
    const Camera<T> &cam = view.camera;
    r.render             = rasterize(scene, cam, exec);
    r.mask               = make_loss_mask(r.render.alpha, view.pseudo.valid);
    r.rgb                = loss_rgb(r.render.color, view.target, weights.dssim_weight);
    r.normal             = loss_rendered_normal(r.render.normal, view.pseudo, r.mask);
    r.dnormal = loss_d_normal(r.render.depth, r.render.normal, view.pseudo, cam, r.mask, weights.gamma,
                              weights.confidence_source, frozen_weight);
    const ScaleLoss<T> ls = loss_scale(scene);
    r.scale_axis.reserve(scene.size());
    for (const auto &g : scene.gaussians) r.scale_axis.push_back(g.normal_axis());

    r.terms.rgb         = r.rgb.value;
    r.terms.scale       = ls.value;
    r.terms.normal      = r.normal.value;
    r.terms.dnormal     = r.dnormal.value;
    r.terms.mean_weight = r.dnormal.mean_weight;
    r.terms.total       = loss_total(r.terms, weights);
    r.value = coef[0] * r.terms.rgb + coef[1] * r.terms.scale + coef[2] * r.terms.normal + coef[3] * r.terms.dnormal;

    if (!want_grad) {
        r.grads = ParamGrads<T>(scene.size());
        return r;
    }
    PixelGrads<T> up = PixelGrads<T>::zeros(cam.width, cam.height);
    for (std::size_t i = 0; i < up.color.data.size(); ++i) up.color.data[i] = coef[0] * r.rgb.grad.data[i];
    for (std::size_t i = 0; i < up.normal.data.size(); ++i) up.normal.data[i] = coef[2] * r.normal.grad.data[i];
    for (std::size_t i = 0; i < up.depth.data.size(); ++i) up.depth.data[i] = coef[3] * r.dnormal.depth_grad.data[i];
    r.grads = backward(scene, cam, r.render, up, exec);
    for (std::size_t i = 0; i < scene.size(); ++i) r.grads.gaussians[i].log_scale += coef[1] * ls.grad_log_scale[i];
    return r;
}

} // namespace dnsplat
