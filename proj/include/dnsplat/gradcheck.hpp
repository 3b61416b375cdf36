// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace dnsplat {

/// (f(x + h) - f(x - h)) / 2h.
template <typename F> double central_difference(F &&f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

namespace detail {

struct Fnv1a {
    std::uint64_t state = 1469598103934665603ull;
    template <typename V> void add(const V &v) {
        static_assert(std::is_trivially_copyable_v<V>);
        unsigned char bytes[sizeof(V)];
        std::memcpy(bytes, &v, sizeof(V));
        for (unsigned char b : bytes) {
            state ^= b;
            state *= 1099511628211ull;
        }
    }
};

template <typename T> void hash_render(Fnv1a &h, const RenderBuffers<T> &buf) {
    for (const auto &s : buf.splats) {
        h.add(s.index);
        h.add(s.normal_axis);
        h.add(s.flip > T(0));
    }
    for (std::size_t p = 0; p < buf.contrib_count.size(); ++p) {
        h.add(buf.contrib_count[p]);
        for (std::uint32_t i = 0; i < buf.contrib_count[p]; ++i) {
            const auto &c = buf.contributors[buf.contrib_begin[p] + i];
            h.add(c.splat);
            h.add(c.alpha_clamped);
            h.add(c.depth_mode);
        }
    }
}

template <typename T> void hash_signs(Fnv1a &h, const Vec3<T> &v) {
    for (int i = 0; i < 3; ++i) h.add(static_cast<int>(sign_of(v[i])));
}

} // namespace detail

/// Hash per loss term of every discrete choice its value depends on (contributor lists, clamps,
/// argmin axes, normal flips, masks, stencils, signs inside absolute values). Equal hashes on both
/// sides of a finite-difference stencil mean the term is smooth across it.
template <typename T> std::array<std::uint64_t, 4> branch_signatures(const ObjectiveResult<T> &r, const View<T> &view) {
    std::array<std::uint64_t, 4> out{};
    const int W = r.render.width, H = r.render.height;

    detail::Fnv1a rgb;
    detail::hash_render(rgb, r.render);
    for (std::size_t i = 0; i < r.render.color.data.size(); ++i) {
        rgb.add(static_cast<int>(sign_of(r.render.color.data[i] - view.target.data[i])));
    }
    out[0] = rgb.state;

    detail::Fnv1a sc;
    for (int a : r.scale_axis) sc.add(a);
    out[1] = sc.state;

    detail::Fnv1a nrm;
    detail::hash_render(nrm, r.render);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            nrm.add(r.mask[i]);
            if (!r.mask[i]) continue;
            const Vec3<T> nb = r.render.normal.vec3(x, y);
            nrm.add(nb.norm() > T(0));
            if (nb.norm() > T(0)) detail::hash_signs(nrm, Vec3<T>(nb.normalized() - view.pseudo.normal.vec3(x, y)));
        }
    }
    out[2] = nrm.state;

    detail::Fnv1a dn;
    detail::hash_render(dn, r.render);
    const auto &map = r.dnormal.dnormal;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            dn.add(r.mask[i]);
            dn.add(map.valid[i]);
            dn.add(map.h_stencil[i]);
            dn.add(map.v_stencil[i]);
            dn.add(map.flipped[i]);
            if (map.valid[i]) detail::hash_signs(dn, Vec3<T>(map.normal.vec3(x, y) - view.pseudo.normal.vec3(x, y)));
        }
    }
    out[3] = dn.state;
    return out;
}

/// Central difference of one loss term with respect to parameter `param` of Gaussian `gaussian`.
/// The confidence weights are frozen at the unperturbed scene, matching the stop-gradient.
inline double finite_diff_oracle(const Scene<double> &scene, const View<double> &view,
                                 const LossWeights<double> &weights, LossKind loss, std::size_t gaussian, int param,
                                 double h) {
    if (!(h >= 1e-6 && h <= 1e-3)) throw std::invalid_argument("finite_diff_oracle: step must lie in [1e-6, 1e-3]");
    if (gaussian >= scene.size() || param < 0 || param >= kParamsPerGaussian) {
        throw std::out_of_range("finite_diff_oracle: parameter coordinate out of range");
    }
    const ExecutionPolicy exec;
    const auto coef  = single_term<double>(loss);
    const auto base  = evaluate_objective(scene, view, weights, coef, exec, false);
    const Image<double> frozen = base.dnormal.weight;
    Scene<double> work         = scene;
    double &theta              = work.gaussians[gaussian].param(param);
    const double theta0        = theta;
    return central_difference(
        [&](double v) {
            theta = v;
            return evaluate_objective(work, view, weights, coef, exec, false, &frozen).value;
        },
        theta0, h);
}

struct GradcheckRow {
    LossKind loss;
    ParamClass param_class;
    double max_rel_err  = 0.0;
    std::size_t skipped = 0;
    std::size_t checked = 0;
};

struct GradcheckReport {
    std::vector<GradcheckRow> rows; // one per (loss, class), fixed order

    GradcheckReport() {
        for (LossKind l : kAllLossKinds) {
            for (ParamClass c : kAllParamClasses) rows.push_back({l, c});
        }
    }

    GradcheckRow &row(LossKind l, ParamClass c) {
        return rows[static_cast<std::size_t>(l) * kAllParamClasses.size() + static_cast<std::size_t>(c)];
    }
    const GradcheckRow &row(LossKind l, ParamClass c) const {
        return const_cast<GradcheckReport *>(this)->row(l, c);
    }

    void merge(const GradcheckReport &o) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            rows[i].max_rel_err = std::max(rows[i].max_rel_err, o.rows[i].max_rel_err);
            rows[i].skipped += o.rows[i].skipped;
            rows[i].checked += o.rows[i].checked;
        }
    }

    std::string csv() const {
        std::ostringstream s;
        s.precision(6);
        s << "loss,param_class,max_rel_err,skipped\n";
        for (const auto &r : rows) {
            s << loss_kind_name(r.loss) << ',' << param_class_name(r.param_class) << ',' << std::scientific
              << r.max_rel_err << ',' << r.skipped << '\n';
        }
        return s.str();
    }
};

/// Relative-error limits per loss term.
inline double gradcheck_tolerance(LossKind l) { return l == LossKind::dnormal ? 1e-3 : 1e-4; }

/// True when every (loss, class) row was exercised and stays under its tolerance.
inline bool gradcheck_passed(const GradcheckReport &r) {
    return std::all_of(r.rows.begin(), r.rows.end(),
                       [](const GradcheckRow &row) { return row.checked > 0 && row.max_rel_err < gradcheck_tolerance(row.loss); });
}

struct GradcheckOptions {
    double h = 1e-5;
    /// Denominator floor of the relative error, as a fraction of the largest analytic
    /// gradient magnitude of the same loss on the same scene.
    double relative_floor = 1e-6;
    double absolute_floor = 1e-12;
};

/// Compares analytic and central-difference gradients for every loss and every parameter.
/// Coordinates whose branch signature changes within +-2h are skipped and counted.
inline GradcheckReport gradcheck(const Scene<double> &scene, const View<double> &view,
                                 const LossWeights<double> &weights, const GradcheckOptions &opt = {}) {
    const ExecutionPolicy exec;
    const std::array<double, 4> ones{1.0, 1.0, 1.0, 1.0};
    const auto base            = evaluate_objective(scene, view, weights, ones, exec, false);
    const Image<double> frozen = base.dnormal.weight;
    const auto base_sig        = branch_signatures(base, view);

    std::array<ParamGrads<double>, 4> analytic;
    std::array<double, 4> scale{};
    for (LossKind l : kAllLossKinds) {
        const auto k = static_cast<std::size_t>(l);
        analytic[k]  = evaluate_objective(scene, view, weights, single_term<double>(l), exec, true, &frozen).grads;
        for (const auto &g : analytic[k].gaussians) {
            for (int p = 0; p < kParamsPerGaussian; ++p) scale[k] = std::max(scale[k], std::abs(g[p]));
        }
    }

    GradcheckReport report;
    Scene<double> work = scene;
    for (std::size_t gi = 0; gi < scene.size(); ++gi) {
        for (ParamClass cls : kAllParamClasses) {
            const auto [b, e] = param_range(cls);
            for (int p = b; p < e; ++p) {
                double &theta       = work.gaussians[gi].param(p);
                const double theta0 = theta;
                auto eval           = [&](double offset) {
                    theta = theta0 + offset;
                    return evaluate_objective(work, view, weights, ones, exec, false, &frozen);
                };
                const auto plus   = eval(opt.h);
                const auto minus  = eval(-opt.h);
                const auto plus2  = eval(2.0 * opt.h);
                const auto minus2 = eval(-2.0 * opt.h);
                theta             = theta0;
                const auto sp = branch_signatures(plus, view), sm = branch_signatures(minus, view);
                const auto sp2 = branch_signatures(plus2, view), sm2 = branch_signatures(minus2, view);

                for (LossKind l : kAllLossKinds) {
                    const auto k = static_cast<std::size_t>(l);
                    auto &row    = report.row(l, cls);
                    if (sp[k] != base_sig[k] || sm[k] != base_sig[k] || sp2[k] != base_sig[k] ||
                        sm2[k] != base_sig[k]) {
                        ++row.skipped;
                        continue;
                    }
                    const std::array<double, 4> tp{plus.terms.rgb, plus.terms.scale, plus.terms.normal,
                                                   plus.terms.dnormal};
                    const std::array<double, 4> tm{minus.terms.rgb, minus.terms.scale, minus.terms.normal,
                                                   minus.terms.dnormal};
                    const double fd    = (tp[k] - tm[k]) / (2.0 * opt.h);
                    const double an    = analytic[k].gaussians[gi][p];
                    const double denom = std::max({std::abs(an), std::abs(fd),
                                                   opt.relative_floor * scale[k] + opt.absolute_floor});
                    row.max_rel_err    = std::max(row.max_rel_err, std::abs(an - fd) / denom);
                    ++row.checked;
                }
            }
        }
    }
    return report;
}

/// Random scene of a few overlapping Gaussians in front of a small camera, a target image
/// rendered from a perturbed copy, and smoothly varying camera-facing pseudo normals.
struct GradcheckCase {
    Scene<double> scene;
    View<double> view;
};

inline GradcheckCase random_gradcheck_case(std::uint64_t seed, int max_gaussians = 8, int size = 16) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto range = [&](double a, double b) { return a + (b - a) * u(rng); };

    GradcheckCase c;
    c.view.camera = Camera<double>::look_at({0.0, 0.0, -3.0}, {0.0, 0.0, 0.0}, {0.0, -1.0, 0.0}, size, size,
                                            0.9 * size);
    const int n = 1 + static_cast<int>(u(rng) * max_gaussians) % max_gaussians;
    c.scene.bounds = {Vec3<double>::Constant(-1.0), Vec3<double>::Constant(1.0)};
    for (int i = 0; i < n; ++i) {
        Gaussian<double> g;
        g.position = {range(-0.4, 0.4), range(-0.4, 0.4), range(-0.4, 0.4)};
        g.rotation = Quaternion<double>{range(-1, 1), range(-1, 1), range(-1, 1), range(-1, 1)};
        if (g.rotation.norm() < 0.2) g.rotation = Quaternion<double>::identity();
        g.rotation = g.rotation.normalized();
        const double big = range(0.25, 0.45);
        g.log_scale      = {std::log(big), std::log(range(0.6, 0.9) * big), std::log(range(0.05, 0.3) * big)};
        g.opacity_logit  = logit(range(0.55, 0.95));
        for (int ch = 0; ch < 3; ++ch) g.color[static_cast<std::size_t>(ch)] = range(0.1, 0.9);
        for (int k = 3; k < kColorCoeffs; ++k) g.color[static_cast<std::size_t>(k)] = range(-0.2, 0.2);
        c.scene.gaussians.push_back(g);
    }

    Scene<double> perturbed = c.scene;
    for (auto &g : perturbed.gaussians) {
        g.position += Vec3<double>(range(-0.1, 0.1), range(-0.1, 0.1), range(-0.1, 0.1));
        for (int ch = 0; ch < 3; ++ch) g.color[static_cast<std::size_t>(ch)] = range(0.0, 1.0);
    }
    c.view.target = rasterize(perturbed, c.view.camera).color;

    const Vec3<double> a(range(-0.5, 0.5), range(-0.5, 0.5), -1.0);
    const Vec3<double> gx(range(-0.04, 0.04), range(-0.04, 0.04), 0.0);
    const Vec3<double> gy(range(-0.04, 0.04), range(-0.04, 0.04), 0.0);
    c.view.pseudo.normal = Image<double>(size, size, 3);
    c.view.pseudo.valid.assign(static_cast<std::size_t>(size) * size, 1);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            Vec3<double> v = (a + gx * (x - size / 2) + gy * (y - size / 2)).normalized();
            c.view.pseudo.normal.set_vec3(x, y, v);
        }
    }
    return c;
}

/// Merged report over `cases` random scenes with seeds seed, seed + 1, ...
inline GradcheckReport gradcheck_suite(int cases, std::uint64_t seed, int max_gaussians = 8,
                                       const LossWeights<double> &weights = {}) {
    GradcheckReport total;
    for (int i = 0; i < cases; ++i) {
        const auto c = random_gradcheck_case(seed + static_cast<std::uint64_t>(i), max_gaussians);
        total.merge(gradcheck(c.scene, c.view, weights));
    }
    return total;
}

/// Magnitudes of the position gradient along the Gaussian normal and orthogonal to it,
/// summed over the per-pixel contributions of one loss term.
struct DirectionStats {
    double normal_component = 0.0;
    double offset_component = 0.0;
    /// normal / (normal + offset); 0 when the gradient vanishes.
    double normal_fraction() const {
        const double t = normal_component + offset_component;
        return t > 0.0 ? normal_component / t : 0.0;
    }
};

/// Single-Gaussian decomposition of dL/dp into the normal direction and the in-plane offset
/// direction. Each pixel's upstream gradient is backpropagated separately so contributions that
/// cancel in the total are still visible. nullopt when the Gaussian covers no pixel.
inline std::optional<DirectionStats> position_gradient_direction_stats(const Scene<double> &scene,
                                                                       const View<double> &view,
                                                                       const LossWeights<double> &weights,
                                                                       LossKind loss) {
    if (scene.size() != 1) throw std::invalid_argument("position_gradient_direction_stats: expects one Gaussian");
    const ExecutionPolicy exec;
    const auto coef = single_term<double>(loss);
    const auto r    = evaluate_objective(scene, view, weights, coef, exec, false);
    if (r.render.contributors.empty()) return std::nullopt;

    const Camera<double> &cam = view.camera;
    const auto &g             = scene.gaussians[0];
    const Vec3<double> n      = gaussian_normal(g, Vec3<double>(g.position - cam.center()));
    const int W = cam.width, H = cam.height;

    PixelGrads<double> up = PixelGrads<double>::zeros(W, H);
    DirectionStats stats;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            if (r.render.contrib_count[i] == 0) continue;
            const Vec3<double> gc = r.rgb.grad.vec3(x, y) * coef[0];
            const Vec3<double> gn = r.normal.grad.vec3(x, y) * coef[2];
            const double gd       = r.dnormal.depth_grad(x, y) * coef[3];
            if (gc.isZero(0) && gn.isZero(0) && gd == 0.0) continue;
            up.color.set_vec3(x, y, gc);
            up.normal.set_vec3(x, y, gn);
            up.depth(x, y) = gd;
            const Vec3<double> gp = backward(scene, cam, r.render, up, exec).gaussians[0].position;
            up.color.set_vec3(x, y, Vec3<double>::Zero());
            up.normal.set_vec3(x, y, Vec3<double>::Zero());
            up.depth(x, y) = 0.0;
            const double along = gp.dot(n);
            stats.normal_component += std::abs(along);
            stats.offset_component += (gp - along * n).norm();
        }
    }
    return stats;
}

} // namespace dnsplat
