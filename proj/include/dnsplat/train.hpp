// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/densify.hpp"
#include "dnsplat/objective.hpp"
#include "dnsplat/optimizer.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

namespace dnsplat {

template <typename T> struct TrainConfig {
    int iters = 3000;
    LossWeights<T> weights;
    DensifyConfig<T> densify;
    bool adaptive_control = true;
    AdamConfig adam;
    ExecutionPolicy exec;
    std::uint64_t seed = 0;
    /// Checkpoint callback period in iterations; 0 disables.
    int checkpoint_every = 0;
};

struct LossLogRow {
    int iteration = 0;
    int view      = 0;
    double rgb = 0, scale = 0, normal = 0, dnormal = 0, total = 0, mean_weight = 0;
    std::size_t gaussians = 0;
};

template <typename T> struct TrainResult {
    Scene<T> scene;
    OptimState<T> optimizer;
    std::vector<LossLogRow> log;
    std::vector<DensifyEvent> events;
};

template <typename T> using CheckpointFn = std::function<void(int iteration, const Scene<T> &, const OptimState<T> &)>;

namespace detail {

inline std::string csv_number(double v) { return shortest_repr(v); }

/// One adaptive-control round: surface splits, gradient clone/split, pruning. Returns the remap.
template <typename T>
IndexRemap adaptive_control(Scene<T> &scene, const std::vector<View<T>> &views, const GradientStats<T> &stats,
                            const DensifyConfig<T> &cfg, std::mt19937_64 &rng, const ExecutionPolicy &exec,
                            DensifyEvent &ev) {
    std::vector<Camera<T>> cams;
    const Camera<T> &ref = views.front().camera;
    if (cfg.camera_sampling == CameraSampling::cuboid) {
        cams = cuboid_cameras(scene.bounds, cfg.cuboid_expansion, cfg.virtual_cameras, rng, ref.width, ref.height, ref.fx);
    } else {
        std::vector<Camera<T>> all;
        for (const auto &v : views) all.push_back(v.camera);
        cams = sample_training_cameras(all, cfg.virtual_cameras, rng);
    }
    std::vector<int> surface = surface_densify(scene, cams, cfg, exec);
    std::size_t room = cfg.max_gaussians > scene.size() ? cfg.max_gaussians - scene.size() : 0;
    if (surface.size() > room) {
        std::stable_sort(surface.begin(), surface.end(), [&](int a, int b) {
            return scene.gaussians[static_cast<std::size_t>(a)].scales().maxCoeff() >
                   scene.gaussians[static_cast<std::size_t>(b)].scales().maxCoeff();
        });
        surface.resize(room);
        std::sort(surface.begin(), surface.end());
    }
    room -= surface.size();
    std::vector<unsigned char> taken(scene.size(), 0);
    for (int i : surface) taken[static_cast<std::size_t>(i)] = 1;
    auto [grad_split, grad_clone] = select_by_gradient(scene, stats, cfg, taken, room);

    std::vector<int> split = surface;
    split.insert(split.end(), grad_split.begin(), grad_split.end());
    std::sort(split.begin(), split.end());
    Mutation<T> grown  = split_and_clone(scene, split, grad_clone);
    Mutation<T> pruned = prune(grown.scene, cfg);
    ev.surface_split   = surface.size();
    ev.grad_split      = grad_split.size();
    ev.grad_clone      = grad_clone.size();
    ev.pruned          = grown.scene.size() - pruned.scene.size();
    ev.total           = pruned.scene.size();
    scene              = std::move(pruned.scene);
    return grown.remap.then(pruned.remap);
}

} // namespace detail

/// Adam optimization over `views` in round-robin order, with adaptive control every
/// `densify.interval` iterations before `densify.densify_until_iter`.
template <typename T>
TrainResult<T> train(const Scene<T> &initial, const std::vector<View<T>> &views, const TrainConfig<T> &cfg,
                     const std::type_identity_t<CheckpointFn<T>> &checkpoint = {}) {
    if (views.empty()) throw std::invalid_argument("train: no views");
    if (cfg.iters < 0) throw std::invalid_argument("train: negative iteration count");
    cfg.densify.validate();
    TrainResult<T> r{initial, OptimState<T>(initial.size()), {}, {}};
    std::mt19937_64 rng(cfg.seed);
    GradientStats<T> stats(r.scene.size());
    const auto coef = total_coefficients(cfg.weights);
    for (int it = 0; it < cfg.iters; ++it) {
        const int vi = it % static_cast<int>(views.size());
        const View<T> &view = views[static_cast<std::size_t>(vi)];
        ObjectiveResult<T> obj = evaluate_objective(r.scene, view, cfg.weights, coef, cfg.exec, true);

        const std::array<std::pair<const char *, T>, 5> terms{{{"L_rgb", obj.terms.rgb},
                                                               {"L_s", obj.terms.scale},
                                                               {"L_n", obj.terms.normal},
                                                               {"L_dn", obj.terms.dnormal},
                                                               {"total", obj.terms.total}}};
        for (const auto &[name, value] : terms) {
            if (!std::isfinite(double(value))) {
                throw NumericalError("iteration " + std::to_string(it) + ": non-finite " + name);
            }
        }
        for (const auto &g : obj.grads.gaussians) {
            for (int p = 0; p < kParamsPerGaussian; ++p) {
                if (!std::isfinite(double(g[p]))) {
                    throw NumericalError("iteration " + std::to_string(it) + ": non-finite gradient");
                }
            }
        }
        r.log.push_back({it, vi, double(obj.terms.rgb), double(obj.terms.scale), double(obj.terms.normal),
                         double(obj.terms.dnormal), double(obj.terms.total), double(obj.terms.mean_weight),
                         r.scene.size()});
        stats.add(obj.grads, T(0.5) * T(view.camera.width));
        adam_step(r.scene, obj.grads, r.optimizer, cfg.adam);

        const int done = it + 1;
        if (cfg.adaptive_control && done % cfg.densify.interval == 0 && done < cfg.densify.densify_until_iter &&
            done < cfg.iters) {
            DensifyEvent ev;
            ev.iteration          = done;
            const IndexRemap remap = detail::adaptive_control(r.scene, views, stats, cfg.densify, rng, cfg.exec, ev);
            r.optimizer.remap(remap);
            stats = GradientStats<T>(r.scene.size());
            r.events.push_back(ev);
        }
        if (checkpoint && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) checkpoint(done, r.scene, r.optimizer);
    }
    return r;
}

inline std::string loss_csv(const std::vector<LossLogRow> &log) {
    std::string out = "iteration,view,L_rgb,L_s,L_n,L_dn,total,mean_weight,gaussians\n";
    for (const auto &row : log) {
        out += std::to_string(row.iteration) + ',' + std::to_string(row.view) + ',' + detail::csv_number(row.rgb) + ',' +
               detail::csv_number(row.scale) + ',' + detail::csv_number(row.normal) + ',' +
               detail::csv_number(row.dnormal) + ',' + detail::csv_number(row.total) + ',' +
               detail::csv_number(row.mean_weight) + ',' + std::to_string(row.gaussians) + '\n';
    }
    return out;
}

inline std::string densify_csv(const std::vector<DensifyEvent> &events) {
    std::string out = "iteration,n_surface_split,n_grad_clone,n_grad_split,n_pruned,total\n";
    for (const auto &e : events) {
        out += std::to_string(e.iteration) + ',' + std::to_string(e.surface_split) + ',' + std::to_string(e.grad_clone) +
               ',' + std::to_string(e.grad_split) + ',' + std::to_string(e.pruned) + ',' + std::to_string(e.total) + '\n';
    }
    return out;
}

} // namespace dnsplat
