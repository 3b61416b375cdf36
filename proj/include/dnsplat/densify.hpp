// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/backward.hpp"
#include "dnsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

namespace dnsplat {

enum class CameraSampling { cuboid, training_views };

template <typename T> struct DensifyConfig {
    /// Mean view-space positional gradient, in normalized device units (pixel gradient times half the image width).
    T grad_threshold = T(0.0002);
    /// Surface-densification threshold as a fraction of the scene diagonal.
    T scale_threshold = T(0.002);
    int densify_until_iter = 15000;
    T opacity_prune        = T(0.005);
    CameraSampling camera_sampling = CameraSampling::cuboid;
    int interval        = 100;
    int virtual_cameras = 8;
    /// Gaussians with max scale at or below this fraction of the diagonal are cloned rather than split.
    T percent_dense          = T(0.01);
    std::size_t max_gaussians = 5000;
    /// Virtual cameras sit on this multiple of the scene cuboid; Gaussians outside it are pruned.
    T cuboid_expansion = T(1.5);

    void validate() const {
        if (!(grad_threshold > T(0) && scale_threshold > T(0) && opacity_prune > T(0) && percent_dense > T(0))) {
            throw std::invalid_argument("densify thresholds must be positive");
        }
        if (interval <= 0 || virtual_cameras <= 0 || max_gaussians == 0 || !(cuboid_expansion >= T(1))) {
            throw std::invalid_argument("densify schedule values must be positive");
        }
    }
};

/// Two children along the largest-scale axis at p +- (s_max / 2) a, with that scale halved.
template <typename T> std::pair<Gaussian<T>, Gaussian<T>> axis_split(const Gaussian<T> &g) {
    const int k        = g.major_axis();
    const T s_max      = std::exp(g.log_scale[k]);
    const Vec3<T> axis = quat_to_rotation(g.rotation).col(k);
    Gaussian<T> a = g, b = g;
    a.position = g.position + (s_max / T(2)) * axis;
    b.position = g.position - (s_max / T(2)) * axis;
    a.log_scale[k] -= std::log(T(2));
    b.log_scale[k] = a.log_scale[k];
    return {a, b};
}

/// Where each Gaussian of a mutated scene came from. Fresh entries (children, clones) start
/// with empty optimizer state; the others carry theirs over from `source`.
struct IndexRemap {
    std::vector<int> source;
    std::vector<unsigned char> fresh;

    static IndexRemap identity(std::size_t n) {
        IndexRemap r;
        r.source.resize(n);
        std::iota(r.source.begin(), r.source.end(), 0);
        r.fresh.assign(n, 0);
        return r;
    }
    /// The remap of applying `this` and then `next`.
    IndexRemap then(const IndexRemap &next) const {
        IndexRemap r;
        for (std::size_t i = 0; i < next.source.size(); ++i) {
            const auto s = static_cast<std::size_t>(next.source[i]);
            r.source.push_back(source[s]);
            r.fresh.push_back(static_cast<unsigned char>(next.fresh[i] || fresh[s]));
        }
        return r;
    }
};

template <typename T> struct Mutation {
    Scene<T> scene;
    IndexRemap remap;
};

/// Replaces each Gaussian in `split` by its two axis_split children and appends a copy of each in
/// `clone`. Survivors keep their order; new Gaussians follow in ascending parent order.
template <typename T>
Mutation<T> split_and_clone(const Scene<T> &scene, const std::vector<int> &split, const std::vector<int> &clone) {
    std::vector<unsigned char> is_split(scene.size(), 0), is_clone(scene.size(), 0);
    for (int i : split) is_split.at(static_cast<std::size_t>(i)) = 1;
    for (int i : clone) {
        if (is_split.at(static_cast<std::size_t>(i))) throw std::invalid_argument("a Gaussian cannot be split and cloned");
        is_clone[static_cast<std::size_t>(i)] = 1;
    }
    Mutation<T> m;
    m.scene.bounds = scene.bounds;
    auto push      = [&](const Gaussian<T> &g, std::size_t src, bool fresh) {
        m.scene.gaussians.push_back(g);
        m.remap.source.push_back(static_cast<int>(src));
        m.remap.fresh.push_back(fresh ? 1 : 0);
    };
    for (std::size_t i = 0; i < scene.size(); ++i)
        if (!is_split[i]) push(scene.gaussians[i], i, false);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (is_split[i]) {
            const auto [a, b] = axis_split(scene.gaussians[i]);
            push(a, i, true);
            push(b, i, true);
        } else if (is_clone[i]) {
            push(scene.gaussians[i], i, true);
        }
    }
    return m;
}

/// Removes Gaussians with opacity below the threshold or centers outside the expanded cuboid.
template <typename T> Mutation<T> prune(const Scene<T> &scene, const DensifyConfig<T> &cfg) {
    const Aabb<T> box = scene.bounds.expanded(cfg.cuboid_expansion);
    Mutation<T> m;
    m.scene.bounds = scene.bounds;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto &g = scene.gaussians[i];
        if (g.opacity() < cfg.opacity_prune || !box.contains(g.position)) continue;
        m.scene.gaussians.push_back(g);
        m.remap.source.push_back(static_cast<int>(i));
        m.remap.fresh.push_back(0);
    }
    return m;
}

/// Cameras on the surface of the expanded scene cuboid, looking at its center; faces are
/// chosen with probability proportional to area.
template <typename T>
std::vector<Camera<T>> cuboid_cameras(const Aabb<T> &bounds, T expansion, int count, std::mt19937_64 &rng, int width,
                                      int height, T focal) {
    const Aabb<T> box = bounds.expanded(expansion);
    const Vec3<T> ext = box.hi - box.lo;
    const std::array<T, 3> face_area{ext.y() * ext.z(), ext.x() * ext.z(), ext.x() * ext.y()};
    std::discrete_distribution<int> pick_axis({double(face_area[0]), double(face_area[1]), double(face_area[2])});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Camera<T>> cams;
    for (int c = 0; c < count; ++c) {
        const int axis = pick_axis(rng);
        Vec3<T> p;
        for (int a = 0; a < 3; ++a) p[a] = box.lo[a] + T(u(rng)) * ext[a];
        p[axis] = u(rng) < 0.5 ? box.lo[axis] : box.hi[axis];
        cams.push_back(Camera<T>::look_at(p, bounds.center(), Vec3<T>(0, 0, 1), width, height, focal));
    }
    return cams;
}

/// Front-most Gaussians over all `cameras` whose max scale exceeds beta times the scene diagonal;
/// ascending, without duplicates.
template <typename T>
std::vector<int> surface_densify(const Scene<T> &scene, const std::vector<Camera<T>> &cameras, const DensifyConfig<T> &cfg,
                                 const ExecutionPolicy &exec = {}) {
    const T limit = cfg.scale_threshold * scene.extent();
    std::set<int> hit;
    for (const auto &cam : cameras)
        for (int id : first_intersection_map(scene, cam, exec))
            if (id >= 0) hit.insert(id);
    std::vector<int> out;
    for (int id : hit)
        if (scene.gaussians[static_cast<std::size_t>(id)].scales().maxCoeff() > limit) out.push_back(id);
    return out;
}

/// Uniform sample of `count` training cameras without replacement (all of them when fewer).
template <typename T>
std::vector<Camera<T>> sample_training_cameras(const std::vector<Camera<T>> &training, int count, std::mt19937_64 &rng) {
    std::vector<Camera<T>> out;
    std::sample(training.begin(), training.end(), std::back_inserter(out), static_cast<std::size_t>(count), rng);
    return out;
}

/// Per-Gaussian running sums of the view-space gradient norm and visibility counts.
template <typename T> struct GradientStats {
    std::vector<T> sum;
    std::vector<int> count;

    explicit GradientStats(std::size_t n = 0) : sum(n, T(0)), count(n, 0) {}
    void add(const ParamGrads<T> &g, T ndc_scale) {
        for (std::size_t i = 0; i < sum.size(); ++i) {
            if (!g.visible[i]) continue;
            sum[i] += g.mean2d_norm[i] * ndc_scale;
            ++count[i];
        }
    }
    T mean(std::size_t i) const { return count[i] > 0 ? sum[i] / T(count[i]) : T(0); }
};

struct DensifyEvent {
    int iteration            = 0;
    std::size_t surface_split = 0;
    std::size_t grad_clone    = 0;
    std::size_t grad_split    = 0;
    std::size_t pruned        = 0;
    std::size_t total         = 0;
};

/// Baseline selection: Gaussians whose mean gradient exceeds the threshold are cloned when small
/// and split when large. `exclude` marks Gaussians already chosen elsewhere. Highest gradients
/// win when `budget` (number of Gaussians that may still be added) runs out.
template <typename T>
std::pair<std::vector<int>, std::vector<int>> select_by_gradient(const Scene<T> &scene, const GradientStats<T> &stats,
                                                                 const DensifyConfig<T> &cfg,
                                                                 const std::vector<unsigned char> &exclude,
                                                                 std::size_t budget) {
    std::vector<int> cand;
    for (std::size_t i = 0; i < scene.size(); ++i)
        if (!(exclude.size() > i && exclude[i]) && stats.mean(i) > cfg.grad_threshold) cand.push_back(static_cast<int>(i));
    std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) {
        return stats.mean(static_cast<std::size_t>(a)) > stats.mean(static_cast<std::size_t>(b));
    });
    if (cand.size() > budget) cand.resize(budget);
    std::sort(cand.begin(), cand.end());
    const T small = cfg.percent_dense * scene.extent();
    std::vector<int> split, clone;
    for (int i : cand) (scene.gaussians[static_cast<std::size_t>(i)].scales().maxCoeff() > small ? split : clone).push_back(i);
    return {split, clone};
}

/// Baseline clone/split by gradient followed by pruning.
template <typename T>
Mutation<T> baseline_densify_prune(const Scene<T> &scene, const GradientStats<T> &stats, const DensifyConfig<T> &cfg,
                                   DensifyEvent *event = nullptr) {
    const std::size_t budget = cfg.max_gaussians > scene.size() ? cfg.max_gaussians - scene.size() : 0;
    const auto [split, clone] = select_by_gradient(scene, stats, cfg, {}, budget);
    Mutation<T> grown         = split_and_clone(scene, split, clone);
    Mutation<T> pruned        = prune(grown.scene, cfg);
    if (event) {
        event->grad_split = split.size();
        event->grad_clone = clone.size();
        event->pruned     = grown.scene.size() - pruned.scene.size();
        event->total      = pruned.scene.size();
    }
    return {std::move(pruned.scene), grown.remap.then(pruned.remap)};
}

/// Repeatedly splits every Gaussian whose max scale exceeds `limit` until none does.
template <typename T> Mutation<T> split_until_below(const Scene<T> &scene, T limit, std::size_t max_gaussians) {
    Mutation<T> m{scene, IndexRemap::identity(scene.size())};
    for (;;) {
        std::vector<int> big;
        for (std::size_t i = 0; i < m.scene.size(); ++i)
            if (m.scene.gaussians[i].scales().maxCoeff() > limit) big.push_back(static_cast<int>(i));
        if (big.empty()) return m;
        if (m.scene.size() + big.size() > max_gaussians) throw std::length_error("split_until_below: Gaussian cap exceeded");
        Mutation<T> next = split_and_clone(m.scene, big, {});
        m                = {std::move(next.scene), m.remap.then(next.remap)};
    }
}

} // namespace dnsplat
