// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/evaluation.hpp"
#include "dnsplat/marching_cubes.hpp"
#include "dnsplat/synthetic.hpp"
#include "dnsplat/train.hpp"

#include <algorithm>
#include <cstdint>
#include <vector>

namespace dnsplat {

/// Training views for a spec: ground-truth RGB targets with pseudo normals corrupted per the noise spec.
struct SyntheticViews {
    std::vector<GroundTruthView> ground_truth;
    NoisyNormals pseudo;

    template <typename T> std::vector<View<T>> views() const {
        std::vector<View<T>> out;
        for (std::size_t i = 0; i < ground_truth.size(); ++i) {
            out.push_back({ground_truth[i].camera.template cast<T>(), image_cast<T>(ground_truth[i].rgb),
                           {image_cast<T>(pseudo.frames[i].normal), pseudo.frames[i].valid}});
        }
        return out;
    }
};

inline SyntheticViews make_views(const SceneSpec &spec) {
    SyntheticViews s;
    s.ground_truth = render_ground_truth(spec);
    s.pseudo       = corrupt_normals(s.ground_truth, spec.noise);
    return s;
}

/// Derives the initialization and noise seeds from one run seed.
inline SceneSpec reseeded(SceneSpec spec, std::uint64_t seed) {
    spec.init.seed  = seed;
    spec.noise.seed = seed + 1;
    return spec;
}

/// Training settings for a synthetic spec: position rates scaled by the scene diagonal and decayed over the run.
template <typename T> TrainConfig<T> default_train_config(const SceneSpec &spec, int iters, std::uint64_t seed = 0) {
    TrainConfig<T> cfg;
    cfg.iters                     = iters;
    cfg.seed                      = seed;
    cfg.adam.spatial_scale        = spec.bounds().diagonal();
    cfg.adam.position_decay_steps = std::max(1, iters);
    return cfg;
}

template <typename T> struct MeshExtraction {
    TsdfVolume<T> volume;
    TriangleMesh<T> mesh;
};

/// Renders each camera, fuses depths where alpha > 0.5 into a grid over `bounds`, and extracts the zero set.
template <typename T>
MeshExtraction<T> extract_mesh(const Scene<T> &scene, const std::vector<Camera<T>> &cameras, const Aabb<T> &bounds,
                               T voxel_size, const ExecutionPolicy &exec = {}) {
    MeshExtraction<T> out{TsdfVolume<T>::with_voxel_size(bounds, voxel_size), {}};
    for (const auto &cam : cameras) {
        const RenderBuffers<T> buf = rasterize(scene, cam, exec);
        fuse_depth(out.volume, buf.depth, cam, alpha_mask(buf.alpha, T(kLossMaskAlpha)), exec);
    }
    out.mesh = marching_cubes(out.volume, exec);
    return out;
}

template <typename T> T default_voxel_size(const Aabb<T> &bounds, int resolution = kDefaultGridResolution) {
    return (bounds.hi - bounds.lo).maxCoeff() / T(resolution);
}

struct MeshMetrics {
    FScore fscore;
    double chamfer = 0;
    double tau     = 0;
    std::size_t pred_samples = 0, gt_samples = 0;
};

/// Compares a mesh with visible ground-truth surface samples of the spec.
template <typename T>
MeshMetrics evaluate_mesh(const TriangleMesh<T> &mesh, const SceneSpec &spec, double tau, std::size_t samples = 20000,
                          std::uint64_t seed = 1) {
    MeshMetrics m;
    m.tau = tau;
    const auto gt = sample_surface(spec, samples, seed);
    std::vector<Vec3<double>> pred;
    for (const auto &p : sample_mesh(mesh, samples, seed + 1)) pred.push_back(p.template cast<double>());
    m.pred_samples = pred.size();
    m.gt_samples   = gt.size();
    if (pred.empty() || gt.empty()) return m;
    m.fscore  = evaluate_fscore(pred, gt, tau);
    m.chamfer = evaluate_chamfer(pred, gt);
    return m;
}

/// Mean unsigned distance of Gaussian centers to the spec surfaces.
template <typename T> double mean_center_distance(const Scene<T> &scene, const SceneSpec &spec) {
    if (scene.empty()) return 0;
    double s = 0;
    for (const auto &g : scene.gaussians) s += distance_to_surface(spec.primitives, g.position.template cast<double>());
    return s / double(scene.size());
}

/// Mean unsigned distance of mesh vertices to the spec surfaces.
template <typename T> double mean_vertex_distance(const TriangleMesh<T> &mesh, const SceneSpec &spec) {
    if (mesh.vertices.empty()) return 0;
    double s = 0;
    for (const auto &v : mesh.vertices) s += distance_to_surface(spec.primitives, v.template cast<double>());
    return s / double(mesh.vertices.size());
}

} // namespace dnsplat
