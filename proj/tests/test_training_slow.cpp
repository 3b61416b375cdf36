// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#include <dnsplat/pipeline.hpp>

#include <gtest/gtest.h>

#include <algorithm>

using namespace dnsplat;

#ifndef DNSPLAT_CONFIG_DIR
#error "DNSPLAT_CONFIG_DIR must point at the configs directory"
#endif

namespace {

constexpr int kIters = 1500;

struct PlaneRun {
    double loss_at_10 = 0, final_loss = 0, center_distance = 0;
};

PlaneRun run_plane(std::uint64_t seed, double lambda3) {
    SceneSpec spec  = load_scene_spec(DNSPLAT_CONFIG_DIR "/plane.json");
    spec.init.seed  = seed;
    const auto sv   = make_views(spec);
    auto cfg        = default_train_config<double>(spec, kIters, seed);
    cfg.weights.lambda3 = lambda3;
    const auto r    = train(initial_scene(spec), sv.views<double>(), cfg);
    return {r.log.at(10).total, r.log.back().total, mean_center_distance(r.scene, spec)};
}

} // namespace

TEST(PlaneTraining, CentersConvergeAndDepthNormalTermHelps) {
    const SceneSpec spec = load_scene_spec(DNSPLAT_CONFIG_DIR "/plane.json");
    std::vector<PlaneRun> full;
    for (std::uint64_t seed = 0; seed < 5; ++seed) full.push_back(run_plane(seed, LossWeights<double>{}.lambda3));

    std::vector<double> ratios;
    for (const auto &r : full) ratios.push_back(r.final_loss / r.loss_at_10);
    std::nth_element(ratios.begin(), ratios.begin() + 2, ratios.end());
    EXPECT_LT(ratios[2], 0.2) << "median final/iteration-10 loss ratio";

    const double extent = spec.bounds().diagonal();
    EXPECT_LT(full[0].center_distance, 0.02 * extent);

    const PlaneRun ablated = run_plane(0, 0.0);
    EXPECT_GT(ablated.center_distance, full[0].center_distance);
}
