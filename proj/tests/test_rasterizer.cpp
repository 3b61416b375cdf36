// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "reference_renderer.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

using namespace dnsplat;

namespace {

Gaussian<double> flat_disc(const Vec3<double> &pos, double radius, double opacity) {
    Gaussian<double> g;
    g.position      = pos;
    g.log_scale     = {std::log(radius), std::log(radius), std::log(radius * 0.01)};
    g.opacity_logit = logit(opacity);
    g.color         = {0.25, 0.5, 0.75};
    return g;
}

Camera<double> axis_camera(int size) {
    return Camera<double>::look_at({0, 0, -2}, {0, 0, 0}, {0, -1, 0}, size, size, double(size));
}

} // namespace

TEST(IntersectionDepth, Examples) {
    EXPECT_DOUBLE_EQ(intersection_depth<double>({0, 0, 1}, {0, 0, 2}, {{0, 0, 0}, {0, 0, 1}}), 2.0);
    EXPECT_NEAR(intersection_depth<double>({0, 0, 1}, {0, 0, 2}, {{0, 0, 0}, {0, 0.6, 0.8}}), 2.0, 1e-15);
    EXPECT_DOUBLE_EQ(intersection_depth<double>({1, 0, 0}, {1, 0, 2}, {{0, 0, 0}, {0, 0, 1}}), 2.0);
}

TEST(IntersectionDepth, MatchesLinearSolve) {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd(0, 1);
    int tested = 0;
    while (tested < 1000) {
        const Vec3<double> n = Vec3<double>(nd(rng), nd(rng), nd(rng)).normalized();
        const Vec3<double> p(nd(rng), nd(rng), 3 + nd(rng));
        const Vec3<double> r = Vec3<double>(0.3 * nd(rng), 0.3 * nd(rng), 1).normalized();
        if (std::abs(n.dot(r)) <= 1e-3) continue;
        // t r = p + a u + b v with (u, v) spanning the plane
        const Vec3<double> u = n.unitOrthogonal(), v = n.cross(u);
        Mat3<double> A;
        A << r, -u, -v;
        const Vec3<double> sol = A.partialPivLu().solve(p);
        const double z = sol[0] * r.z();
        EXPECT_NEAR(intersection_depth<double>(n, p, {Vec3<double>::Zero(), r}), z, 1e-9 * std::max(1.0, std::abs(z)));
        ++tested;
    }
}

TEST(SplatDepth, ClampsAndFallback) {
    const Vec3<double> p(0, 0, 2);
    auto [d0, m0] = splat_depth<double>(Vec3<double>(1, 0, 0), p, Vec3<double>(0, 0, 1));
    EXPECT_EQ(m0, DepthMode::parallel_fallback);
    EXPECT_EQ(d0, 2.0);
    // grazing plane: the intersection lies far behind the center
    const Vec3<double> n = Vec3<double>(1, 0, -0.01).normalized();
    auto [d1, m1] = splat_depth<double>(n, Vec3<double>(-0.5, 0, 2), Vec3<double>(0, 0, 1));
    EXPECT_EQ(m1, DepthMode::clamped_high);
    EXPECT_DOUBLE_EQ(d1, 10.0);
    auto [d2, m2] = splat_depth<double>(n, Vec3<double>(0.5, 0, 2), Vec3<double>(0, 0, 1));
    EXPECT_EQ(m2, DepthMode::clamped_low);
    EXPECT_DOUBLE_EQ(d2, 0.4);
}

TEST(Rasterize, SingleOpaqueDisc) {
    Scene<double> s;
    s.gaussians.push_back(flat_disc({0, 0, 0}, 0.5, 0.9999));
    const auto cam = axis_camera(15);
    const auto b   = rasterize(s, cam);
    EXPECT_NEAR(b.alpha(7, 7), 0.99, 1e-12);
    EXPECT_NEAR(b.depth(7, 7), 2.0, 1e-12);
    EXPECT_TRUE(b.normal.vec3(7, 7).isApprox(Vec3<double>(0, 0, -1)));
    EXPECT_NEAR(b.color(7, 7, 1), 0.99 * 0.5, 1e-12);
    ASSERT_EQ(b.contributors_at(7, 7).size(), 1u);
    EXPECT_TRUE(b.contributors_at(7, 7)[0].alpha_clamped);
}

TEST(Rasterize, TwoHalfTransparentLayers) {
    Scene<double> s;
    s.gaussians.push_back(flat_disc({0, 0, 1}, 0.5, 0.5)); // depth 3
    s.gaussians.push_back(flat_disc({0, 0, -1}, 0.5, 0.5)); // depth 1
    const auto b = rasterize(s, axis_camera(15));
    EXPECT_NEAR(b.alpha(7, 7), 0.75, 1e-12);
    EXPECT_NEAR(b.depth(7, 7), (0.5 * 1 + 0.25 * 3) / 0.75, 1e-12);
    const auto c = b.contributors_at(7, 7);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(b.gaussian_of(c[0]), 1);
    EXPECT_EQ(b.gaussian_of(c[1]), 0);
}

TEST(Rasterize, EmptyScene) {
    const Scene<double> s;
    const auto b = rasterize(s, axis_camera(20));
    for (double v : b.alpha.data) EXPECT_EQ(v, 0.0);
    for (double v : b.depth.data) EXPECT_EQ(v, 0.0);
    for (double v : b.normal.data) EXPECT_EQ(v, 0.0);
    EXPECT_TRUE(b.contributors.empty());
}

TEST(Rasterize, MatchesReferenceOnRandomScenes) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto r = ref::random_scene(seed, 8, 32);
        EXPECT_LT(ref::max_difference(rasterize(r.scene, r.camera), ref::render(r.scene, r.camera)), 1e-6)
            << "seed " << seed;
    }
}

TEST(Rasterize, BufferInvariants) {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const auto r = ref::random_scene(seed, 8, 32);
        const auto b = rasterize(r.scene, r.camera);
        for (int y = 0; y < 32; ++y) {
            for (int x = 0; x < 32; ++x) {
                double prod = 1;
                double prev = 2;
                for (const auto &c : b.contributors_at(x, y)) {
                    EXPECT_GE(c.alpha, kMinAlpha);
                    EXPECT_LT(c.alpha, 1.0);
                    EXPECT_LT(c.transmittance, prev);
                    prev = c.transmittance;
                    prod *= 1 - c.alpha;
                }
                EXPECT_NEAR(b.alpha(x, y), 1 - prod, 1e-6);
                EXPECT_LE(b.normal.vec3(x, y).norm(), 1 + 1e-6);
                if (b.alpha(x, y) > 1e-3) {
                    EXPECT_GT(b.depth(x, y), 0.0);
                }
            }
        }
    }
}

TEST(Rasterize, HiddenGaussianBehindOpaqueLayersChangesNothing) {
    // one splat's alpha caps at 0.99, so two coincident opaque discs drive transmittance to 1e-4
    Scene<double> s;
    s.gaussians.push_back(flat_disc({0, 0, 0}, 20.0, 0.9999));
    s.gaussians.push_back(flat_disc({0, 0, 0.01}, 20.0, 0.9999));
    const auto cam = axis_camera(16);
    const auto a   = rasterize(s, cam);
    Scene<double> more = s;
    more.gaussians.push_back(flat_disc({0.1, 0, 1.0}, 0.3, 0.8));
    const auto b = rasterize(more, cam);
    for (int y = 4; y < 12; ++y) {
        for (int x = 4; x < 12; ++x) {
            EXPECT_NEAR(a.alpha(x, y), b.alpha(x, y), 1e-6);
            EXPECT_NEAR(a.depth(x, y), b.depth(x, y), 1e-6);
            for (int c = 0; c < 3; ++c) {
                EXPECT_NEAR(a.color(x, y, c), b.color(x, y, c), 1e-6);
                EXPECT_NEAR(a.normal(x, y, c), b.normal(x, y, c), 1e-6);
            }
        }
    }
}

TEST(Rasterize, ThreadCountDoesNotChangeOutput) {
    const auto r = ref::random_scene(5, 8, 40);
    const auto a = rasterize(r.scene, r.camera, {1, true});
    for (const ExecutionPolicy p : {ExecutionPolicy{3, true}, ExecutionPolicy{4, false}}) {
        const auto b = rasterize(r.scene, r.camera, p);
        EXPECT_EQ(a.color.data, b.color.data);
        EXPECT_EQ(a.depth.data, b.depth.data);
        EXPECT_EQ(a.normal.data, b.normal.data);
        EXPECT_EQ(a.contrib_count, b.contrib_count);
    }
}

TEST(Rasterize, SinglePrecisionTracksDouble) {
    const auto r = ref::random_scene(9, 8, 32);
    const auto d = rasterize(r.scene, r.camera);
    const auto f = rasterize(r.scene.cast<float>(), r.camera.cast<float>());
    double m = 0;
    for (std::size_t i = 0; i < d.color.data.size(); ++i) m = std::max(m, std::abs(d.color.data[i] - f.color.data[i]));
    EXPECT_LT(m, 1e-3);
}

TEST(FirstIntersection, StackedAndEmpty) {
    Scene<double> s;
    s.gaussians.push_back(flat_disc({0, 0, 0.5}, 0.2, 0.9));
    s.gaussians.push_back(flat_disc({0, 0, -0.5}, 0.2, 0.9));
    const auto cam = axis_camera(15);
    const auto ids = first_intersection_map(s, cam);
    EXPECT_EQ(ids[7 * 15 + 7], 1);
    EXPECT_EQ(ids[0], -1);

    const auto none = first_intersection_map(Scene<double>{}, cam);
    EXPECT_TRUE(std::all_of(none.begin(), none.end(), [](int v) { return v == -1; }));

    Scene<double> faint;
    faint.gaussians.push_back(flat_disc({0, 0, 0}, 0.5, 1.0 / 300.0));
    const auto f = first_intersection_map(faint, cam);
    EXPECT_TRUE(std::all_of(f.begin(), f.end(), [](int v) { return v == -1; }));
}
