// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#include <dnsplat/objective.hpp>

#include <gtest/gtest.h>

#include <limits>
#include <random>

using namespace dnsplat;

namespace {

// Direct 2-D windowed SSIM: every pixel sums its 11x11 neighbourhood explicitly.
double ssim_oracle(const Image<double> &a, const Image<double> &b) {
    double w[11][11], sum = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) sum += w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
    const double c1 = 1e-4, c2 = 9e-4;
    double total = 0;
    for (int c = 0; c < a.channels; ++c) {
        for (int y = 0; y < a.height; ++y) {
            for (int x = 0; x < a.width; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int i = 0; i < 11; ++i) {
                    for (int j = 0; j < 11; ++j) {
                        const int yy = y + i - 5, xx = x + j - 5;
                        if (yy < 0 || xx < 0 || yy >= a.height || xx >= a.width) continue;
                        const double k = w[i][j] / sum, va = a(xx, yy, c), vb = b(xx, yy, c);
                        ma += k * va;
                        mb += k * vb;
                        saa += k * va * va;
                        sbb += k * vb * vb;
                        sab += k * va * vb;
                    }
                }
                total += (2 * ma * mb + c1) * (2 * (sab - ma * mb) + c2) /
                         ((ma * ma + mb * mb + c1) * (saa - ma * ma + sbb - mb * mb + c2));
            }
        }
    }
    return total / (a.width * a.height * a.channels);
}

Image<double> random_image(std::uint64_t seed, int w, int h, int c) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    Image<double> img(w, h, c);
    for (auto &v : img.data) v = u(rng);
    return img;
}

Camera<double> pinhole(int size) {
    Camera<double> cam;
    cam.fx = cam.fy = size;
    cam.width = cam.height = size;
    cam.cx = cam.cy = size / 2.0;
    return cam;
}

double angle_deg(const Vec3<double> &a, const Vec3<double> &b) {
    return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0)) * 180.0 / M_PI;
}

PseudoNormalFrame<double> uniform_pseudo(int size, const Vec3<double> &n) {
    PseudoNormalFrame<double> p{Image<double>(size, size, 3), PixelMask(size * size, 1)};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) p.normal.set_vec3(x, y, n.normalized());
    return p;
}

} // namespace

TEST(LossRgb, Examples) {
    const auto a = random_image(1, 20, 16, 3);
    EXPECT_NEAR(loss_rgb(a, a, 0.2).value, 0.0, 1e-15);
    Image<double> b = a;
    for (auto &v : b.data) v += 0.1;
    EXPECT_NEAR(loss_rgb(a, b, 0.0).value, 0.1, 1e-12);
    EXPECT_THROW(loss_rgb(a, random_image(2, 16, 16, 3), 0.2), std::invalid_argument);
}

TEST(LossRgb, CheckerboardAgainstInverse) {
    Image<double> a(24, 24, 3), b(24, 24, 3);
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x)
            for (int c = 0; c < 3; ++c) {
                a(x, y, c) = ((x / 4 + y / 4) % 2) ? 1.0 : 0.0;
                b(x, y, c) = 1.0 - a(x, y, c);
            }
    const double expected = 0.8 * 1.0 + 0.2 * (1.0 - ssim_oracle(a, b)) / 2.0;
    EXPECT_NEAR(loss_rgb(a, b, 0.2).value, expected, 1e-12);
}

TEST(Ssim, MatchesDirectWindowOracle) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto a = random_image(10 + s, 17, 13, 3), b = random_image(20 + s, 17, 13, 3);
        EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-12);
    }
}

TEST(LossRgb, GradientMatchesFiniteDifferences) {
    const auto a = random_image(3, 14, 12, 3), b = random_image(4, 14, 12, 3);
    const auto l = loss_rgb(a, b, 0.2);
    for (std::size_t i = 0; i < a.data.size(); i += 7) {
        Image<double> p = a, m = a;
        p.data[i] += 1e-6;
        m.data[i] -= 1e-6;
        const double fd = (loss_rgb(p, b, 0.2).value - loss_rgb(m, b, 0.2).value) / 2e-6;
        EXPECT_NEAR(l.grad.data[i], fd, 1e-8);
    }
}

TEST(LossScale, Examples) {
    Scene<double> s;
    Gaussian<double> g;
    g.log_scale = {0.0, 0.0, -std::numeric_limits<double>::infinity()};
    s.gaussians = {g};
    EXPECT_EQ(loss_scale(s).value, 0.0);
    g.log_scale = {std::log(3.0), std::log(2.0), std::log(1.0)};
    s.gaussians = {g};
    EXPECT_NEAR(loss_scale(s).value, 1.0, 1e-15);
    Gaussian<double> h = g;
    g.log_scale[1] = std::log(0.5);
    h.log_scale[0] = std::log(0.1);
    s.gaussians = {g, h};
    EXPECT_NEAR(loss_scale(s).value, 0.3, 1e-15);
    const std::vector<Vec3<double>> raw{{1, 1, 0}, {3, 2, 1}};
    EXPECT_NEAR(loss_scale_values<double>(raw), 0.5, 1e-15);
}

TEST(LossRenderedNormal, Examples) {
    const PixelMask all(4, 1);
    Image<double> nh(2, 2, 3);
    for (int i = 0; i < 4; ++i) nh.set_vec3(i % 2, i / 2, Vec3<double>(0, 0, -1));
    EXPECT_NEAR(loss_rendered_normal(nh, uniform_pseudo(2, {0, 0, -1}), all).value, 0.0, 1e-15);
    EXPECT_NEAR(loss_rendered_normal(nh, uniform_pseudo(2, {0, 0, 1}), all).value, 4.0, 1e-15);
    for (int i = 0; i < 4; ++i) nh.set_vec3(i % 2, i / 2, Vec3<double>(1, 0, 0));
    EXPECT_NEAR(loss_rendered_normal(nh, uniform_pseudo(2, {0, 1, 0}), all).value, 3.0, 1e-15);
    const auto empty = loss_rendered_normal(nh, uniform_pseudo(2, {0, 1, 0}), PixelMask(4, 0));
    EXPECT_EQ(empty.value, 0.0);
    for (double v : empty.grad.data) EXPECT_EQ(v, 0.0);
}

TEST(LossRenderedNormal, RenormalizesAndDifferentiates) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 1);
    Image<double> nh(6, 5, 3);
    for (auto &v : nh.data) v = 0.3 * n(rng);
    auto pseudo = uniform_pseudo(6, Vec3<double>(0.2, -0.1, -1));
    pseudo.normal = Image<double>(6, 5, 3);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x) pseudo.normal.set_vec3(x, y, Vec3<double>(n(rng), n(rng), -2).normalized());
    PixelMask mask(30, 1);
    mask[3] = mask[17] = 0;
    const auto l = loss_rendered_normal(nh, pseudo, mask);
    // halving the raw blend does not change the renormalized loss
    Image<double> half = nh;
    for (auto &v : half.data) v *= 0.5;
    EXPECT_NEAR(loss_rendered_normal(half, pseudo, mask).value, l.value, 1e-14);
    for (std::size_t i = 0; i < nh.data.size(); ++i) {
        Image<double> p = nh, m = nh;
        p.data[i] += 1e-7;
        m.data[i] -= 1e-7;
        const double fd = (loss_rendered_normal(p, pseudo, mask).value - loss_rendered_normal(m, pseudo, mask).value) / 2e-7;
        EXPECT_NEAR(l.grad.data[i], fd, 1e-6);
    }
}

TEST(DNormal, ConstantDepthFacesCamera) {
    const int S = 16;
    Image<double> depth(S, S, 1, 3.0);
    const auto d = d_normal(depth, pinhole(S), PixelMask(S * S, 1));
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            ASSERT_TRUE(d.valid[y * S + x]);
            EXPECT_LT((d.normal.vec3(x, y) - Vec3<double>(0, 0, -1)).norm(), 1e-12);
        }
}

TEST(DNormal, TiltedPlane) {
    const int S = 32;
    const auto cam = pinhole(S);
    const Vec3<double> n = Vec3<double>(0, -1, -1).normalized();
    Image<double> depth(S, S, 1);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const Vec3<double> r = pixel_ray_unnormalized(cam, double(x), double(y));
            depth(x, y) = n.dot(Vec3<double>(0, 0, 4)) / n.dot(r);
        }
    const auto d = d_normal(depth, cam, PixelMask(S * S, 1));
    for (int y = 1; y < S - 1; ++y)
        for (int x = 1; x < S - 1; ++x) EXPECT_LT((d.normal.vec3(x, y) - n).norm(), 1e-3);
}

TEST(DNormal, RandomPlanesWithinOneDegree) {
    const int S = 32;
    const auto cam = pinhole(S);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 50; ++t) {
        const double tilt = u(rng) * 60.0 * M_PI / 180.0, az = u(rng) * 2 * M_PI;
        const Vec3<double> n(std::sin(tilt) * std::cos(az), std::sin(tilt) * std::sin(az), -std::cos(tilt));
        Image<double> depth(S, S, 1);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                depth(x, y) = n.dot(Vec3<double>(0, 0, 5)) / n.dot(pixel_ray_unnormalized(cam, double(x), double(y)));
        const auto d = d_normal(depth, cam, PixelMask(S * S, 1));
        double worst = 0;
        for (int i = 0; i < S * S; ++i) worst = std::max(worst, angle_deg(d.normal.vec3(i % S, i / S), n));
        EXPECT_LT(worst, 1e-4);
    }
}

TEST(DNormal, StencilsAndDrops) {
    const int S = 8;
    Image<double> depth(S, S, 1, 2.0);
    PixelMask mask(S * S, 0);
    // a 3x3 block plus one isolated pixel
    for (int y = 2; y < 5; ++y)
        for (int x = 2; x < 5; ++x) mask[y * S + x] = 1;
    mask[7 * S + 7] = 1;
    const auto d = d_normal(depth, pinhole(S), mask);
    EXPECT_TRUE(d.valid[3 * S + 3]);
    EXPECT_EQ(d.h_stencil[3 * S + 3], Stencil::central);
    EXPECT_EQ(d.h_stencil[3 * S + 2], Stencil::forward);
    EXPECT_EQ(d.v_stencil[4 * S + 3], Stencil::backward);
    EXPECT_FALSE(d.valid[7 * S + 7]);
    EXPECT_FALSE(d.valid[0]);

    // zero depth collapses every back-projected point onto the camera center
    Image<double> flat(S, S, 1, 0.0);
    const auto z = d_normal(flat, pinhole(S), PixelMask(S * S, 1));
    for (auto v : z.valid) EXPECT_EQ(v, 0);
}

TEST(Confidence, Examples) {
    Image<double> nh(3, 1, 3);
    nh.set_vec3(0, 0, Vec3<double>(0, 0, -1));
    nh.set_vec3(1, 0, Vec3<double>(std::sqrt(1 - 0.995 * 0.995), 0, -0.995));
    nh.set_vec3(2, 0, Vec3<double>(0, 0, 1));
    PseudoNormalFrame<double> p{Image<double>(3, 1, 3), PixelMask(3, 1)};
    for (int x = 0; x < 3; ++x) p.normal.set_vec3(x, 0, Vec3<double>(0, 0, -1));
    const auto w = confidence(nh, p, 0.005, PixelMask(3, 1));
    EXPECT_EQ(w(0, 0), 1.0);
    EXPECT_NEAR(w(1, 0), std::exp(-1.0), 1e-12);
    EXPECT_EQ(w(2, 0), 1e-30);
    const auto w_inf = confidence(nh, p, std::numeric_limits<double>::infinity(), PixelMask(3, 1));
    for (double v : w_inf.data) EXPECT_EQ(v, 1.0);
}

TEST(Confidence, MonotoneInAgreement) {
    double prev = 0;
    for (int i = 0; i <= 200; ++i) {
        const double dot = -1.0 + i / 100.0;
        Image<double> nh(1, 1, 3);
        nh.set_vec3(0, 0, Vec3<double>(std::sqrt(std::max(0.0, 1 - dot * dot)), 0, -dot));
        PseudoNormalFrame<double> p{Image<double>(1, 1, 3), PixelMask(1, 1)};
        p.normal.set_vec3(0, 0, Vec3<double>(0, 0, -1));
        const double w = confidence(nh, p, 0.05, PixelMask(1, 1))(0, 0);
        EXPECT_GE(w, prev);
        EXPECT_LE(w, 1.0);
        prev = w;
    }
}

namespace {

struct PlaneFrame {
    Camera<double> cam;
    Image<double> depth, normal;
};

PlaneFrame noisy_plane(int S, std::uint64_t seed) {
    PlaneFrame f{pinhole(S), Image<double>(S, S, 1), Image<double>(S, S, 3)};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0, 1);
    const Vec3<double> n = Vec3<double>(0.2, -0.3, -1).normalized();
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            f.depth(x, y) = n.dot(Vec3<double>(0, 0, 3)) / n.dot(pixel_ray_unnormalized(f.cam, double(x), double(y))) +
                            0.01 * nd(rng);
            f.normal.set_vec3(x, y, n + 0.05 * Vec3<double>(nd(rng), nd(rng), nd(rng)));
        }
    return f;
}

} // namespace

TEST(LossDNormal, ZeroWhenDerivedNormalMatches) {
    const int S = 12;
    Image<double> depth(S, S, 1, 2.0);
    const auto p = uniform_pseudo(S, {0, 0, -1});
    const auto l = loss_d_normal(depth, p.normal, p, pinhole(S), PixelMask(S * S, 1), 0.005);
    EXPECT_NEAR(l.value, 0.0, 1e-14);
    EXPECT_EQ(l.pixel_count, std::size_t(S * S));
}

TEST(LossDNormal, CorruptedHalfIsMasked) {
    const int S = 16;
    Image<double> depth(S, S, 1, 2.0);
    Image<double> rendered(S, S, 3);
    PseudoNormalFrame<double> p{Image<double>(S, S, 3), PixelMask(S * S, 1)};
    const Vec3<double> bad(std::sqrt(1 - 0.81), 0, -0.9);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            rendered.set_vec3(x, y, Vec3<double>(0, 0, -1));
            p.normal.set_vec3(x, y, x < S / 2 ? Vec3<double>(0, 0, -1) : bad);
        }
    const auto l = loss_d_normal(depth, rendered, p, pinhole(S), PixelMask(S * S, 1), 0.005);
    EXPECT_NEAR(l.weight(S - 1, 0), std::exp(-20.0), 1e-15);
    EXPECT_EQ(l.weight(0, 0), 1.0);
    double bad_sum = 0;
    for (int y = 0; y < S; ++y)
        for (int x = S / 2; x < S; ++x) bad_sum += l.contribution(x, y);
    EXPECT_LT(bad_sum, 1e-8);
}

TEST(LossDNormal, InfiniteGammaIsUnweighted) {
    const auto f = noisy_plane(16, 2);
    auto p = uniform_pseudo(16, {0.1, -0.2, -1});
    const PixelMask mask(256, 1);
    const auto l = loss_d_normal(f.depth, f.normal, p, f.cam, mask, std::numeric_limits<double>::infinity());
    const auto map = d_normal(f.depth, f.cam, mask);
    double sum = 0;
    std::size_t count = 0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            if (!map.valid[y * 16 + x]) continue;
            const Vec3<double> a = map.normal.vec3(x, y), b = p.normal.vec3(x, y);
            sum += (a - b).cwiseAbs().sum() + 1 - a.dot(b);
            ++count;
        }
    EXPECT_NEAR(l.value, sum / count, 1e-13);
    EXPECT_DOUBLE_EQ(l.mean_weight, 1.0);
}

TEST(LossDNormal, DepthGradientMatchesFiniteDifferences) {
    const auto f = noisy_plane(10, 3);
    auto p = uniform_pseudo(10, {0.1, -0.2, -1});
    PixelMask mask(100, 1);
    mask[0] = mask[55] = mask[56] = 0; // exercise one-sided stencils
    for (auto src : {ConfidenceSource::rendered_normal, ConfidenceSource::d_normal}) {
        const auto l = loss_d_normal(f.depth, f.normal, p, f.cam, mask, 0.3, src);
        for (std::size_t i = 0; i < f.depth.data.size(); ++i) {
            Image<double> a = f.depth, b = f.depth;
            a.data[i] += 1e-7;
            b.data[i] -= 1e-7;
            const double fd = (loss_d_normal(a, f.normal, p, f.cam, mask, 0.3, src, &l.weight).value -
                               loss_d_normal(b, f.normal, p, f.cam, mask, 0.3, src, &l.weight).value) /
                              2e-7;
            EXPECT_NEAR(l.depth_grad.data[i], fd, 1e-5 * std::max(1.0, std::abs(fd))) << i;
        }
    }
}

TEST(LossTotal, Examples) {
    const LossWeights<double> w;
    EXPECT_EQ(loss_total(LossTerms<double>{}, w), 0.0);
    LossTerms<double> t;
    t.rgb = t.scale = t.normal = t.dnormal = 1.0;
    EXPECT_NEAR(loss_total(t, w), 2.025, 1e-15);
    LossWeights<double> no_dn = w;
    no_dn.lambda3 = 0;
    EXPECT_NEAR(loss_total(t, no_dn), 2.01, 1e-15);
}

TEST(LossMask, AlphaAndValidity) {
    Image<double> alpha(3, 1, 1);
    alpha.data = {0.4, 0.6, 0.9};
    const auto m = make_loss_mask(alpha, PixelMask{1, 1, 0});
    EXPECT_EQ(m, (PixelMask{0, 1, 0}));
}
