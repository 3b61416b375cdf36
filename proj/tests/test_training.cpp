// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#include <dnsplat/pipeline.hpp>
#include <dnsplat/ply.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

using namespace dnsplat;

namespace {

SceneSpec small_plane_spec() {
    return parse_scene_spec(nlohmann::json::parse(
        R"({"primitives":[{"type":"plane","size":[2,2],"albedo":[0.8,0.6,0.4],"checker":0.25}],
            "cameras":{"count":6,"radius":3,"elevation_deg":[35,60],"fov_deg":50},
            "image":{"width":24,"height":24},
            "init":{"points":60,"jitter":0.02}})"));
}

Scene<double> random_scene(std::size_t n, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    Scene<double> s;
    s.bounds = {Vec3<double>::Constant(-1), Vec3<double>::Constant(1)};
    for (std::size_t i = 0; i < n; ++i) {
        Gaussian<double> g;
        g.position      = {u(rng), u(rng), u(rng)};
        g.rotation      = Quaternion<double>{u(rng), u(rng), u(rng), u(rng)}.normalized();
        g.log_scale     = {u(rng), u(rng), u(rng)};
        g.opacity_logit = u(rng);
        for (auto &c : g.color) c = u(rng);
        s.gaussians.push_back(g);
    }
    return s;
}

ParamGrads<double> random_grads(std::size_t n, std::mt19937_64 &rng) {
    std::normal_distribution<double> nd(0, 1);
    ParamGrads<double> g(n);
    for (auto &row : g.gaussians)
        for (int p = 0; p < kParamsPerGaussian; ++p) row[p] = nd(rng);
    return g;
}

} // namespace

TEST(Adam, MatchesScalarReference) {
    std::mt19937_64 rng(1);
    const Scene<double> start = random_scene(3, rng);
    std::vector<ParamGrads<double>> grads;
    for (int k = 0; k < 4; ++k) grads.push_back(random_grads(3, rng));
    AdamConfig cfg;
    cfg.spatial_scale        = 2.5;
    cfg.position_decay_steps = 3;

    Scene<double> scene = start;
    OptimState<double> st(3);
    for (const auto &g : grads) adam_step(scene, g, st, cfg);
    EXPECT_EQ(st.step, 4);

    // independent scalar recurrence per parameter
    const double rates[4][5] = {{1.6e-4, 1e-3, 5e-3, 5e-2, 2.5e-3},
                                {1.6e-4 * std::pow(1e-2, 1.0 / 3), 1e-3, 5e-3, 5e-2, 2.5e-3},
                                {1.6e-4 * std::pow(1e-2, 2.0 / 3), 1e-3, 5e-3, 5e-2, 2.5e-3},
                                {1.6e-6, 1e-3, 5e-3, 5e-2, 2.5e-3}};
    for (std::size_t i = 0; i < 3; ++i) {
        for (int p = 0; p < kParamsPerGaussian; ++p) {
            const int cls = p < 3 ? 0 : p < 7 ? 1 : p < 10 ? 2 : p < 11 ? 3 : 4;
            double x = start.gaussians[i].param(p), m = 0, v = 0;
            for (int t = 0; t < 4; ++t) {
                const double g  = grads[static_cast<std::size_t>(t)].gaussians[i][p];
                m               = 0.9 * m + 0.1 * g;
                v               = 0.999 * v + 0.001 * g * g;
                const double mh = m / (1 - std::pow(0.9, t + 1)), vh = v / (1 - std::pow(0.999, t + 1));
                const double lr = rates[t][cls] * (cls == 0 ? 2.5 : 1.0);
                x -= lr * mh / (std::sqrt(vh) + 1e-15);
            }
            EXPECT_NEAR(scene.gaussians[i].param(p), x, 1e-14 * std::max(1.0, std::abs(x))) << "param " << p;
        }
    }
}

TEST(Adam, PositionScheduleEndpoints) {
    AdamConfig cfg;
    cfg.position_decay_steps = 1000;
    EXPECT_DOUBLE_EQ(cfg.position_lr(0), 1.6e-4);
    EXPECT_NEAR(cfg.position_lr(500), 1.6e-5, 1e-18);
    EXPECT_NEAR(cfg.position_lr(1000), 1.6e-6, 1e-20);
    EXPECT_NEAR(cfg.position_lr(5000), 1.6e-6, 1e-20);
}

TEST(Adam, RejectsMismatchedState) {
    std::mt19937_64 rng(2);
    Scene<double> s = random_scene(3, rng);
    OptimState<double> st(2);
    EXPECT_THROW(adam_step(s, random_grads(3, rng), st, AdamConfig{}), ContractViolation);
}

TEST(OptimizerBlob, RoundTripAndErrors) {
    std::mt19937_64 rng(3);
    Scene<double> s = random_scene(4, rng);
    OptimState<double> st(4);
    adam_step(s, random_grads(4, rng), st, AdamConfig{});
    adam_step(s, random_grads(4, rng), st, AdamConfig{});
    const std::string blob = save_optimizer(st);
    EXPECT_EQ(blob.substr(0, 8), "DNSOPT01");
    EXPECT_EQ(blob.size(), 8 + 4 + 8 + 8 + 2 * 4 * kParamsPerGaussian * sizeof(double));
    const auto back = load_optimizer<double>(blob);
    EXPECT_EQ(back.step, 2);
    EXPECT_EQ(back.m, st.m);
    EXPECT_EQ(back.v, st.v);

    EXPECT_THROW(load_optimizer<float>(blob), std::runtime_error);
    EXPECT_THROW(load_optimizer<double>(blob.substr(0, blob.size() - 1)), std::runtime_error);
    EXPECT_THROW(load_optimizer<double>("DNSOPT02" + blob.substr(8)), std::runtime_error);
    EXPECT_THROW(load_optimizer<double>(blob.substr(0, 10)), std::runtime_error);
}

TEST(OptimizerState, RemapKeepsCarriedMomentsAndZeroesFresh) {
    OptimState<double> st(3);
    for (std::size_t i = 0; i < 3; ++i) {
        st.m[i].fill(double(i + 1));
        st.v[i].fill(double(10 * (i + 1)));
    }
    st.remap({{2, 0, 1, 1}, {0, 0, 1, 0}});
    ASSERT_EQ(st.size(), 4u);
    EXPECT_EQ(st.m[0][5], 3.0);
    EXPECT_EQ(st.v[1][0], 10.0);
    EXPECT_EQ(st.m[2][0], 0.0);
    EXPECT_EQ(st.v[2][22], 0.0);
    EXPECT_EQ(st.m[3][0], 2.0);
}

class TrainTest : public ::testing::Test {
  protected:
    void SetUp() override {
        spec    = small_plane_spec();
        views   = make_views(spec).views<double>();
        initial = initial_scene(spec);
    }
    SceneSpec spec;
    std::vector<View<double>> views;
    Scene<double> initial;
};

TEST_F(TrainTest, ZeroIterationsReturnsInitialScene) {
    auto cfg = default_train_config<double>(spec, 0);
    const auto r = train(initial, views, cfg);
    EXPECT_EQ(save_ply(r.scene), save_ply(initial));
    EXPECT_TRUE(r.log.empty());
    EXPECT_TRUE(r.events.empty());
}

TEST_F(TrainTest, DeterministicAcrossRunsWithAdaptiveControl) {
    auto cfg                        = default_train_config<double>(spec, 60, 5);
    cfg.densify.interval            = 20;
    cfg.exec.deterministic          = true;
    std::vector<std::string> ckpts;
    const auto a = train(initial, views, cfg);
    const auto b = train(initial, views, cfg, [&](int, const Scene<double> &s, const OptimState<double> &) {
        ckpts.push_back(save_ply(s));
    });
    EXPECT_EQ(loss_csv(a.log), loss_csv(b.log));
    EXPECT_EQ(densify_csv(a.events), densify_csv(b.events));
    EXPECT_EQ(save_ply(a.scene), save_ply(b.scene));
    EXPECT_EQ(save_optimizer(a.optimizer), save_optimizer(b.optimizer));
    EXPECT_TRUE(ckpts.empty()); // checkpoint_every = 0

    ASSERT_EQ(a.events.size(), 2u); // at 20 and 40; not at the final iteration
    EXPECT_EQ(a.events[0].iteration, 20);
    EXPECT_EQ(a.events[1].iteration, 40);
    EXPECT_EQ(a.optimizer.size(), a.scene.size());
    EXPECT_EQ(a.log.size(), 60u);
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].view, int(i % views.size()));
}

TEST_F(TrainTest, CheckpointCallbackPeriod) {
    auto cfg             = default_train_config<double>(spec, 25);
    cfg.checkpoint_every = 10;
    std::vector<int> seen;
    train(initial, views, cfg, [&](int it, const Scene<double> &, const OptimState<double> &st) {
        seen.push_back(it);
        EXPECT_EQ(st.step, it);
    });
    EXPECT_EQ(seen, (std::vector<int>{10, 20}));
}

TEST_F(TrainTest, NoAdaptiveControlAfterCutoff) {
    auto cfg                       = default_train_config<double>(spec, 50);
    cfg.densify.interval           = 10;
    cfg.densify.densify_until_iter = 30;
    const auto r                   = train(initial, views, cfg);
    ASSERT_EQ(r.events.size(), 2u);
    EXPECT_EQ(r.events.back().iteration, 20);
}

TEST_F(TrainTest, NonFiniteLossAbortsNamingIterationAndTerm) {
    auto bad                         = views;
    bad[1].target.data[bad[1].target.data.size() / 2] = std::numeric_limits<double>::quiet_NaN();
    auto cfg                         = default_train_config<double>(spec, 5);
    try {
        train(initial, bad, cfg);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError &e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("iteration 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("L_rgb"), std::string::npos) << msg;
    }
}

TEST_F(TrainTest, CsvHeadersAndRows) {
    auto cfg             = default_train_config<double>(spec, 12);
    cfg.densify.interval = 5;
    const auto r         = train(initial, views, cfg);
    const std::string loss = loss_csv(r.log);
    EXPECT_EQ(loss.substr(0, loss.find('\n')), "iteration,view,L_rgb,L_s,L_n,L_dn,total,mean_weight,gaussians");
    EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 13);
    const std::string dens = densify_csv(r.events);
    EXPECT_EQ(dens.substr(0, dens.find('\n')), "iteration,n_surface_split,n_grad_clone,n_grad_split,n_pruned,total");
    EXPECT_EQ(std::count(dens.begin(), dens.end(), '\n'), 3);
}

TEST_F(TrainTest, EmptyViewsRejected) {
    EXPECT_THROW(train(initial, {}, default_train_config<double>(spec, 1)), std::invalid_argument);
}
