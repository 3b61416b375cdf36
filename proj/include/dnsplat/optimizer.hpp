// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/backward.hpp"
#include "dnsplat/densify.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dnsplat {

/// Learning rates per parameter class; the position rate decays exponentially from
/// `position_init` to `position_final` over `position_decay_steps`.
struct AdamConfig {
    double position_init  = 1.6e-4;
    double position_final = 1.6e-6;
    int position_decay_steps = 30000;
    /// Multiplies both position rates (scene length scale).
    double spatial_scale = 1.0;
    double rotation = 1e-3;
    double scale    = 5e-3;
    double opacity  = 5e-2;
    double color    = 2.5e-3;
    double beta1    = 0.9;
    double beta2    = 0.999;
    double epsilon  = 1e-15;

    double position_lr(long step) const {
        const double t = std::clamp(double(step) / double(std::max(1, position_decay_steps)), 0.0, 1.0);
        return spatial_scale * std::exp((1 - t) * std::log(position_init) + t * std::log(position_final));
    }
    double lr(ParamClass c, long step) const {
        switch (c) {
        case ParamClass::position: return position_lr(step);
        case ParamClass::rotation: return rotation;
        case ParamClass::log_scale: return scale;
        case ParamClass::opacity: return opacity;
        case ParamClass::color: return color;
        }
        return 0;
    }
};

template <typename T> struct OptimState {
    using Moments = std::array<T, kParamsPerGaussian>;
    std::vector<Moments> m;
    std::vector<Moments> v;
    long step = 0;

    explicit OptimState(std::size_t n = 0) : m(n, Moments{}), v(n, Moments{}) {}
    std::size_t size() const { return m.size(); }

    /// Follows a scene mutation: carried-over Gaussians keep their moments, fresh ones restart at zero.
    void remap(const IndexRemap &r) {
        std::vector<Moments> nm(r.source.size(), Moments{}), nv(r.source.size(), Moments{});
        for (std::size_t i = 0; i < r.source.size(); ++i) {
            if (r.fresh[i]) continue;
            nm[i] = m.at(static_cast<std::size_t>(r.source[i]));
            nv[i] = v.at(static_cast<std::size_t>(r.source[i]));
        }
        m = std::move(nm);
        v = std::move(nv);
    }
};

namespace detail {
inline ParamClass class_of_param(int i) {
    for (ParamClass c : kAllParamClasses) {
        const auto [b, e] = param_range(c);
        if (i >= b && i < e) return c;
    }
    return ParamClass::color;
}
} // namespace detail

/// One bias-corrected Adam update of every parameter.
template <typename T>
void adam_step(Scene<T> &scene, const ParamGrads<T> &grads, OptimState<T> &st, const AdamConfig &cfg) {
    if (st.size() != scene.size() || grads.gaussians.size() != scene.size()) {
        throw ContractViolation("adam_step: optimizer state does not match the scene");
    }
    ++st.step;
    const double bc1 = 1 - std::pow(cfg.beta1, double(st.step));
    const double bc2 = 1 - std::pow(cfg.beta2, double(st.step));
    std::array<T, kParamsPerGaussian> lr{};
    for (int p = 0; p < kParamsPerGaussian; ++p) lr[static_cast<std::size_t>(p)] = T(cfg.lr(detail::class_of_param(p), st.step - 1));
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2), eps = T(cfg.epsilon);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        auto &g  = scene.gaussians[i];
        auto &m  = st.m[i];
        auto &v  = st.v[i];
        const auto &d = grads.gaussians[i];
        for (int p = 0; p < kParamsPerGaussian; ++p) {
            const auto k = static_cast<std::size_t>(p);
            const T gp   = d[p];
            m[k]         = b1 * m[k] + (T(1) - b1) * gp;
            v[k]         = b2 * v[k] + (T(1) - b2) * gp * gp;
            const T mhat = m[k] / T(bc1);
            const T vhat = v[k] / T(bc2);
            g.param(p) -= lr[k] * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

inline constexpr std::string_view kOptimizerMagic = "DNSOPT01";

/// Versioned binary blob: magic, u32 scalar width, i64 step, u64 count, then m and v rows.
template <typename T> std::string save_optimizer(const OptimState<T> &st) {
    std::string out(kOptimizerMagic);
    detail::put_le(out, static_cast<std::uint32_t>(sizeof(T)));
    detail::put_le(out, static_cast<std::int64_t>(st.step));
    detail::put_le(out, static_cast<std::uint64_t>(st.size()));
    for (const auto *rows : {&st.m, &st.v})
        for (const auto &row : *rows)
            for (T x : row) detail::put_le(out, x);
    return out;
}

template <typename T> OptimState<T> load_optimizer(std::string_view bytes) {
    auto fail = [](const char *why) { throw std::runtime_error(std::string("optimizer blob: ") + why); };
    if (!bytes.starts_with(kOptimizerMagic)) fail("bad magic or version");
    std::size_t pos = kOptimizerMagic.size();
    auto get        = [&]<typename V>(V) {
        if (pos + sizeof(V) > bytes.size()) fail("truncated");
        V v;
        std::memcpy(&v, bytes.data() + pos, sizeof(V));
        pos += sizeof(V);
        return v;
    };
    const auto width = get(std::uint32_t{});
    if (width != sizeof(T)) fail("scalar width mismatch");
    const auto step = get(std::int64_t{});
    const auto n    = get(std::uint64_t{});
    if ((bytes.size() - pos) != n * 2 * kParamsPerGaussian * sizeof(T)) fail("size does not match the header");
    OptimState<T> st(static_cast<std::size_t>(n));
    st.step = static_cast<long>(step);
    for (auto *rows : {&st.m, &st.v})
        for (auto &row : *rows)
            for (T &x : row) x = get(T{});
    return st;
}

} // namespace dnsplat
