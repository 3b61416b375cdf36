// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace dnsplat {

struct ExecutionPolicy {
    int threads        = 1;
    /// Fixed work partition and fixed-order reductions, so results are bit-reproducible.
    bool deterministic = true;

    int worker_count(std::size_t items) const {
        const int t = std::max(1, threads);
        return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(t), std::max<std::size_t>(items, 1)));
    }
};

/// Splits [0, n) into `workers` contiguous chunks and calls body(worker, begin, end).
template <typename F> void parallel_chunks(std::size_t n, int workers, F &&body) {
    if (workers <= 1) {
        body(0, std::size_t{0}, n);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    const std::size_t per = (n + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
    for (int w = 1; w < workers; ++w) {
        const std::size_t b = std::min(n, per * static_cast<std::size_t>(w));
        const std::size_t e = std::min(n, b + per);
        pool.emplace_back([&body, w, b, e] { body(w, b, e); });
    }
    body(0, std::size_t{0}, std::min(n, per));
}

/// Workers claim items one at a time; body(worker, item). Assignment is scheduling dependent.
template <typename F> void parallel_dynamic(std::size_t n, int workers, F &&body) {
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(0, i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto run = [&](int w) {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(w, i);
    };
    std::vector<std::jthread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(run, w);
    run(0);
}

} // namespace dnsplat
