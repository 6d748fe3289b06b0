#pragma once

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace stwave {

// Worker count for data-parallel loops. Fixed per machine (and overridable
// via STWAVE_THREADS) so reductions stay bitwise reproducible across runs.
inline long worker_count() {
    static const long n = [] {
        if (const char* env = std::getenv("STWAVE_THREADS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return std::min(v, 64L);
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return static_cast<long>(std::clamp(hw, 1u, 4u));
    }();
    return n;
}

// Runs fn(begin, end, worker_index) over contiguous chunks of [0, n).
// Callers own the reduction and must merge per-worker state in worker order.
template <class Fn>
inline void parallel_chunks(long n, long workers, Fn&& fn) {
    if (n <= 0) return;
    workers = std::clamp(workers, 1L, n);
    if (workers == 1) {
        fn(0L, n, 0L);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const long chunk = (n + workers - 1) / workers;
    for (long w = 0; w < workers; ++w) {
        const long begin = w * chunk;
        const long end = std::min(begin + chunk, n);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end, w] { fn(begin, end, w); });
    }
    for (auto& th : pool) th.join();
}

} // namespace stwave
