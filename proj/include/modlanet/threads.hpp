#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace modlanet {

/// Worker count from an explicit request, the MODLANET_THREADS environment
/// variable, or hardware concurrency, in that order.
int resolve_threads(int requested);

/// Runs fn(first, last, worker_index) over a static split of [0, n).
/// The split depends only on (n, threads), so any fold the caller performs
/// in worker-index order is deterministic for a fixed thread count.
template <typename Fn>
void parallel_chunks(std::int64_t n, int threads, Fn&& fn) {
    threads = std::max(1, threads);
    if (threads == 1 || n <= 1) {
        if (n > 0) fn(std::int64_t{0}, n, 0);
        return;
    }
    const int workers = static_cast<int>(std::min<std::int64_t>(threads, n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        const std::int64_t first = n * w / workers;
        const std::int64_t last = n * (w + 1) / workers;
        pool.emplace_back([&fn, first, last, w] { fn(first, last, w); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace modlanet
