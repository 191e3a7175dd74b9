#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace msseg::detail {

/// Runs fn(i) for i in [0, count) on at most `jobs` threads. Work is handed
/// out by an atomic counter; fn must only touch slot i of any shared output.
template <typename Fn>
void parallel_for(std::size_t count, int jobs, Fn && fn) {
    auto const workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(std::min(workers, count));
    for (std::size_t w = 0; w < std::min(workers, count); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                fn(i);
            }
        });
    }
    for (auto & t : pool) {
        t.join();
    }
}

} // namespace msseg::detail
