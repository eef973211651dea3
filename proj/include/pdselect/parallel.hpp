#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace pdselect {

/// Static range partition over [0, n). Each worker owns a contiguous,
/// disjoint index range and writes only to preallocated slots, so results
/// are identical for any thread count.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        fn(std::size_t{0}, n);
        return;
    }
    const auto t = static_cast<std::size_t>(threads) < n
                       ? static_cast<std::size_t>(threads)
                       : n;
    std::vector<std::thread> pool;
    pool.reserve(t);
    const std::size_t chunk = (n + t - 1) / t;
    for (std::size_t w = 0; w < t; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = lo + chunk < n ? lo + chunk : n;
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace pdselect
