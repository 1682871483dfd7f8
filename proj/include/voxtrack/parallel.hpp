#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace voxtrack {

/// Splits [0, n) into a fixed number of chunks and runs them on up to
/// `threads` workers. The chunk partition depends only on n, so any code that
/// writes disjoint outputs per index (or reduces per-chunk partials in chunk
/// order) produces bit-identical results for every thread count.
inline constexpr int kParallelChunks = 16;

inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t, std::size_t, int)>& chunk_fn) {
    if (n == 0) return;
    const int chunks = kParallelChunks;
    auto run_chunk = [&](int c) {
        std::size_t lo = n * static_cast<std::size_t>(c) / chunks;
        std::size_t hi = n * static_cast<std::size_t>(c + 1) / chunks;
        if (lo < hi) chunk_fn(lo, hi, c);
    };
    if (threads <= 1 || n < 256) {
        for (int c = 0; c < chunks; ++c) run_chunk(c);
        return;
    }
    std::vector<std::thread> pool;
    const int workers = threads < chunks ? threads : chunks;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int c = w; c < chunks; c += workers) run_chunk(c);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace voxtrack
