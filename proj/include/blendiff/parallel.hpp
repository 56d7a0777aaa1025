#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace blendiff {

inline unsigned resolve_workers(unsigned requested) {
    if (requested > 0) return requested;
    return std::max(1u, std::thread::hardware_concurrency());
}

// Calls fn(i) for i in [0, count) on up to `workers` threads. Items are
// claimed dynamically; the first exception is rethrown after all threads join.
inline void parallel_for(int count, unsigned workers, const std::function<void(int)>& fn) {
    const unsigned n = std::min<unsigned>(resolve_workers(workers), static_cast<unsigned>(std::max(count, 0)));
    if (n <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first;
    std::atomic<bool> failed{false};
    std::vector<std::jthread> pool;
    pool.reserve(n);
    for (unsigned w = 0; w < n; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    if (!failed.exchange(true)) first = std::current_exception();
                }
            }
        });
    }
    pool.clear();
    if (first) std::rethrow_exception(first);
}

}  // namespace blendiff
