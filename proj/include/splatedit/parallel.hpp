// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace splatedit {

/// Resolves a requested worker count; 0 means "all hardware threads".
inline int resolve_threads(int requested) {
    if (requested > 0) {
        return requested;
    }
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

/// Runs `fn(i)` for i in [0, count) across `threads` workers.
///
/// Work items are claimed dynamically, so `fn` must only write to state owned
/// by item `i`. The first exception thrown by any item is rethrown after all
/// workers join.
template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn &&fn) {
    const int workers = std::min<int>(resolve_threads(threads), static_cast<int>(count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= count) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next.store(count, std::memory_order_relaxed);
                return;
            }
        }
    };

    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (int w = 1; w < workers; ++w) {
        pool.emplace_back(worker);
    }
    worker();
    pool.clear();
    if (failure) {
        std::rethrow_exception(failure);
    }
}

} // namespace splatedit
