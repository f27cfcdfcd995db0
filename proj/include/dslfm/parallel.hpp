#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dslfm {

/// Parallel-map capability handed to estimators.
///
/// Work items are indexed 0..n-1 and each writes only to its own output slot,
/// so results never depend on the thread count or scheduling order. The
/// first exception thrown by any item is rethrown on the calling thread.
class Executor {
public:
    explicit Executor(std::size_t threads = 1) : threads_(std::max<std::size_t>(1, threads)) {}

    std::size_t threads() const noexcept { return threads_; }

    template <class Fn>
    void for_each_index(std::size_t n, Fn&& fn) const {
        if (n == 0) return;
        const std::size_t workers = std::min(threads_, n);
        if (workers == 1) {
            for (std::size_t i = 0; i < n; ++i) fn(i);
            return;
        }
        std::atomic<std::size_t> next{0};
        std::atomic<bool> failed{false};
        std::exception_ptr error;
        std::mutex error_mutex;
        auto body = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n || failed.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed.store(true);
                }
            }
        };
        std::vector<std::jthread> pool;
        pool.reserve(workers - 1);
        for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
        body();
        pool.clear();
        if (error) std::rethrow_exception(error);
    }

    template <class T, class Fn>
    std::vector<T> map(std::size_t n, Fn&& fn) const {
        std::vector<T> out(n);
        for_each_index(n, [&](std::size_t i) { out[i] = fn(i); });
        return out;
    }

private:
    std::size_t threads_;
};

inline const Executor& serial_executor() {
    static const Executor serial{1};
    return serial;
}

}  // namespace dslfm
