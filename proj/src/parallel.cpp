#include "shapemoire/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace shapemoire {

namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }

int num_threads() { return g_threads.load(); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body) {
    const auto workers = std::min<std::int64_t>(num_threads(), n);
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (std::int64_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (auto i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
        });
    }
}

}  // namespace shapemoire

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace shapemoire {

void retain_heap_memory() {
#if defined(__GLIBC__)
    static const bool done = [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)done;
#endif
}

}  // namespace shapemoire
