#pragma once

#include <cstdint>
#include <functional>

namespace shapemoire {

// Worker count used by batch-parallel kernels. Defaults to 1. Results do not
// depend on the setting: per-sample work writes disjoint outputs and every
// cross-sample reduction runs in sample order afterwards.
void set_num_threads(int n);
int num_threads();

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

}  // namespace shapemoire

namespace shapemoire {

// Keeps freed tensor buffers in the heap instead of returning them to the OS,
// so per-step allocations stop paying for fresh zeroed pages. Process-wide,
// idempotent; a no-op outside glibc.
void retain_heap_memory();

}  // namespace shapemoire
