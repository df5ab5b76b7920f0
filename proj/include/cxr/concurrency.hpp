#pragma once

#include <cstddef>
#include <functional>

namespace cxr {

/// Worker count for a request of `requested` threads (0 = hardware
/// concurrency), capped by the CXR_CBIR_THREADS environment variable.
unsigned resolve_threads(unsigned requested);

/// Runs `task(i)` for i in [0, n_tasks) on up to `threads` workers. Tasks are
/// claimed dynamically, so `task` must not depend on which worker runs it.
/// The first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n_tasks, unsigned threads,
                  const std::function<void(std::size_t)>& task);

}  // namespace cxr
