#include "cxr/concurrency.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace cxr {

unsigned resolve_threads(unsigned requested) {
  unsigned threads = requested;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CXR_CBIR_THREADS")) {
    try {
      long cap = std::stol(env);
      if (cap >= 1) threads = std::min(threads, static_cast<unsigned>(cap));
    } catch (const std::exception&) {
      // unparsable cap is ignored
    }
  }
  return threads;
}

void parallel_for(std::size_t n_tasks, unsigned threads,
                  const std::function<void(std::size_t)>& task) {
  if (n_tasks == 0) return;
  const auto workers = static_cast<std::size_t>(std::max(1u, threads));
  if (workers == 1 || n_tasks == 1) {
    for (std::size_t i = 0; i < n_tasks; ++i) task(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto run = [&] {
    for (;;) {
      if (failed.load(std::memory_order_relaxed)) return;
      std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n_tasks) return;
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };

  std::vector<std::jthread> pool;
  const std::size_t spawn = std::min(workers, n_tasks) - 1;
  pool.reserve(spawn);
  for (std::size_t w = 0; w < spawn; ++w) pool.emplace_back(run);
  run();
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace cxr
