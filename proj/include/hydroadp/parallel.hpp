#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hydroadp {

/// Run fn(i) for i in [0, count) on `workers` threads. Each index is handled
/// exactly once; callers must write results into per-index slots so the
/// outcome is identical for any worker count. Exceptions are captured and the
/// first one (by index) is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  if (count == 0) return;
  if (workers <= 1 || count == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const int nthreads =
      static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), count));
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::size_t first_err_index = count;
  std::exception_ptr first_err;
  auto body = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (i < first_err_index) {
          first_err_index = i;
          first_err = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(nthreads));
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (first_err) std::rethrow_exception(first_err);
}

}  // namespace hydroadp
