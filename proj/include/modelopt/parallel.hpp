#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace modelopt
{
  /// Worker count: MODELOPT_THREADS if set, otherwise the hardware concurrency.
  unsigned worker_count();

  /**
   * Calls fn(i) for i in [0, n) on up to worker_count() threads. Callers
   * write into per-index slots, so results do not depend on scheduling.
   * The exception of the smallest failing index is rethrown.
   */
  template <typename F>
  void parallel_for(std::size_t n, F &&fn)
  {
    const std::size_t workers = std::min<std::size_t>(worker_count(), n);
    if (workers <= 1)
    {
      for (std::size_t i = 0; i < n; ++i)
        fn(i);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    auto work = [&] {
      for (std::size_t i = next++; i < n; i = next++)
      {
        try
        {
          fn(i);
        }
        catch (...)
        {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < workers; ++t)
      pool.emplace_back(work);
    work();
    for (auto &t : pool)
      t.join();
    for (auto &e : errors)
      if (e)
        std::rethrow_exception(e);
  }
} // namespace modelopt
