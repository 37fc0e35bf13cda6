#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace selfret::detail {

// Runs fn(begin, end) over contiguous chunks of [0, n). The first exception
// thrown by any worker is rethrown on the caller's thread.
template <class Fn>
void parallel_chunks(std::size_t n, std::size_t threads, std::size_t chunk,
                     Fn&& fn) {
  chunk = std::max<std::size_t>(chunk, 1);
  if (threads <= 1 || n <= chunk) {
    for (std::size_t b = 0; b < n; b += chunk) fn(b, std::min(n, b + chunk));
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  auto worker = [&] {
    for (;;) {
      std::size_t b;
      {
        std::lock_guard lock(mu);
        if (next >= n || error) return;
        b = next;
        next += chunk;
      }
      try {
        fn(b, std::min(n, b + chunk));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace selfret::detail
