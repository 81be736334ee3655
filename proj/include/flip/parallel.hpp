#ifndef FLIP_PARALLEL_HPP_
#define FLIP_PARALLEL_HPP_

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace flip {

/// Worker thread cap from FLIP_THREADS, defaulting to the core count.
inline unsigned worker_threads() {
  unsigned cores = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FLIP_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
  }
  return cores;
}

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads. Work items
/// must write to disjoint outputs; the first exception is rethrown.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(worker_threads(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex guard;
  std::exception_ptr error;
  std::size_t next = 0;
  auto worker = [&]() {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(guard);
        if (next >= n || error) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(guard);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace flip

#endif  // FLIP_PARALLEL_HPP_
