#include "gazekit/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace gazekit {

std::size_t thread_count() {
  std::size_t requested = 0;
  if (const char* env = std::getenv("GAZEKIT_THREADS")) {
    try {
      requested = static_cast<std::size_t>(std::stoul(env));
    } catch (const std::exception&) {
      requested = 0;
    }
  }
  if (requested == 0) requested = std::max(1u, std::thread::hardware_concurrency());
  return requested;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  // Report the failure with the lowest index so errors are deterministic.
  std::exception_ptr first_error;
  std::size_t first_index = n;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < first_index) {
          first_index = i;
          first_error = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace gazekit
