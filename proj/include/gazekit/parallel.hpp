#pragma once

#include <cstddef>
#include <functional>

namespace gazekit {

// Worker count from GAZEKIT_THREADS (unset or 0 = hardware concurrency).
std::size_t thread_count();

// Runs fn(i) for i in [0, n) across thread_count() workers. Callers write
// results into per-index slots and reduce afterwards in index order, so
// output never depends on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace gazekit
