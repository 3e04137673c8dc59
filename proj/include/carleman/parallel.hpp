#pragma once

#include <cstddef>
#include <functional>

namespace carleman {

// Caps the worker pool for every parallel region (0 keeps the default).
void set_threads(int n);
int thread_count();

// Runs fn(i) for i in [0, n) on the pool; the body must only write disjoint data.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace carleman
