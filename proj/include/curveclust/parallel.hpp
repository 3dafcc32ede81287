#pragma once

#include <cstddef>
#include <functional>

namespace curveclust {

// Worker count: hardware concurrency capped by CURVECLUST_THREADS when set.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Tasks must write to disjoint outputs; callers
// merge results by index so the outcome is independent of scheduling. Nested
// calls from inside a worker run serially.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace curveclust
