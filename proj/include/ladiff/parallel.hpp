#pragma once

#include <cstddef>
#include <functional>

namespace ladiff {

/// Worker count: LADIFF_THREADS if set and positive, else hardware
/// concurrency (at least 1).
int worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Work is
/// claimed dynamically, so fn must not depend on execution order. The first
/// exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ladiff
