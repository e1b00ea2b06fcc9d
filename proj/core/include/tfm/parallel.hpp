#pragma once

#include <cstddef>
#include <functional>

namespace tfm {

/// Worker count from TFMFORGE_THREADS (default 1, clamped to >= 1).
std::size_t worker_threads();

/// Runs fn(i) for i in [0, count) on up to `threads` threads. Work items are
/// handed out in index order; the exception of the lowest failing index is
/// rethrown after all workers finish.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace tfm
