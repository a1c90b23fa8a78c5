#pragma once

#include <cstddef>
#include <functional>

namespace lfts {

/// Worker count from LFTS_THREADS, else the hardware concurrency (at least 1).
std::size_t default_threads();

/// Runs fn(0..n-1) on up to `threads` workers (0: default_threads()). Work is
/// handed out in index order. If any call throws, the exception from the
/// lowest failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace lfts
