#pragma once

#include <cstddef>
#include <functional>

namespace pmfuse {

/// Worker count: PMFUSE_THREADS if set, else hardware concurrency.
int default_thread_count();

/// Runs body(i) for i in [0, n) on up to `threads` workers. Work items must
/// not share mutable state; the first exception thrown is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

}  // namespace pmfuse
