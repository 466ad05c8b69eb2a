#pragma once

#include <cstddef>
#include <functional>

namespace memflow {

/// Worker count for parallel maps: the explicit setting if any, otherwise the
/// MEMFLOW_THREADS environment variable, otherwise 1.
int thread_count();
void set_thread_count(int n);

/// Runs body(i) for i in [0, n). Each index is visited exactly once; results
/// must be written to disjoint slots so the outcome is independent of the
/// worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace memflow
