#pragma once

#include <cstddef>
#include <functional>

namespace clusterseq {

/// Worker count: CLUSTERSEQ_THREADS if set and positive, otherwise the
/// hardware concurrency.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) across up to thread_count() threads. Each index
/// runs exactly once; callers write results into per-index slots so the
/// outcome does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace clusterseq
