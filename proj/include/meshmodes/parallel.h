#ifndef MESHMODES_PARALLEL_H_
#define MESHMODES_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace meshmodes {

/// Worker count: MESHMODES_THREADS if set and positive, otherwise the
/// hardware concurrency (at least 1).
int worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index is
/// visited exactly once; the first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace meshmodes

#endif  // MESHMODES_PARALLEL_H_
