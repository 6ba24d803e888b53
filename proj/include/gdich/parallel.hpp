#pragma once

#include <cstddef>
#include <functional>

namespace gdich {

/// Cap on worker threads used by parallel_for. 0 means hardware concurrency.
void set_max_threads(unsigned n);
unsigned max_threads();

/// Calls body(i) for i in [0, count). Results must be written to slot i so
/// output does not depend on scheduling. The exception from the lowest
/// failing index is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

} // namespace gdich
