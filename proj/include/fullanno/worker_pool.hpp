#pragma once

#include <cstddef>
#include <functional>

namespace fullanno {

/// Runs fn(i) for i in [0, count) on up to `workers` threads and waits for
/// all of them. The first exception thrown by any fn is rethrown after every
/// worker has stopped.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace fullanno
