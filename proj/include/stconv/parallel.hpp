#pragma once

#include <cstddef>
#include <functional>

namespace stconv {

/// Worker count: STCONV_THREADS if set and positive, else hardware concurrency.
std::size_t default_workers();

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index runs
/// exactly once; the first exception thrown is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace stconv
