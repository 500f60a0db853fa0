#pragma once

#include <cstddef>
#include <functional>

namespace camf {

// CAMF_THREADS when set to a positive integer, else the hardware count.
std::size_t thread_count();

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// handled exactly once; the exception of the lowest failing index is
// rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace camf
