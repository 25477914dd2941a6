#pragma once

#include <cstddef>
#include <functional>

namespace hbsimex {

// Runs fn(0..n-1) on up to `threads` workers. Work items must write to
// disjoint outputs. If several items throw, the exception of the lowest
// index is rethrown so failures do not depend on scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace hbsimex
