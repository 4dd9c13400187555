#pragma once

#include <cstdint>
#include <functional>

namespace voxseg {

/// Worker count used by the tensor kernels. Defaults to 1.
int num_threads();
void set_num_threads(int n);

// Runs body(i) for i in [0, n). Each index is handled by exactly one
// worker and kernels only parallelize over independent outputs, so results
// do not depend on the thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

}  // namespace voxseg
