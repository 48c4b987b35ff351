#pragma once

#include <cstddef>
#include <functional>

namespace cinelstm {

// Worker count used inside convolution kernels. Defaults to 1, or the value
// of CINELSTM_THREADS when set. Work is split over independent output
// planes, so results are bit-identical for any thread count.
std::size_t num_threads();
void set_num_threads(std::size_t n);

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace cinelstm
