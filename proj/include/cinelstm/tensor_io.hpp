#pragma once

#include <iosfwd>

#include "cinelstm/tensor.hpp"

namespace cinelstm {

// Blob layout: "TNS1", three little-endian u32 dims, then little-endian
// f32 values in row-major order within each channel. Rank-1 tensors are
// stored as n x 1 x 1 and rank-4 kernels as (out*in) x kh x kw; readers
// restore the logical shape with Tensor::reshaped.
inline constexpr std::size_t kTensorHeaderBytes = 16;

std::size_t tensor_blob_bytes(const Shape& shape);
void write_tensor(std::ostream& os, const Tensor<float>& t);
Tensor<float> read_tensor(std::istream& is);

}  // namespace cinelstm
