#include "cinelstm/tensor_io.hpp"

#include <array>
#include <istream>
#include <ostream>

#include "cinelstm/binary_io.hpp"

namespace cinelstm {
namespace {

std::array<std::uint32_t, 3> stored_dims(const Shape& s) {
  switch (s.rank()) {
    case 1:
      return {static_cast<std::uint32_t>(s[0]), 1, 1};
    case 3:
      return {static_cast<std::uint32_t>(s[0]), static_cast<std::uint32_t>(s[1]), static_cast<std::uint32_t>(s[2])};
    case 4:
      return {static_cast<std::uint32_t>(s[0] * s[1]), static_cast<std::uint32_t>(s[2]),
              static_cast<std::uint32_t>(s[3])};
    default:
      throw std::invalid_argument("write_tensor: unsupported shape " + s.str());
  }
}

}  // namespace

std::size_t tensor_blob_bytes(const Shape& shape) { return kTensorHeaderBytes + 4 * shape.numel(); }

void write_tensor(std::ostream& os, const Tensor<float>& t) {
  const auto dims = stored_dims(t.shape());
  os.write("TNS1", 4);
  for (std::uint32_t d : dims) binio::put_u32(os, d);
  for (float v : t.data()) binio::put_f32(os, v);
}

Tensor<float> read_tensor(std::istream& is) {
  binio::expect_magic(is, "TNS1", "tensor blob");
  const std::uint32_t c = binio::get_u32(is, "tensor dims");
  const std::uint32_t h = binio::get_u32(is, "tensor dims");
  const std::uint32_t w = binio::get_u32(is, "tensor dims");
  const std::size_t n = static_cast<std::size_t>(c) * h * w;
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = binio::get_f32(is, "tensor payload");
  return Tensor<float>(Shape::chw(c, h, w), std::move(values));
}

}  // namespace cinelstm
