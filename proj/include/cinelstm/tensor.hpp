#pragma once

// Dense tensors with a reverse-mode tape.
//
// A Tensor is an immutable value (shared storage) that may carry a handle
// into a Tape. Operations on tensors that carry a tape record a node with a
// backward rule; operations on untaped tensors are plain forward math.
// Feature maps are rank 3 (channels x height x width); convolution kernels
// are rank 4 (out x in x kh x kw); biases are rank 1.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cinelstm/parallel.hpp"

namespace cinelstm {

class Shape {
 public:
  Shape() = default;

  static Shape vec(std::size_t n) { return Shape({n, 0, 0, 0}, 1); }
  static Shape chw(std::size_t c, std::size_t h, std::size_t w) { return Shape({c, h, w, 0}, 3); }
  static Shape kernel(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw) {
    return Shape({out, in, kh, kw}, 4);
  }
  static Shape scalar() { return chw(1, 1, 1); }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t axis) const { return dims_[axis]; }

  std::size_t numel() const {
    if (rank_ == 0) return 0;
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  std::string str() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < rank_; ++i) os << (i ? "x" : "") << dims_[i];
    if (rank_ == 0) os << "<empty>";
    return os.str();
  }

  friend bool operator==(const Shape& a, const Shape& b) {
    return a.rank_ == b.rank_ && a.dims_ == b.dims_;
  }

 private:
  Shape(std::array<std::size_t, 4> dims, std::size_t rank) : dims_(dims), rank_(rank) {}
  std::array<std::size_t, 4> dims_{};
  std::size_t rank_ = 0;
};

template <typename T>
class Tape;

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(std::make_shared<std::vector<T>>(shape.numel(), fill)) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(shape) {
    if (values.size() != shape.numel()) {
      throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                  " does not match shape " + shape.str());
    }
    data_ = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor zeros(Shape shape) { return Tensor(shape, T(0)); }
  static Tensor ones(Shape shape) { return Tensor(shape, T(1)); }

  bool empty() const { return shape_.rank() == 0; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_ ? data_->size() : 0; }

  std::size_t channels() const { return shape_[0]; }
  std::size_t height() const { return shape_[1]; }
  std::size_t width() const { return shape_[2]; }

  std::span<const T> data() const {
    return data_ ? std::span<const T>(*data_) : std::span<const T>();
  }

  // Copy-on-write access. Tensors already captured by a tape keep their
  // values; the caller gets a private buffer when storage is shared.
  std::span<T> mutable_data() {
    if (!data_) return {};
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<T>>(*data_);
    return std::span<T>(*data_);
  }

  T operator[](std::size_t i) const { return (*data_)[i]; }
  T at(std::size_t c, std::size_t y, std::size_t x) const {
    return (*data_)[(c * shape_[1] + y) * shape_[2] + x];
  }

  bool requires_grad() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  std::size_t node() const { return node_; }

  Tensor detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
  }

  Tensor reshaped(Shape shape) const {
    if (shape.numel() != shape_.numel()) {
      throw std::invalid_argument("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    Tensor t = detached();
    t.shape_ = shape;
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(size());
    std::transform(data().begin(), data().end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  friend class Tape<T>;
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  std::size_t node_ = 0;
};

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Gradients produced by Tape::backward, indexed by node.
template <typename T>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::vector<T>> per_node) : per_node_(std::move(per_node)) {}

  // Gradient of the loss w.r.t. a taped tensor; zeros when it was not on
  // the path to the loss.
  Tensor<T> of(const Tensor<T>& t) const {
    if (!t.requires_grad() || t.node() >= per_node_.size() || per_node_[t.node()].empty()) {
      return Tensor<T>::zeros(t.shape());
    }
    return Tensor<T>(t.shape(), per_node_[t.node()]);
  }

 private:
  std::vector<std::vector<T>> per_node_;
};

template <typename T>
class Tape {
 public:
  // grads[i] is null when input i does not need a gradient.
  using BackwardFn = std::function<void(std::span<const T> grad_out, std::span<std::vector<T>* const> grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf and returns it bound to this tape (storage is shared).
  Tensor<T> watch(const Tensor<T>& value) {
    Tensor<T> t = value.detached();
    t.tape_ = this;
    t.node_ = nodes_.size();
    nodes_.push_back(Node{{}, value.size(), nullptr});
    return t;
  }

  void watch_in_place(Tensor<T>& value) { value = watch(value); }

  Tensor<T> record(Tensor<T> out, std::initializer_list<const Tensor<T>*> inputs, BackwardFn fn) {
    return record(std::move(out), std::vector<const Tensor<T>*>(inputs), std::move(fn));
  }

  Tensor<T> record(Tensor<T> out, const std::vector<const Tensor<T>*>& inputs, BackwardFn fn) {
    Node node{{}, out.size(), std::move(fn)};
    node.inputs.reserve(inputs.size());
    for (const Tensor<T>* in : inputs) {
      if (in->tape_ != nullptr && in->tape_ != this) {
        throw std::invalid_argument("operation mixes tensors from different tapes");
      }
      node.inputs.push_back(in->tape_ ? static_cast<long>(in->node_) : -1L);
    }
    out.tape_ = this;
    out.node_ = nodes_.size();
    nodes_.push_back(std::move(node));
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

  Gradients<T> backward(const Tensor<T>& loss) const {
    if (loss.tape_ != this) throw std::invalid_argument("backward: loss was not recorded on this tape");
    if (loss.size() != 1) {
      throw std::invalid_argument("backward: loss must be a scalar, got shape " + loss.shape().str());
    }
    std::vector<std::vector<T>> grads(nodes_.size());
    grads[loss.node_].assign(1, T(1));
    std::vector<std::vector<T>*> slots;
    for (std::size_t n = loss.node_ + 1; n-- > 0;) {
      const Node& node = nodes_[n];
      if (grads[n].empty() || !node.backward) continue;
      slots.assign(node.inputs.size(), nullptr);
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const long src = node.inputs[i];
        if (src < 0) continue;
        auto& g = grads[static_cast<std::size_t>(src)];
        if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(src)].numel, T(0));
        slots[i] = &g;
      }
      node.backward(std::span<const T>(grads[n]), std::span<std::vector<T>* const>(slots));
      // Intermediate gradients are no longer needed once propagated.
      if (node.backward && !node.inputs.empty()) std::vector<T>().swap(grads[n]);
    }
    return Gradients<T>(std::move(grads));
  }

 private:
  struct Node {
    std::vector<long> inputs;
    std::size_t numel = 0;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* t : inputs) {
    if (!t->tape()) continue;
    if (tape && tape != t->tape()) throw std::invalid_argument("operation mixes tensors from different tapes");
    tape = t->tape();
  }
  return tape;
}

inline void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

inline std::string shape_pair(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str();
}

// Geometry shared by the three convolution kernels below. "in" is the
// correlation input and "out" its output; pad is zero padding on all sides.
struct ConvGeometry {
  std::size_t in_c, in_h, in_w;
  std::size_t out_c, out_h, out_w;
  std::size_t kh, kw, stride, pad;

  std::size_t padded_h() const { return in_h + 2 * pad; }
  std::size_t padded_w() const { return in_w + 2 * pad; }
};

template <typename T>
std::vector<T> pad_planes(std::span<const T> in, const ConvGeometry& g) {
  const std::size_t ph = g.padded_h(), pw = g.padded_w();
  std::vector<T> out(g.in_c * ph * pw, T(0));
  for (std::size_t c = 0; c < g.in_c; ++c) {
    for (std::size_t y = 0; y < g.in_h; ++y) {
      const T* src = in.data() + (c * g.in_h + y) * g.in_w;
      std::copy(src, src + g.in_w, out.data() + (c * ph + y + g.pad) * pw + g.pad);
    }
  }
  return out;
}

// Deterministic dot product with a fixed lane split so it vectorizes
// without reassociation flags.
template <typename T>
T lane_dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  }
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  T sum = T(0);
  for (std::size_t l = 0; l < kLanes; ++l) sum += acc[l];
  return sum + tail;
}

// out[co] = bias[co] + sum over (ci, ky, kx) in that order of
// K[co][ci][ky][kx] * in_padded[ci][oy*s+ky][ox*s+kx].
template <typename T>
void correlate(std::span<const T> in, std::span<const T> kernel, std::span<const T> bias, std::span<T> out,
               const ConvGeometry& g);

// grad_in += adjoint of correlate applied to gout (bias excluded).
template <typename T>
void correlate_adjoint(std::span<const T> gout, std::span<const T> kernel, std::span<T> grad_in,
                       const ConvGeometry& g);

// grad_kernel += d(correlate)/dK contracted with gout.
template <typename T>
void correlate_kernel_grad(std::span<const T> in, std::span<const T> gout, std::span<T> grad_kernel,
                           const ConvGeometry& g);

}  // namespace detail

namespace detail {

template <typename T>
void correlate(std::span<const T> in, std::span<const T> kernel, std::span<const T> bias, std::span<T> out,
               const ConvGeometry& g) {
  const std::vector<T> padded = pad_planes(in, g);
  const std::size_t ph = g.padded_h(), pw = g.padded_w();
  const std::size_t oh = g.out_h, ow = g.out_w, s = g.stride;
  const std::size_t ksz = g.kh * g.kw;

  auto one_channel = [&](std::size_t co) {
    T* dst = out.data() + co * oh * ow;
    const T b = bias.empty() ? T(0) : bias[co];
    if (s == 1) {
      // Accumulate into a row-pitch-pw buffer so each tap is a single
      // contiguous sweep; columns >= ow are scratch.
      const std::size_t span_len = (oh - 1) * pw + ow;
      std::vector<T> wide(oh * pw, b);
      for (std::size_t ci = 0; ci < g.in_c; ++ci) {
        const T* plane = padded.data() + ci * ph * pw;
        const T* krow = kernel.data() + (co * g.in_c + ci) * ksz;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const T* src = plane + ky * pw;
          T* acc = wide.data();
          std::size_t kx = 0;
          // Three taps per sweep; each output still adds them in kx order.
          for (; kx + 3 <= g.kw; kx += 3) {
            const T w0 = krow[ky * g.kw + kx], w1 = krow[ky * g.kw + kx + 1], w2 = krow[ky * g.kw + kx + 2];
            const T* s0 = src + kx;
            for (std::size_t j = 0; j < span_len; ++j) {
              T a = acc[j];
              a += w0 * s0[j];
              a += w1 * s0[j + 1];
              a += w2 * s0[j + 2];
              acc[j] = a;
            }
          }
          for (; kx < g.kw; ++kx) {
            const T w = krow[ky * g.kw + kx];
            const T* s0 = src + kx;
            for (std::size_t j = 0; j < span_len; ++j) acc[j] += w * s0[j];
          }
        }
      }
      for (std::size_t oy = 0; oy < oh; ++oy) {
        std::copy(wide.data() + oy * pw, wide.data() + oy * pw + ow, dst + oy * ow);
      }
      return;
    }
    std::fill(dst, dst + oh * ow, b);
    for (std::size_t ci = 0; ci < g.in_c; ++ci) {
      const T* plane = padded.data() + ci * ph * pw;
      const T* krow = kernel.data() + (co * g.in_c + ci) * ksz;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const T w = krow[ky * g.kw + kx];
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const T* src = plane + (oy * s + ky) * pw + kx;
            T* row = dst + oy * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) row[ox] += w * src[ox * s];
          }
        }
      }
    }
  };
  parallel_for(g.out_c, one_channel);
}

template <typename T>
void correlate_adjoint(std::span<const T> gout, std::span<const T> kernel, std::span<T> grad_in,
                       const ConvGeometry& g) {
  const std::size_t ph = g.padded_h(), pw = g.padded_w();
  const std::size_t oh = g.out_h, ow = g.out_w, s = g.stride;
  const std::size_t ksz = g.kh * g.kw;

  // For stride 1, lay gout out with row pitch pw (zero scratch columns).
  std::vector<T> wide;
  if (s == 1) {
    wide.assign(g.out_c * oh * pw, T(0));
    for (std::size_t co = 0; co < g.out_c; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const T* src = gout.data() + (co * oh + oy) * ow;
        std::copy(src, src + ow, wide.data() + (co * oh + oy) * pw);
      }
    }
  }

  auto one_channel = [&](std::size_t ci) {
    std::vector<T> plane(ph * pw, T(0));
    for (std::size_t co = 0; co < g.out_c; ++co) {
      const T* krow = kernel.data() + (co * g.in_c + ci) * ksz;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const T w = krow[ky * g.kw + kx];
          if (s == 1) {
            const std::size_t span_len = (oh - 1) * pw + ow;
            const T* src = wide.data() + co * oh * pw;
            T* dst = plane.data() + ky * pw + kx;
            for (std::size_t j = 0; j < span_len; ++j) dst[j] += w * src[j];
          } else {
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const T* src = gout.data() + (co * oh + oy) * ow;
              T* dst = plane.data() + (oy * s + ky) * pw + kx;
              for (std::size_t ox = 0; ox < ow; ++ox) dst[ox * s] += w * src[ox];
            }
          }
        }
      }
    }
    T* target = grad_in.data() + ci * g.in_h * g.in_w;
    for (std::size_t y = 0; y < g.in_h; ++y) {
      const T* src = plane.data() + (y + g.pad) * pw + g.pad;
      T* row = target + y * g.in_w;
      for (std::size_t x = 0; x < g.in_w; ++x) row[x] += src[x];
    }
  };
  parallel_for(g.in_c, one_channel);
}

template <typename T>
void correlate_kernel_grad(std::span<const T> in, std::span<const T> gout, std::span<T> grad_kernel,
                           const ConvGeometry& g) {
  const std::vector<T> padded = pad_planes(in, g);
  const std::size_t ph = g.padded_h(), pw = g.padded_w();
  const std::size_t oh = g.out_h, ow = g.out_w, s = g.stride;
  const std::size_t ksz = g.kh * g.kw;

  std::vector<T> wide;
  if (s == 1) {
    wide.assign(g.out_c * oh * pw, T(0));
    for (std::size_t co = 0; co < g.out_c; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const T* src = gout.data() + (co * oh + oy) * ow;
        std::copy(src, src + ow, wide.data() + (co * oh + oy) * pw);
      }
    }
  }

  auto one_channel = [&](std::size_t co) {
    for (std::size_t ci = 0; ci < g.in_c; ++ci) {
      const T* plane = padded.data() + ci * ph * pw;
      T* krow = grad_kernel.data() + (co * g.in_c + ci) * ksz;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          T sum = T(0);
          if (s == 1) {
            const std::size_t span_len = (oh - 1) * pw + ow;
            sum = lane_dot(wide.data() + co * oh * pw, plane + ky * pw + kx, span_len);
          } else {
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const T* grow = gout.data() + (co * oh + oy) * ow;
              const T* src = plane + (oy * s + ky) * pw + kx;
              for (std::size_t ox = 0; ox < ow; ++ox) sum += grow[ox] * src[ox * s];
            }
          }
          krow[ky * g.kw + kx] += sum;
        }
      }
    }
  };
  parallel_for(g.out_c, one_channel);
}

template <typename T>
void accumulate_bias_grad(std::span<const T> gout, std::size_t channels, std::size_t plane, std::vector<T>& gb) {
  for (std::size_t c = 0; c < channels; ++c) {
    T sum = T(0);
    const T* p = gout.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    gb[c] += sum;
  }
}

inline void check_conv_operands(const char* op, const Shape& input, const Shape& kernel, const Shape* bias,
                                std::size_t kernel_in_axis, std::size_t bias_len) {
  require(input.rank() == 3, std::string(op) + ": input must be rank 3 (CxHxW), got " + input.str());
  require(kernel.rank() == 4, std::string(op) + ": kernel must be rank 4, got " + kernel.str());
  require(kernel[kernel_in_axis] == input[0],
          std::string(op) + ": kernel " + kernel.str() + " does not accept input " + input.str());
  if (bias && !(bias->rank() == 0)) {
    require(bias->rank() == 1 && (*bias)[0] == bias_len,
            std::string(op) + ": bias " + bias->str() + " does not match kernel " + kernel.str());
  }
}

}  // namespace detail

// Cross-correlation (no kernel flip) with zero padding. An empty bias
// tensor means no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  detail::require(stride >= 1, "conv2d: stride must be >= 1");
  detail::check_conv_operands("conv2d", is, ks, &bias.shape(), 1, ks[0]);
  const std::size_t ph = is[1] + 2 * padding, pw = is[2] + 2 * padding;
  detail::require(ks[2] <= ph && ks[3] <= pw,
                  "conv2d: kernel " + ks.str() + " exceeds padded input " + is.str());
  const detail::ConvGeometry g{is[0], is[1], is[2], ks[0], (ph - ks[2]) / stride + 1, (pw - ks[3]) / stride + 1,
                               ks[2], ks[3], stride, padding};

  Tensor<T> out(Shape::chw(g.out_c, g.out_h, g.out_w));
  detail::correlate<T>(input.data(), kernel.data(), bias.data(), out.mutable_data(), g);

  Tape<T>* tape = detail::common_tape<T>({&input, &kernel, &bias});
  if (!tape) return out;
  return tape->record(std::move(out), {&input, &kernel, &bias},
                      [input = input.detached(), kernel = kernel.detached(), g](std::span<const T> gout,
                                                                               std::span<std::vector<T>* const> gr) {
                        if (gr[0]) detail::correlate_adjoint<T>(gout, kernel.data(), *gr[0], g);
                        if (gr[1]) detail::correlate_kernel_grad<T>(input.data(), gout, *gr[1], g);
                        if (gr[2]) detail::accumulate_bias_grad<T>(gout, g.out_c, g.out_h * g.out_w, *gr[2]);
                      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t stride, std::size_t padding) {
  return conv2d(input, kernel, Tensor<T>(), stride, padding);
}

// Transposed convolution: the linear adjoint of conv2d with the same kernel,
// stride and padding. Kernel layout is [in_ch, out_ch, kh, kw] from the
// point of view of this op. Output size per axis is
// (n - 1) * stride + k - 2 * padding + output_padding.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                           std::size_t stride, std::size_t padding, std::size_t output_padding = 0) {
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  detail::require(stride >= 1, "conv_transpose2d: stride must be >= 1");
  detail::check_conv_operands("conv_transpose2d", is, ks, &bias.shape(), 0, ks[1]);
  detail::require(output_padding < stride, "conv_transpose2d: output_padding must be smaller than stride");
  const long oh = static_cast<long>((is[1] - 1) * stride + ks[2] + output_padding) - 2 * static_cast<long>(padding);
  const long ow = static_cast<long>((is[2] - 1) * stride + ks[3] + output_padding) - 2 * static_cast<long>(padding);
  detail::require(oh > 0 && ow > 0, "conv_transpose2d: padding too large for input " + is.str());

  // Seen from the matching conv2d, our output is its input and vice versa.
  const detail::ConvGeometry g{ks[1], static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), ks[0], is[1],
                               is[2], ks[2], ks[3], stride, padding};

  Tensor<T> out(Shape::chw(g.in_c, g.in_h, g.in_w));
  {
    std::span<T> o = out.mutable_data();
    if (!bias.empty()) {
      for (std::size_t c = 0; c < g.in_c; ++c) {
        std::fill(o.begin() + c * g.in_h * g.in_w, o.begin() + (c + 1) * g.in_h * g.in_w, bias[c]);
      }
    }
    detail::correlate_adjoint<T>(input.data(), kernel.data(), o, g);
  }

  Tape<T>* tape = detail::common_tape<T>({&input, &kernel, &bias});
  if (!tape) return out;
  return tape->record(std::move(out), {&input, &kernel, &bias},
                      [input = input.detached(), kernel = kernel.detached(), g](std::span<const T> gout,
                                                                               std::span<std::vector<T>* const> gr) {
                        if (gr[0]) {
                          std::vector<T> tmp(gr[0]->size());
                          detail::correlate<T>(gout, kernel.data(), {}, tmp, g);
                          for (std::size_t i = 0; i < tmp.size(); ++i) (*gr[0])[i] += tmp[i];
                        }
                        if (gr[1]) detail::correlate_kernel_grad<T>(gout, input.data(), *gr[1], g);
                        if (gr[2]) detail::accumulate_bias_grad<T>(gout, g.in_c, g.in_h * g.in_w, *gr[2]);
                      });
}

namespace detail {

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_map(const Tensor<T>& x, Fwd fwd, Deriv deriv_from_output) {
  Tensor<T> out(x.shape());
  {
    std::span<T> o = out.mutable_data();
    std::span<const T> in = x.data();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = fwd(in[i]);
  }
  if (!x.tape()) return out;
  Tensor<T> result = out;  // the backward rule reads the forward values
  return x.tape()->record(std::move(out), {&x},
                          [y = result.detached(), deriv_from_output, xin = x.detached()](
                              std::span<const T> gout, std::span<std::vector<T>* const> gr) {
                            std::vector<T>& g = *gr[0];
                            std::span<const T> yv = y.data();
                            std::span<const T> xv = xin.data();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * deriv_from_output(xv[i], yv[i]);
                          });
}

}  // namespace detail

template <typename T>
Tensor<T> sigmoid_map(const Tensor<T>& x) {
  return detail::unary_map(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh_map(const Tensor<T>& x) {
  return detail::unary_map(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu_map(const Tensor<T>& x) {
  return detail::unary_map(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), detail::shape_pair("add", a.shape(), b.shape()));
  Tensor<T> out(a.shape());
  {
    std::span<T> o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
  }
  Tape<T>* tape = detail::common_tape<T>({&a, &b});
  if (!tape) return out;
  return tape->record(std::move(out), {&a, &b}, [](std::span<const T> gout, std::span<std::vector<T>* const> gr) {
    for (std::vector<T>* g : gr) {
      if (!g) continue;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += gout[i];
    }
  });
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), detail::shape_pair("hadamard", a.shape(), b.shape()));
  Tensor<T> out(a.shape());
  {
    std::span<T> o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
  }
  Tape<T>* tape = detail::common_tape<T>({&a, &b});
  if (!tape) return out;
  return tape->record(std::move(out), {&a, &b},
                      [a = a.detached(), b = b.detached()](std::span<const T> gout,
                                                           std::span<std::vector<T>* const> gr) {
                        if (gr[0]) {
                          for (std::size_t i = 0; i < gout.size(); ++i) (*gr[0])[i] += gout[i] * b[i];
                        }
                        if (gr[1]) {
                          for (std::size_t i = 0; i < gout.size(); ++i) (*gr[1])[i] += gout[i] * a[i];
                        }
                      });
}

// Stacks b's channels after a's. A 0-channel operand is allowed.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape().rank() == 3 && b.shape().rank() == 3,
                  detail::shape_pair("concat_channels", a.shape(), b.shape()));
  detail::require(a.height() == b.height() && a.width() == b.width(),
                  "concat_channels: spatial mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(Shape::chw(a.channels() + b.channels(), a.height(), a.width()));
  {
    std::span<T> o = out.mutable_data();
    std::copy(a.data().begin(), a.data().end(), o.begin());
    std::copy(b.data().begin(), b.data().end(), o.begin() + a.size());
  }
  Tape<T>* tape = detail::common_tape<T>({&a, &b});
  if (!tape) return out;
  const std::size_t split = a.size();
  return tape->record(std::move(out), {&a, &b},
                      [split](std::span<const T> gout, std::span<std::vector<T>* const> gr) {
                        if (gr[0]) {
                          for (std::size_t i = 0; i < split; ++i) (*gr[0])[i] += gout[i];
                        }
                        if (gr[1]) {
                          for (std::size_t i = 0; i < gr[1]->size(); ++i) (*gr[1])[i] += gout[split + i];
                        }
                      });
}

// Channels [first, first + count) of a rank-3 tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t first, std::size_t count) {
  detail::require(x.shape().rank() == 3 && first + count <= x.channels(),
                  "slice_channels: range out of bounds for " + x.shape().str());
  const std::size_t plane = x.height() * x.width();
  std::vector<T> values(x.data().begin() + first * plane, x.data().begin() + (first + count) * plane);
  Tensor<T> out(Shape::chw(count, x.height(), x.width()), std::move(values));
  if (!x.tape()) return out;
  const std::size_t offset = first * plane;
  return x.tape()->record(std::move(out), {&x}, [offset](std::span<const T> gout, std::span<std::vector<T>* const> gr) {
    for (std::size_t i = 0; i < gout.size(); ++i) (*gr[0])[offset + i] += gout[i];
  });
}

// Sum of all elements as a 1x1x1 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  Tensor<T> out(Shape::scalar(), total);
  if (!x.tape()) return out;
  return x.tape()->record(std::move(out), {&x}, [](std::span<const T> gout, std::span<std::vector<T>* const> gr) {
    for (T& g : *gr[0]) g += gout[0];
  });
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace cinelstm
