#pragma once

// Fully convolutional residual feature extractor. A 3x3 stem feeds three
// stages of residual units; stages 2 and 3 open with a stride-2 unit. The
// outputs of stages 2 (1/2 resolution) and 3 (1/4 resolution, through a
// 1x1 head) are the feature maps handed to the recurrent block.

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cinelstm/random.hpp"
#include "cinelstm/tensor.hpp"

namespace cinelstm {

struct EncoderConfig {
  std::size_t base_width = 8;       // W; stage widths are W, 2W, 4W
  std::size_t units_per_stage = 3;
  std::size_t in_channels = 1;

  static EncoderConfig desk() { return {8, 3, 1}; }
  static EncoderConfig full() { return {16, 9, 1}; }

  std::size_t stage_width(std::size_t stage) const { return base_width << stage; }
  std::size_t half_channels() const { return stage_width(1); }
  std::size_t quarter_channels() const { return stage_width(2); }

  // Stem + two convolutions per unit + head. Shortcut projections are not
  // counted, as is customary for residual networks.
  std::size_t weighted_layers() const { return 1 + 3 * units_per_stage * 2 + 1; }

  void validate() const {
    if (base_width < 1) throw std::invalid_argument("encoder: base_width must be >= 1");
    if (units_per_stage < 1) throw std::invalid_argument("encoder: units_per_stage must be >= 1");
    if (in_channels < 1) throw std::invalid_argument("encoder: in_channels must be >= 1");
  }
};

template <typename T>
struct ResUnitParams {
  Tensor<T> conv1_w, conv1_b;
  Tensor<T> conv2_w, conv2_b;
  // Empty unless the unit changes shape.
  Tensor<T> proj_w, proj_b;

  bool has_projection() const { return !proj_w.empty(); }

  template <typename F>
  void visit(F&& f) {
    f("conv1.w", conv1_w), f("conv1.b", conv1_b), f("conv2.w", conv2_w), f("conv2.b", conv2_b);
    if (has_projection()) f("proj.w", proj_w), f("proj.b", proj_b);
  }
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  Tensor<T> stem_w, stem_b;
  std::array<std::vector<ResUnitParams<T>>, 3> stages;
  Tensor<T> head_w, head_b;

  static std::size_t unit_stride(std::size_t stage, std::size_t unit) { return (stage > 0 && unit == 0) ? 2 : 1; }

  template <typename F>
  void visit(F&& f) {
    f("stem.w", stem_w), f("stem.b", stem_b);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      for (std::size_t u = 0; u < stages[s].size(); ++u) {
        const std::string prefix = "stage" + std::to_string(s + 1) + ".unit" + std::to_string(u) + ".";
        stages[s][u].visit([&](const char* name, Tensor<T>& t) { f((prefix + name).c_str(), t); });
      }
    }
    f("head.w", head_w), f("head.b", head_b);
  }
};

namespace detail {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor<T> t(shape);
  for (T& v : t.mutable_data()) v = static_cast<T>(bound * dist(rng));
  return t;
}

// He-uniform bound for relu layers.
inline double he_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

}  // namespace detail

// Builds an encoder with He-uniform kernels and zero biases. The second
// convolution of each unit starts scaled down so the residual cascade stays
// near identity at initialization (there is no normalization layer).
template <typename T>
EncoderParams<T> init_encoder(const EncoderConfig& cfg, Rng& rng, double residual_scale = 0.1) {
  cfg.validate();
  EncoderParams<T> p;
  p.config = cfg;
  const std::size_t w0 = cfg.stage_width(0);
  p.stem_w = detail::uniform_tensor<T>(Shape::kernel(w0, cfg.in_channels, 3, 3), detail::he_bound(cfg.in_channels * 9), rng);
  p.stem_b = Tensor<T>::zeros(Shape::vec(w0));
  std::size_t in = w0;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t out = cfg.stage_width(s);
    for (std::size_t u = 0; u < cfg.units_per_stage; ++u) {
      ResUnitParams<T> unit;
      unit.conv1_w = detail::uniform_tensor<T>(Shape::kernel(out, in, 3, 3), detail::he_bound(in * 9), rng);
      unit.conv1_b = Tensor<T>::zeros(Shape::vec(out));
      unit.conv2_w =
          detail::uniform_tensor<T>(Shape::kernel(out, out, 3, 3), residual_scale * detail::he_bound(out * 9), rng);
      unit.conv2_b = Tensor<T>::zeros(Shape::vec(out));
      if (in != out || EncoderParams<T>::unit_stride(s, u) != 1) {
        unit.proj_w = detail::uniform_tensor<T>(Shape::kernel(out, in, 1, 1), std::sqrt(3.0 / in), rng);
        unit.proj_b = Tensor<T>::zeros(Shape::vec(out));
      }
      p.stages[s].push_back(std::move(unit));
      in = out;
    }
  }
  const std::size_t wq = cfg.quarter_channels();
  p.head_w = detail::uniform_tensor<T>(Shape::kernel(wq, wq, 1, 1), std::sqrt(3.0 / wq), rng);
  p.head_b = Tensor<T>::zeros(Shape::vec(wq));
  return p;
}

// relu(shortcut(x) + conv2(relu(conv1(x, stride)))). The shortcut is the
// identity when shapes match and the 1x1 projection otherwise.
template <typename T>
Tensor<T> res_unit_forward(const ResUnitParams<T>& p, const Tensor<T>& x, std::size_t stride) {
  if (stride != 1 && stride != 2) throw std::invalid_argument("res_unit_forward: stride must be 1 or 2");
  const Tensor<T> branch = conv2d(relu_map(conv2d(x, p.conv1_w, p.conv1_b, stride, 1)), p.conv2_w, p.conv2_b, 1, 1);
  const Tensor<T> shortcut = p.has_projection() ? conv2d(x, p.proj_w, p.proj_b, stride, 0) : x;
  if (!(shortcut.shape() == branch.shape())) {
    throw std::invalid_argument("res_unit_forward: residual branch " + branch.shape().str() +
                                " does not match shortcut " + shortcut.shape().str());
  }
  return relu_map(add(shortcut, branch));
}

template <typename T>
struct EncoderFeatures {
  Tensor<T> half;     // 2W x H/2 x W/2
  Tensor<T> quarter;  // 4W x H/4 x W/4
};

template <typename T>
EncoderFeatures<T> encoder_forward(const EncoderParams<T>& p, const Tensor<T>& frame) {
  const Shape& s = frame.shape();
  if (s.rank() != 3 || s[0] != p.config.in_channels) {
    throw std::invalid_argument("encoder_forward: expected a " + std::to_string(p.config.in_channels) +
                                "-channel frame, got " + s.str());
  }
  if (s[1] % 4 != 0 || s[2] % 4 != 0) {
    throw std::invalid_argument("encoder_forward: frame " + s.str() + " must have height and width divisible by 4");
  }
  Tensor<T> x = relu_map(conv2d(frame, p.stem_w, p.stem_b, 1, 1));
  EncoderFeatures<T> out;
  for (std::size_t st = 0; st < p.stages.size(); ++st) {
    for (std::size_t u = 0; u < p.stages[st].size(); ++u) {
      x = res_unit_forward(p.stages[st][u], x, EncoderParams<T>::unit_stride(st, u));
    }
    if (st == 1) out.half = x;
  }
  out.quarter = conv2d(x, p.head_w, p.head_b, 1, 0);
  return out;
}

}  // namespace cinelstm
