#pragma once

// Full segmentation model: encoder, optional ConvLSTM blocks at the 1/4 and
// 1/2 levels, and a two-step transposed-convolution decoder ending in a
// sigmoid probability map.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cinelstm/cine.hpp"
#include "cinelstm/convlstm.hpp"
#include "cinelstm/encoder.hpp"
#include "cinelstm/random.hpp"
#include "cinelstm/tensor.hpp"

namespace cinelstm {

enum class Variant { CnnOnly, OneLevel, MultiLevel };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

inline bool has_quarter_lstm(Variant v) { return v != Variant::CnnOnly; }
inline bool has_half_lstm(Variant v) { return v == Variant::MultiLevel; }

template <typename T>
struct DecoderParams {
  Tensor<T> deconv1_w, deconv1_b;  // [4W, 2W, 4, 4]: 1/4 -> 1/2
  Tensor<T> deconv2_w, deconv2_b;  // [4W, 1, 4, 4]: 1/2 -> full, one output channel

  template <typename F>
  void visit(F&& f) {
    f("deconv1.w", deconv1_w), f("deconv1.b", deconv1_b), f("deconv2.w", deconv2_w), f("deconv2.b", deconv2_b);
  }
};

// Every transposed convolution in the decoder is 4x4, stride 2, crop 1,
// which doubles each spatial axis exactly.
inline constexpr std::size_t kDeconvKernel = 4;
inline constexpr std::size_t kDeconvStride = 2;
inline constexpr std::size_t kDeconvCrop = 1;

template <typename T>
DecoderParams<T> init_decoder(const EncoderConfig& cfg, Rng& rng) {
  const std::size_t q = cfg.quarter_channels(), h = cfg.half_channels();
  DecoderParams<T> d;
  // Each output pixel of a stride-2 4x4 transposed conv sees 2x2 taps per input channel.
  d.deconv1_w = detail::uniform_tensor<T>(Shape::kernel(q, h, 4, 4), std::sqrt(3.0 / (q * 4)), rng);
  d.deconv1_b = Tensor<T>::zeros(Shape::vec(h));
  d.deconv2_w = detail::uniform_tensor<T>(Shape::kernel(2 * h, 1, 4, 4), std::sqrt(3.0 / (2 * h * 4)), rng);
  d.deconv2_b = Tensor<T>::zeros(Shape::vec(1));
  return d;
}

template <typename T>
Tensor<T> decode(const DecoderParams<T>& d, const Tensor<T>& low, const Tensor<T>& high) {
  if (low.shape().rank() != 3 || high.shape().rank() != 3 || 2 * low.height() != high.height() ||
      2 * low.width() != high.width()) {
    throw std::invalid_argument("decode: low-resolution input " + low.shape().str() +
                                " must be half the spatial size of " + high.shape().str());
  }
  const Tensor<T> up = conv_transpose2d(low, d.deconv1_w, d.deconv1_b, kDeconvStride, kDeconvCrop);
  if (up.height() != high.height() || up.width() != high.width()) {
    throw std::invalid_argument("decode: upsampled " + up.shape().str() + " does not match " + high.shape().str());
  }
  return sigmoid_map(conv_transpose2d(concat_channels(up, high), d.deconv2_w, d.deconv2_b, kDeconvStride, kDeconvCrop));
}

template <typename T>
struct SegModel {
  Variant variant = Variant::MultiLevel;
  EncoderParams<T> encoder;
  std::optional<ConvLstmParams<T>> lstm_quarter;
  std::optional<ConvLstmParams<T>> lstm_half;
  DecoderParams<T> decoder;
  CycleConfig cycle;
  std::size_t height = 0;  // input frame size
  std::size_t width = 0;
  std::uint64_t seed = 0;

  // Canonical parameter order: encoder, lstm_quarter, lstm_half, decoder.
  template <typename F>
  void visit(F&& f) {
    encoder.visit([&](const char* name, Tensor<T>& t) { f("encoder." + std::string(name), t); });
    if (lstm_quarter) lstm_quarter->visit([&](const char* name, Tensor<T>& t) { f("lstm_quarter." + std::string(name), t); });
    if (lstm_half) lstm_half->visit([&](const char* name, Tensor<T>& t) { f("lstm_half." + std::string(name), t); });
    decoder.visit([&](const char* name, Tensor<T>& t) { f("decoder." + std::string(name), t); });
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<SegModel*>(this)->visit([&](const std::string& name, Tensor<T>& t) { f(name, std::as_const(t)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  // Rejects a model whose parameter groups do not match its variant.
  void validate() const {
    if (has_quarter_lstm(variant) && !lstm_quarter) {
      throw std::invalid_argument("model variant " + to_string(variant) + " requires lstm_quarter, which is missing");
    }
    if (has_half_lstm(variant) && !lstm_half) {
      throw std::invalid_argument("model variant " + to_string(variant) + " requires lstm_half, which is missing");
    }
    if (height % 4 != 0 || width % 4 != 0 || height == 0 || width == 0) {
      throw std::invalid_argument("model input size must be positive and divisible by 4");
    }
    cycle.validate();
  }
};

// Adds freshly initialized ConvLSTM blocks for `variant` to a trained
// CNN-only model (encoder and decoder are kept).
template <typename T>
SegModel<T> with_temporal_blocks(const SegModel<T>& base, Variant variant, std::uint64_t seed) {
  SegModel<T> m = base;
  m.variant = variant;
  m.seed = seed;
  const EncoderConfig& cfg = m.encoder.config;
  m.lstm_quarter.reset();
  m.lstm_half.reset();
  if (has_quarter_lstm(variant)) {
    Rng rng = make_rng(seed, "init/lstm_quarter");
    m.lstm_quarter = init_convlstm<T>(cfg.quarter_channels(), cfg.quarter_channels(), m.height / 4, m.width / 4, rng);
  }
  if (has_half_lstm(variant)) {
    Rng rng = make_rng(seed, "init/lstm_half");
    m.lstm_half = init_convlstm<T>(cfg.half_channels(), cfg.half_channels(), m.height / 2, m.width / 2, rng);
  }
  return m;
}

template <typename T>
SegModel<T> init_model(Variant variant, const EncoderConfig& cfg, const CycleConfig& cycle, std::size_t height,
                       std::size_t width, std::uint64_t seed) {
  SegModel<T> m;
  m.variant = Variant::CnnOnly;
  m.cycle = cycle;
  m.height = height;
  m.width = width;
  m.seed = seed;
  Rng enc_rng = make_rng(seed, "init/encoder");
  m.encoder = init_encoder<T>(cfg, enc_rng);
  Rng dec_rng = make_rng(seed, "init/decoder");
  m.decoder = init_decoder<T>(cfg, dec_rng);
  m.validate();
  return variant == Variant::CnnOnly ? m : with_temporal_blocks(m, variant, seed);
}

// Per-frame probability maps (1 x H x W, values in (0,1)) for one cycle.
template <typename T>
std::vector<Tensor<T>> forward_sequence(const SegModel<T>& m, const std::vector<Tensor<T>>& frames) {
  m.validate();
  if (frames.size() != m.cycle.frames) {
    throw std::invalid_argument("forward_sequence: got " + std::to_string(frames.size()) +
                                " frames, model expects " + std::to_string(m.cycle.frames));
  }
  std::vector<Tensor<T>> half, quarter;
  half.reserve(frames.size());
  quarter.reserve(frames.size());
  for (const auto& f : frames) {
    if (f.shape().rank() != 3 || f.height() != m.height || f.width() != m.width) {
      throw std::invalid_argument("forward_sequence: frame " + f.shape().str() + " does not match model input " +
                                  std::to_string(m.height) + "x" + std::to_string(m.width));
    }
    EncoderFeatures<T> feats = encoder_forward(m.encoder, f);
    half.push_back(std::move(feats.half));
    quarter.push_back(std::move(feats.quarter));
  }
  if (has_quarter_lstm(m.variant)) quarter = run_cycle(*m.lstm_quarter, quarter, m.cycle);
  if (has_half_lstm(m.variant)) half = run_cycle(*m.lstm_half, half, m.cycle);

  std::vector<Tensor<T>> maps;
  maps.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) maps.push_back(decode(m.decoder, quarter[t], half[t]));
  return maps;
}

template <typename T>
std::vector<Tensor<T>> frames_as_tensors(const CineSequence& seq) {
  std::vector<Tensor<T>> out;
  out.reserve(seq.frames.size());
  for (const Image& img : seq.frames) {
    std::vector<T> values(img.pixels.begin(), img.pixels.end());
    out.emplace_back(Shape::chw(1, img.height, img.width), std::move(values));
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> forward_sequence(const SegModel<T>& m, const CineSequence& seq) {
  return forward_sequence(m, frames_as_tensors<T>(seq));
}

}  // namespace cinelstm
