#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cinelstm {

// Single-channel real image, row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

  float& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  float at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  std::size_t size() const { return pixels.size(); }
  std::string dims() const { return std::to_string(height) + "x" + std::to_string(width); }

  friend bool operator==(const Image&, const Image&) = default;
};

// Binary segmentation, values strictly 0 or 1.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;
  double spacing_mm = 1.0;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, double spacing = 1.0) : height(h), width(w), bits(h * w, 0), spacing_mm(spacing) {}

  std::uint8_t& at(std::size_t r, std::size_t c) { return bits[r * width + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return bits[r * width + c]; }
  std::size_t size() const { return bits.size(); }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  bool empty() const { return count() == 0; }
  std::string dims() const { return std::to_string(height) + "x" + std::to_string(width); }

  void validate() const {
    if (bits.size() != height * width) throw std::invalid_argument("mask: data length does not match " + dims());
    for (auto b : bits) {
      if (b > 1) throw std::invalid_argument("mask: values must be 0 or 1");
    }
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace cinelstm
