#pragma once

#include <compare>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cinelstm/image.hpp"

namespace cinelstm {

struct SequenceId {
  int subject = 0;
  int scan = 0;
  int location = 0;
  int cycle = 0;

  std::string str() const;
  auto operator<=>(const SequenceId&) const = default;
};

// One cardiac cycle at one slice location: N frames in temporal order.
struct CineSequence {
  std::vector<Image> frames;
  std::optional<std::vector<Mask>> masks;
  std::pair<double, double> spacing_mm{1.0, 1.0};  // (row, col)
  SequenceId id;

  std::size_t height() const { return frames.empty() ? 0 : frames.front().height; }
  std::size_t width() const { return frames.empty() ? 0 : frames.front().width; }

  // Equal frame shapes, masks aligned 1:1 when present.
  void validate() const;
};

// .cine layout: 8-byte magic "CINE0001", u32 little-endian header length,
// JSON header, frames as little-endian f32, then (when present) masks as
// one byte per pixel.
void write_cine(const std::filesystem::path& path, const CineSequence& seq);
CineSequence read_cine(const std::filesystem::path& path);

// All .cine files in a directory, sorted by sequence id.
std::vector<CineSequence> read_cine_dir(const std::filesystem::path& dir);

}  // namespace cinelstm
