#pragma once

#include <filesystem>

#include "cinelstm/segnet.hpp"

namespace cinelstm {

// Checkpoint layout: magic "SEGM", u32 format version (1), u64 manifest
// length, JSON manifest (variant, encoder config, cycle config, input size,
// seed, and a table of {name, shape, offset, bytes} per parameter in
// canonical order), then one tensor blob per parameter. Offsets count from
// the first byte after the manifest.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const SegModel<float>& model, const std::filesystem::path& path);
SegModel<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace cinelstm
