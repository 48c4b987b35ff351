#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cinelstm/binary_io.hpp"
#include "cinelstm/cine.hpp"
#include "cinelstm/errors.hpp"

namespace cinelstm {

using nlohmann::json;

namespace {
constexpr const char* kCineMagic = "CINE0001";
constexpr int kCineVersion = 1;
}  // namespace

void CineSequence::validate() const {
  for (const Image& f : frames) {
    if (f.height != height() || f.width != width() || f.size() != f.height * f.width) {
      throw std::invalid_argument("cine sequence " + id.str() + ": frames differ in shape");
    }
  }
  if (masks) {
    if (masks->size() != frames.size()) {
      throw std::invalid_argument("cine sequence " + id.str() + ": " + std::to_string(masks->size()) + " masks for " +
                                  std::to_string(frames.size()) + " frames");
    }
    for (const Mask& m : *masks) {
      if (m.height != height() || m.width != width()) {
        throw std::invalid_argument("cine sequence " + id.str() + ": mask shape " + m.dims() +
                                    " differs from frame shape");
      }
      m.validate();
    }
  }
}

void write_cine(const std::filesystem::path& path, const CineSequence& seq) {
  seq.validate();
  const json header = {
      {"version", kCineVersion},
      {"height", seq.height()},
      {"width", seq.width()},
      {"frames", seq.frames.size()},
      {"cycles", 1},
      {"spacing_mm", {seq.spacing_mm.first, seq.spacing_mm.second}},
      {"ids", {{"subject", seq.id.subject}, {"scan", seq.id.scan}, {"location", seq.id.location}, {"cycle", seq.id.cycle}}},
      {"has_masks", seq.masks.has_value()},
  };
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kCineMagic, 8);
  binio::put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Image& f : seq.frames) {
    for (float v : f.pixels) binio::put_f32(os, v);
  }
  if (seq.masks) {
    for (const Mask& m : *seq.masks) os.write(reinterpret_cast<const char*>(m.bits.data()), static_cast<long>(m.bits.size()));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

CineSequence read_cine(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  const std::string where = "cine file " + path.string();
  binio::expect_magic(is, kCineMagic, where.c_str());
  const std::uint32_t header_len = binio::get_u32(is, "cine header length");
  std::string text(header_len, '\0');
  binio::read_exact(is, text.data(), text.size(), "cine header");

  CineSequence seq;
  std::size_t h = 0, w = 0, n = 0;
  bool has_masks = false;
  try {
    const json header = json::parse(text);
    if (header.at("version").get<int>() != kCineVersion) {
      throw FormatError(where + ": unsupported version " + header.at("version").dump());
    }
    if (header.at("cycles").get<int>() != 1) throw FormatError(where + ": expected exactly one cycle per file");
    h = header.at("height").get<std::size_t>();
    w = header.at("width").get<std::size_t>();
    n = header.at("frames").get<std::size_t>();
    const auto spacing = header.at("spacing_mm").get<std::vector<double>>();
    if (spacing.size() != 2) throw FormatError(where + ": spacing_mm must have two entries");
    seq.spacing_mm = {spacing[0], spacing[1]};
    const json& ids = header.at("ids");
    seq.id = {ids.at("subject").get<int>(), ids.at("scan").get<int>(), ids.at("location").get<int>(),
              ids.at("cycle").get<int>()};
    has_masks = header.at("has_masks").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": malformed header: " + e.what());
  }

  const auto payload_start = is.tellg();
  is.seekg(0, std::ios::end);
  const auto available = static_cast<std::size_t>(is.tellg() - payload_start);
  is.seekg(payload_start);
  const std::size_t frame_bytes = h * w * 4, mask_bytes = has_masks ? h * w : 0;
  const std::size_t expected = n * (frame_bytes + mask_bytes);
  if (available != expected) {
    const std::size_t per_frame = frame_bytes + mask_bytes;
    throw FormatError(where + ": header claims " + std::to_string(n) + " frames of " + std::to_string(h) + "x" +
                      std::to_string(w) + " (" + std::to_string(expected) + " payload bytes) but payload holds " +
                      std::to_string(available) + " bytes" +
                      (per_frame ? " (" + std::to_string(available / per_frame) + " frames)" : std::string()));
  }

  for (std::size_t t = 0; t < n; ++t) {
    Image img(h, w);
    for (float& v : img.pixels) v = binio::get_f32(is, "cine frames");
    seq.frames.push_back(std::move(img));
  }
  if (has_masks) {
    seq.masks.emplace();
    for (std::size_t t = 0; t < n; ++t) {
      Mask m(h, w, seq.spacing_mm.first);
      binio::read_exact(is, m.bits.data(), m.bits.size(), "cine masks");
      for (auto b : m.bits) {
        if (b > 1) throw FormatError(where + ": mask values must be 0 or 1");
      }
      seq.masks->push_back(std::move(m));
    }
  }
  return seq;
}

std::vector<CineSequence> read_cine_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".cine") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<CineSequence> out;
  for (const auto& f : files) out.push_back(read_cine(f));
  std::stable_sort(out.begin(), out.end(), [](const CineSequence& a, const CineSequence& b) { return a.id < b.id; });
  return out;
}

}  // namespace cinelstm
