#include "cinelstm/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cinelstm/binary_io.hpp"
#include "cinelstm/errors.hpp"
#include "cinelstm/tensor_io.hpp"

namespace cinelstm {

using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::CnnOnly:
      return "cnn";
    case Variant::OneLevel:
      return "one-level";
    case Variant::MultiLevel:
      return "multi-level";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  if (name == "cnn" || name == "cnn-only") return Variant::CnnOnly;
  if (name == "one-level") return Variant::OneLevel;
  if (name == "multi-level") return Variant::MultiLevel;
  throw std::invalid_argument("unknown model variant \"" + name + "\" (expected cnn, one-level or multi-level)");
}

namespace {

json shape_json(const Shape& s) {
  json a = json::array();
  for (std::size_t i = 0; i < s.rank(); ++i) a.push_back(s[i]);
  return a;
}

Shape shape_from_json(const json& a) {
  const auto d = a.get<std::vector<std::size_t>>();
  switch (d.size()) {
    case 1:
      return Shape::vec(d[0]);
    case 3:
      return Shape::chw(d[0], d[1], d[2]);
    case 4:
      return Shape::kernel(d[0], d[1], d[2], d[3]);
    default:
      throw FormatError("checkpoint: unsupported parameter rank " + std::to_string(d.size()));
  }
}

}  // namespace

void save_checkpoint(const SegModel<float>& model, const std::filesystem::path& path) {
  model.validate();
  json params = json::array();
  std::size_t offset = 0;
  model.visit([&](const std::string& name, const Tensor<float>& t) {
    const std::size_t bytes = tensor_blob_bytes(t.shape());
    params.push_back({{"name", name}, {"shape", shape_json(t.shape())}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  });
  const EncoderConfig& ec = model.encoder.config;
  const json manifest = {
      {"variant", to_string(model.variant)},
      {"encoder", {{"base_width", ec.base_width}, {"units_per_stage", ec.units_per_stage}, {"in_channels", ec.in_channels}}},
      {"cycle", {{"frames", model.cycle.frames}, {"passes", model.cycle.passes}}},
      {"input", {{"height", model.height}, {"width", model.width}}},
      {"seed", model.seed},
      {"parameters", params},
  };
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write("SEGM", 4);
  binio::put_u32(os, kCheckpointVersion);
  binio::put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  model.visit([&](const std::string&, const Tensor<float>& t) { write_tensor(os, t); });
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

SegModel<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  binio::expect_magic(is, "SEGM", ("checkpoint " + path.string()).c_str());
  const std::uint32_t version = binio::get_u32(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path.string() + ": unsupported format version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t manifest_len = binio::get_u64(is, "checkpoint manifest length");
  if (manifest_len > (1u << 26)) throw FormatError("checkpoint: implausible manifest length");
  std::string text(manifest_len, '\0');
  binio::read_exact(is, text.data(), text.size(), "checkpoint manifest");

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }

  SegModel<float> model;
  std::map<std::string, std::pair<Shape, std::size_t>> table;
  std::vector<std::string> order;
  try {
    EncoderConfig ec;
    ec.base_width = manifest.at("encoder").at("base_width").get<std::size_t>();
    ec.units_per_stage = manifest.at("encoder").at("units_per_stage").get<std::size_t>();
    ec.in_channels = manifest.at("encoder").at("in_channels").get<std::size_t>();
    CycleConfig cycle;
    cycle.frames = manifest.at("cycle").at("frames").get<std::size_t>();
    cycle.passes = manifest.at("cycle").at("passes").get<std::size_t>();
    const auto h = manifest.at("input").at("height").get<std::size_t>();
    const auto w = manifest.at("input").at("width").get<std::size_t>();
    const auto seed = manifest.at("seed").get<std::uint64_t>();
    const Variant variant = parse_variant(manifest.at("variant").get<std::string>());
    model = init_model<float>(variant, ec, cycle, h, w, seed);
    for (const json& p : manifest.at("parameters")) {
      const auto name = p.at("name").get<std::string>();
      table[name] = {shape_from_json(p.at("shape")), p.at("offset").get<std::size_t>()};
      order.push_back(name);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is incomplete: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint manifest is inconsistent: ") + e.what());
  }

  std::vector<std::string> expected;
  model.visit([&](const std::string& name, const Tensor<float>&) { expected.push_back(name); });
  if (expected != order) {
    throw FormatError("checkpoint " + path.string() + ": parameter table does not match the " +
                      manifest.at("variant").get<std::string>() + " model layout");
  }

  std::size_t offset = 0;
  model.visit([&](const std::string& name, Tensor<float>& t) {
    const auto& [shape, at] = table.at(name);
    if (!(shape == t.shape())) {
      throw FormatError("checkpoint: parameter " + name + " has shape " + shape.str() + ", expected " + t.shape().str());
    }
    if (at != offset) throw FormatError("checkpoint: parameter " + name + " has unexpected offset");
    Tensor<float> blob = read_tensor(is);
    if (blob.size() != shape.numel()) throw FormatError("checkpoint: blob size mismatch for " + name);
    t = blob.reshaped(shape);
    offset += tensor_blob_bytes(shape);
  });
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("checkpoint " + path.string() + ": trailing bytes after last parameter");
  }
  return model;
}

}  // namespace cinelstm
