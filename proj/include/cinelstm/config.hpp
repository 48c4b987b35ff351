#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "cinelstm/pipeline.hpp"
#include "cinelstm/segnet.hpp"
#include "cinelstm/training.hpp"

namespace cinelstm {

// Everything a train/loo run needs. Data comes either from a directory of
// .cine files or from a phantom spec generated in memory.
struct RunConfig {
  std::optional<std::filesystem::path> data_dir;
  std::optional<PhantomSpec> phantom;
  std::size_t subjects = 8;            // phantom only
  std::size_t cycles_per_subject = 18;  // phantom only
  std::size_t crop_size = 0;            // 0: use frames as stored; else resample + center crop
  std::size_t localize_window = 0;      // >0: tight crop around the Hough-localized centre
  LocalizeOptions localize;
  std::uint64_t seed = 1;
  std::vector<Variant> variants{Variant::CnnOnly, Variant::OneLevel, Variant::MultiLevel};
  std::size_t ensemble_size = 5;
  std::size_t jobs = 1;  // loo: concurrent fold processes
  TrainConfig train;

  void validate() const;
};

// Both parsers reject unknown keys and wrong types with std::invalid_argument.
RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

PhantomSpec parse_phantom_spec(const nlohmann::json& j);
nlohmann::json to_json(const PhantomSpec& spec);
PhantomSpec load_phantom_spec(const std::filesystem::path& path);

EncoderConfig parse_encoder(const nlohmann::json& j);
nlohmann::json to_json(const EncoderConfig& cfg);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

// Reads or generates the run's cycles; applies preprocessing when
// crop_size or localize_window is set. Every cycle must carry masks.
Dataset load_run_data(const RunConfig& cfg);

}  // namespace cinelstm
