#pragma once

// Preprocessing (resample, crop, localization, cycle grouping), the
// synthetic cine phantom, and image export.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "cinelstm/cine.hpp"
#include "cinelstm/image.hpp"

namespace cinelstm {

inline constexpr std::size_t kCropSize = 184;
inline constexpr std::size_t kFramesPerCycle = 25;

// Bilinear resampling to 1 mm isotropic pixels; output dims are
// round(dim * spacing). Sample positions map pixel centres to pixel centres.
Image resample_to_unit_mm(const Image& image, std::pair<double, double> spacing_mm);
// Nearest-neighbour counterpart for masks.
Mask resample_to_unit_mm(const Mask& mask, std::pair<double, double> spacing_mm);

// Central size x size window; smaller inputs are zero-padded symmetrically.
Image center_crop(const Image& image, std::size_t size = kCropSize);
Mask center_crop(const Mask& mask, std::size_t size = kCropSize);

// Per-pixel temporal (population) standard deviation across the frames.
Image motion_map(const CineSequence& cycle);

struct BoundingBox {
  std::size_t row = 0, col = 0, rows = 0, cols = 0;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Localization {
  std::size_t center_row = 0;
  std::size_t center_col = 0;
  std::size_t radius = 0;
  std::uint32_t votes = 0;
  BoundingBox box;
};

// Circle Hough transform on the Sobel edge map (pixels at or above the
// 90th percentile of gradient magnitude, and nonzero). Accumulator cells
// are (row, col, radius) at 1-pixel resolution; ties go to the smallest
// (row, col, radius). The box is a square of side 2 * (radius + margin)
// around the centre, clamped to the image.
Localization hough_localize(const Image& map, std::size_t r_min, std::size_t r_max, std::size_t margin = 16);

// A frame as it comes off the scanner, before grouping.
struct FrameRecord {
  int subject = 0;
  int scan = 0;
  int location = 0;
  Image image;
  std::optional<Mask> mask;
  std::pair<double, double> spacing_mm{1.0, 1.0};
};

// Splits each (subject, scan, location) stream, in first-appearance order,
// into consecutive cycles of `frames_per_cycle` frames.
std::vector<CineSequence> group_cycles(const std::vector<FrameRecord>& frames,
                                       std::size_t frames_per_cycle = kFramesPerCycle);

// Resample + crop applied to frames and masks of one sequence.
CineSequence preprocess_sequence(const CineSequence& seq, std::size_t crop_size = kCropSize);

// size x size window centred on (row, col); outside the image is zero.
Image crop_around(const Image& image, std::size_t row, std::size_t col, std::size_t size);
Mask crop_around(const Mask& mask, std::size_t row, std::size_t col, std::size_t size);

struct LocalizeOptions {
  std::size_t r_min = 8;
  std::size_t r_max = 40;
  std::size_t margin = 16;
};

// Hough localization on the cycle's motion map.
Localization localize_cycle(const CineSequence& cycle, const LocalizeOptions& opts = {});

// Tight-crop mode: every frame and mask cropped to a window x window square
// around the localized centre.
CineSequence localized_crop(const CineSequence& cycle, std::size_t window, const LocalizeOptions& opts = {});

struct SectorSpec {
  bool enabled = false;
  double start_deg = 0.0;
  double width_deg = 60.0;
};

struct PhantomSpec {
  std::size_t size = 48;
  std::size_t frames = kFramesPerCycle;
  double center_drift = 1.0;    // per-frame sinusoidal centre motion, px
  double center_jitter = 2.0;   // per-cycle random centre offset, px
  double inner_radius = 9.0;    // blood pool radius at end-diastole, px
  double outer_radius = 15.0;   // epicardial radius at end-diastole, px
  double beat_amplitude = 2.5;  // endocardial contraction at systole, px
  double radius_jitter = 1.0;   // per-cycle radius offset, px
  SectorSpec thinning;
  double thinning_factor = 0.0;  // fraction of wall thickness removed
  SectorSpec lesion;
  double lesion_attenuation = 0.0;  // fraction of myocardial intensity removed
  std::size_t lesion_first_frame = 0;
  std::size_t lesion_frame_count = 5;
  bool randomize_sectors = false;  // draw sector start angles per cycle
  double background = 0.05;
  double myocardium = 0.60;
  double blood = 0.95;
  double noise_sigma = 0.03;
  std::uint64_t seed = 1;

  void validate() const;
};

// Cycles with ids (subject 0, scan 0, location 0, cycle k) and exact masks.
std::vector<CineSequence> phantom_generate(const PhantomSpec& spec, std::size_t cycles);

// Subjects 0..S-1 with per-subject seeds drawn from spec.seed.
std::vector<CineSequence> phantom_dataset(const PhantomSpec& spec, std::size_t subjects, std::size_t cycles_per_subject);

// 8-bit grayscale PGM: image rescaled to [0, 200], manual contour drawn at
// 255 and automatic contour at 128 (automatic wins where they overlap).
void write_overlay_pgm(const std::filesystem::path& path, const Image& image, const Mask* manual,
                       const Mask* automatic);

}  // namespace cinelstm
