#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

#include "cinelstm/pipeline.hpp"

namespace cinelstm {
namespace {

void check_spacing(std::pair<double, double> spacing) {
  if (!(spacing.first > 0.0) || !(spacing.second > 0.0)) {
    throw std::invalid_argument("resample: pixel spacing must be positive");
  }
}

std::size_t scaled_dim(std::size_t dim, double spacing) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(dim) * spacing));
}

// Source coordinate of output pixel centre i, clamped to the valid range.
double source_coord(std::size_t i, double spacing, std::size_t src_dim) {
  const double x = (static_cast<double>(i) + 0.5) / spacing - 0.5;
  return std::clamp(x, 0.0, static_cast<double>(src_dim - 1));
}

struct CropWindow {
  std::size_t src = 0, dst = 0, len = 0;
};

CropWindow crop_window(std::size_t dim, std::size_t size) {
  if (dim >= size) return {(dim - size) / 2, 0, size};
  return {0, (size - dim) / 2, dim};
}

}  // namespace

Image resample_to_unit_mm(const Image& image, std::pair<double, double> spacing_mm) {
  check_spacing(spacing_mm);
  const std::size_t oh = scaled_dim(image.height, spacing_mm.first);
  const std::size_t ow = scaled_dim(image.width, spacing_mm.second);
  Image out(oh, ow);
  if (image.size() == 0) return out;
  for (std::size_t i = 0; i < oh; ++i) {
    const double y = source_coord(i, spacing_mm.first, image.height);
    const std::size_t y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t j = 0; j < ow; ++j) {
      const double x = source_coord(j, spacing_mm.second, image.width);
      const std::size_t x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = (1.0 - fx) * image.at(y0, x0) + fx * image.at(y0, x1);
      const double bottom = (1.0 - fx) * image.at(y1, x0) + fx * image.at(y1, x1);
      out.at(i, j) = static_cast<float>((1.0 - fy) * top + fy * bottom);
    }
  }
  return out;
}

Mask resample_to_unit_mm(const Mask& mask, std::pair<double, double> spacing_mm) {
  check_spacing(spacing_mm);
  Mask out(scaled_dim(mask.height, spacing_mm.first), scaled_dim(mask.width, spacing_mm.second), 1.0);
  if (mask.size() == 0) return out;
  for (std::size_t i = 0; i < out.height; ++i) {
    const auto y = static_cast<std::size_t>(std::lround(source_coord(i, spacing_mm.first, mask.height)));
    for (std::size_t j = 0; j < out.width; ++j) {
      const auto x = static_cast<std::size_t>(std::lround(source_coord(j, spacing_mm.second, mask.width)));
      out.at(i, j) = mask.at(y, x);
    }
  }
  return out;
}

Image center_crop(const Image& image, std::size_t size) {
  Image out(size, size, 0.0f);
  const CropWindow rw = crop_window(image.height, size), cw = crop_window(image.width, size);
  for (std::size_t r = 0; r < rw.len; ++r) {
    for (std::size_t c = 0; c < cw.len; ++c) out.at(rw.dst + r, cw.dst + c) = image.at(rw.src + r, cw.src + c);
  }
  return out;
}

Mask center_crop(const Mask& mask, std::size_t size) {
  Mask out(size, size, mask.spacing_mm);
  const CropWindow rw = crop_window(mask.height, size), cw = crop_window(mask.width, size);
  for (std::size_t r = 0; r < rw.len; ++r) {
    for (std::size_t c = 0; c < cw.len; ++c) out.at(rw.dst + r, cw.dst + c) = mask.at(rw.src + r, cw.src + c);
  }
  return out;
}

Image motion_map(const CineSequence& cycle) {
  if (cycle.frames.size() < 2) throw std::invalid_argument("motion_map: need at least 2 frames");
  cycle.validate();
  const std::size_t n = cycle.frames.size();
  const Image& first = cycle.frames.front();
  Image out(first.height, first.width);
  for (std::size_t p = 0; p < first.size(); ++p) {
    double mean = 0.0;
    for (const Image& f : cycle.frames) mean += f.pixels[p];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const Image& f : cycle.frames) var += (f.pixels[p] - mean) * (f.pixels[p] - mean);
    out.pixels[p] = static_cast<float>(std::sqrt(var / static_cast<double>(n)));
  }
  return out;
}

std::vector<CineSequence> group_cycles(const std::vector<FrameRecord>& frames, std::size_t frames_per_cycle) {
  if (frames_per_cycle == 0) throw std::invalid_argument("group_cycles: frames_per_cycle must be >= 1");
  using Key = std::tuple<int, int, int>;
  std::vector<Key> order;
  std::map<Key, std::vector<const FrameRecord*>> groups;
  for (const FrameRecord& f : frames) {
    const Key key{f.subject, f.scan, f.location};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&f);
  }
  std::vector<CineSequence> out;
  for (const Key& key : order) {
    const auto& group = groups.at(key);
    if (group.size() % frames_per_cycle != 0) {
      throw std::invalid_argument("group_cycles: subject " + std::to_string(std::get<0>(key)) + " scan " +
                                  std::to_string(std::get<1>(key)) + " location " + std::to_string(std::get<2>(key)) +
                                  " has " + std::to_string(group.size()) + " frames, not a multiple of " +
                                  std::to_string(frames_per_cycle));
    }
    for (std::size_t start = 0; start < group.size(); start += frames_per_cycle) {
      CineSequence seq;
      seq.id = {std::get<0>(key), std::get<1>(key), std::get<2>(key), static_cast<int>(start / frames_per_cycle)};
      seq.spacing_mm = group[start]->spacing_mm;
      const bool with_masks = std::all_of(group.begin() + static_cast<long>(start),
                                          group.begin() + static_cast<long>(start + frames_per_cycle),
                                          [](const FrameRecord* f) { return f->mask.has_value(); });
      if (with_masks) seq.masks.emplace();
      for (std::size_t t = start; t < start + frames_per_cycle; ++t) {
        seq.frames.push_back(group[t]->image);
        if (with_masks) seq.masks->push_back(*group[t]->mask);
      }
      seq.validate();
      out.push_back(std::move(seq));
    }
  }
  return out;
}

CineSequence preprocess_sequence(const CineSequence& seq, std::size_t crop_size) {
  seq.validate();
  CineSequence out;
  out.id = seq.id;
  out.spacing_mm = {1.0, 1.0};
  for (const Image& f : seq.frames) out.frames.push_back(center_crop(resample_to_unit_mm(f, seq.spacing_mm), crop_size));
  if (seq.masks) {
    out.masks.emplace();
    for (const Mask& m : *seq.masks) out.masks->push_back(center_crop(resample_to_unit_mm(m, seq.spacing_mm), crop_size));
  }
  return out;
}

namespace {

template <typename Raster>
Raster crop_around_impl(const Raster& in, Raster out, std::size_t row, std::size_t col, std::size_t size) {
  const long r0 = static_cast<long>(row) - static_cast<long>(size / 2);
  const long c0 = static_cast<long>(col) - static_cast<long>(size / 2);
  for (std::size_t r = 0; r < size; ++r) {
    const long sr = r0 + static_cast<long>(r);
    if (sr < 0 || sr >= static_cast<long>(in.height)) continue;
    for (std::size_t c = 0; c < size; ++c) {
      const long sc = c0 + static_cast<long>(c);
      if (sc < 0 || sc >= static_cast<long>(in.width)) continue;
      out.at(r, c) = in.at(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc));
    }
  }
  return out;
}

}  // namespace

Image crop_around(const Image& image, std::size_t row, std::size_t col, std::size_t size) {
  return crop_around_impl(image, Image(size, size, 0.0f), row, col, size);
}

Mask crop_around(const Mask& mask, std::size_t row, std::size_t col, std::size_t size) {
  return crop_around_impl(mask, Mask(size, size, mask.spacing_mm), row, col, size);
}

Localization localize_cycle(const CineSequence& cycle, const LocalizeOptions& opts) {
  return hough_localize(motion_map(cycle), opts.r_min, opts.r_max, opts.margin);
}

CineSequence localized_crop(const CineSequence& cycle, std::size_t window, const LocalizeOptions& opts) {
  const Localization loc = localize_cycle(cycle, opts);
  CineSequence out;
  out.id = cycle.id;
  out.spacing_mm = cycle.spacing_mm;
  for (const Image& f : cycle.frames) out.frames.push_back(crop_around(f, loc.center_row, loc.center_col, window));
  if (cycle.masks) {
    out.masks.emplace();
    for (const Mask& m : *cycle.masks) out.masks->push_back(crop_around(m, loc.center_row, loc.center_col, window));
  }
  return out;
}

}  // namespace cinelstm
