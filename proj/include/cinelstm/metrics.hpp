#pragma once

// Slice-wise accuracy measures: Dice similarity, symmetric Hausdorff
// distance, and average perpendicular distance (directed, automatic to
// manual). Distances are between pixel centers, scaled by pixel spacing.

#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "cinelstm/cine.hpp"
#include "cinelstm/image.hpp"

namespace cinelstm {

struct Pixel {
  int row = 0;
  int col = 0;
  auto operator<=>(const Pixel&) const = default;
};

// Boundary pixels in row-major order.
using Contour = std::vector<Pixel>;

double dice(const Mask& a, const Mask& b);

// Foreground pixels with a background 4-neighbour or on the image border.
Contour extract_contour(const Mask& m);

// Both throw std::invalid_argument on an empty contour.
double hausdorff(const Contour& a, const Contour& b, double spacing_mm);
double apd(const Contour& automatic, const Contour& manual, double spacing_mm);

struct SliceKey {
  SequenceId sequence;
  int frame = 0;
  std::string str() const;
  auto operator<=>(const SliceKey&) const = default;
};

struct SliceRecord {
  SliceKey key;
  double dsc = 0.0;
  double hd_mm = 0.0;
  double apd_mm = 0.0;
  // Set when either contour is empty; the slice is left out of the
  // aggregates (distances undefined).
  bool empty_prediction = false;
};

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  std::size_t count = 0;
};

struct MetricsReport {
  std::vector<SliceRecord> slices;  // ordered by key
  MetricSummary dsc, hd_mm, apd_mm;
  std::size_t excluded = 0;
};

MetricSummary summarize(const std::vector<double>& values);

// Pairs predictions with truths by key; any key present on one side only is
// rejected with the list of unmatched ids.
MetricsReport evaluate_dataset(const std::map<SliceKey, Mask>& predictions, const std::map<SliceKey, Mask>& truths);

// Table layout: one column per labelled report, rows DSC / HD / APD, cells
// "mean (std)".
std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& columns);

// One JSON object per line: a record per slice, then a summary record.
void write_report_records(std::ostream& os, const std::string& label, const MetricsReport& report);

}  // namespace cinelstm
