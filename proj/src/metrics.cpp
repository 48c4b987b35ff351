#include "cinelstm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cinelstm {
namespace {

void require_same_shape(const Mask& a, const Mask& b, const char* op) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument(std::string(op) + ": mask shapes differ (" + a.dims() + " vs " + b.dims() + ")");
  }
}

// Row-bucketed point set for nearest-neighbour queries.
class RowIndex {
 public:
  explicit RowIndex(const Contour& pts) {
    for (const Pixel& p : pts) {
      min_row_ = std::min(min_row_, p.row);
      max_row_ = std::max(max_row_, p.row);
    }
    if (pts.empty()) return;
    rows_.resize(static_cast<std::size_t>(max_row_ - min_row_ + 1));
    for (const Pixel& p : pts) rows_[static_cast<std::size_t>(p.row - min_row_)].push_back(p.col);
    for (auto& r : rows_) std::sort(r.begin(), r.end());
  }

  // Squared distance to the closest indexed point.
  long nearest_sq(const Pixel& q) const {
    long best = std::numeric_limits<long>::max();
    for (long dr = 0;; ++dr) {
      if (dr * dr >= best) break;
      const long lo = q.row - dr, hi = q.row + dr;
      if (lo < min_row_ && hi > max_row_) break;
      scan_row(lo, q.col, dr, best);
      if (dr != 0) scan_row(hi, q.col, dr, best);
    }
    return best;
  }

 private:
  void scan_row(long row, int col, long dr, long& best) const {
    if (row < min_row_ || row > max_row_) return;
    const auto& cols = rows_[static_cast<std::size_t>(row - min_row_)];
    if (cols.empty()) return;
    auto it = std::lower_bound(cols.begin(), cols.end(), col);
    auto consider = [&](int c) {
      const long dc = c - col;
      best = std::min(best, dr * dr + dc * dc);
    };
    if (it != cols.end()) consider(*it);
    if (it != cols.begin()) consider(*std::prev(it));
  }

  int min_row_ = std::numeric_limits<int>::max();
  int max_row_ = std::numeric_limits<int>::min();
  std::vector<std::vector<int>> rows_;
};

void require_nonempty(const Contour& a, const Contour& b, const char* op) {
  if (a.empty() || b.empty()) throw std::invalid_argument(std::string(op) + ": empty contour");
}

double directed_max(const Contour& from, const RowIndex& to) {
  long worst = 0;
  for (const Pixel& p : from) worst = std::max(worst, to.nearest_sq(p));
  return std::sqrt(static_cast<double>(worst));
}

}  // namespace

std::string SequenceId::str() const {
  std::ostringstream os;
  os << "s" << subject << "/scan" << scan << "/loc" << location << "/c" << cycle;
  return os.str();
}

std::string SliceKey::str() const { return sequence.str() + "/f" + std::to_string(frame); }

double dice(const Mask& a, const Mask& b) {
  require_same_shape(a, b, "dice");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    na += a.bits[i];
    nb += b.bits[i];
    both += a.bits[i] & b.bits[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

Contour extract_contour(const Mask& m) {
  Contour out;
  const int h = static_cast<int>(m.height), w = static_cast<int>(m.width);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!m.at(r, c)) continue;
      const bool border = r == 0 || c == 0 || r == h - 1 || c == w - 1;
      if (border || !m.at(r - 1, c) || !m.at(r + 1, c) || !m.at(r, c - 1) || !m.at(r, c + 1)) {
        out.push_back({r, c});
      }
    }
  }
  return out;
}

double hausdorff(const Contour& a, const Contour& b, double spacing_mm) {
  require_nonempty(a, b, "hausdorff");
  const double ab = directed_max(a, RowIndex(b));
  const double ba = directed_max(b, RowIndex(a));
  return std::max(ab, ba) * spacing_mm;
}

double apd(const Contour& automatic, const Contour& manual, double spacing_mm) {
  require_nonempty(automatic, manual, "apd");
  const RowIndex index(manual);
  double total = 0.0;
  for (const Pixel& p : automatic) total += std::sqrt(static_cast<double>(index.nearest_sq(p))) * spacing_mm;
  return total / static_cast<double>(automatic.size());
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  double total = 0.0;
  for (double v : values) total += v;
  s.mean = total / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

MetricsReport evaluate_dataset(const std::map<SliceKey, Mask>& predictions, const std::map<SliceKey, Mask>& truths) {
  std::vector<std::string> unmatched;
  for (const auto& [key, _] : predictions) {
    if (!truths.count(key)) unmatched.push_back("prediction without truth: " + key.str());
  }
  for (const auto& [key, _] : truths) {
    if (!predictions.count(key)) unmatched.push_back("truth without prediction: " + key.str());
  }
  if (!unmatched.empty()) {
    std::string msg = "evaluate_dataset: unpaired slices";
    for (const auto& u : unmatched) msg += "\n  " + u;
    throw std::invalid_argument(msg);
  }

  MetricsReport report;
  std::vector<double> dscs, hds, apds;
  for (const auto& [key, pred] : predictions) {
    const Mask& truth = truths.at(key);
    SliceRecord rec;
    rec.key = key;
    rec.dsc = dice(pred, truth);
    const Contour pc = extract_contour(pred);
    const Contour tc = extract_contour(truth);
    if (pc.empty() || tc.empty()) {
      rec.empty_prediction = true;
      rec.hd_mm = rec.apd_mm = std::numeric_limits<double>::quiet_NaN();
      ++report.excluded;
    } else {
      rec.hd_mm = hausdorff(pc, tc, truth.spacing_mm);
      rec.apd_mm = apd(pc, tc, truth.spacing_mm);
      dscs.push_back(rec.dsc);
      hds.push_back(rec.hd_mm);
      apds.push_back(rec.apd_mm);
    }
    report.slices.push_back(rec);
  }
  report.dsc = summarize(dscs);
  report.hd_mm = summarize(hds);
  report.apd_mm = summarize(apds);
  return report;
}

std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& columns) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  constexpr int kLabel = 10, kCell = 22;
  os << std::left << std::setw(kLabel) << "Model";
  for (const auto& [label, _] : columns) os << std::setw(kCell) << label;
  os << '\n';
  auto row = [&](const char* name, MetricSummary MetricsReport::*field) {
    os << std::setw(kLabel) << name;
    for (const auto& [_, r] : columns) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(3) << (r.*field).mean << " (" << (r.*field).stddev << ")";
      os << std::setw(kCell) << cell.str();
    }
    os << '\n';
  };
  row("DSC", &MetricsReport::dsc);
  row("HD (mm)", &MetricsReport::hd_mm);
  row("APD (mm)", &MetricsReport::apd_mm);
  os << std::setw(kLabel) << "slices";
  for (const auto& [_, r] : columns) {
    os << std::setw(kCell) << (std::to_string(r.dsc.count) + " (" + std::to_string(r.excluded) + " excluded)");
  }
  os << '\n';
  return os.str();
}

void write_report_records(std::ostream& os, const std::string& label, const MetricsReport& report) {
  using nlohmann::json;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  for (const SliceRecord& r : report.slices) {
    const SequenceId& id = r.key.sequence;
    os << json{{"type", "slice"},       {"model", label},        {"subject", id.subject},
               {"scan", id.scan},       {"location", id.location}, {"cycle", id.cycle},
               {"frame", r.key.frame},  {"dsc", r.dsc},          {"hd_mm", num(r.hd_mm)},
               {"apd_mm", num(r.apd_mm)}, {"empty_prediction", r.empty_prediction}}
              .dump()
       << '\n';
  }
  auto summary = [](const MetricSummary& s) { return json{{"mean", s.mean}, {"std", s.stddev}, {"count", s.count}}; };
  os << json{{"type", "summary"},           {"model", label},
             {"dsc", summary(report.dsc)},  {"hd_mm", summary(report.hd_mm)},
             {"apd_mm", summary(report.apd_mm)}, {"excluded", report.excluded}}
            .dump()
     << '\n';
}

}  // namespace cinelstm
