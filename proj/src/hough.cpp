#include <algorithm>
#include <cstdint>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "cinelstm/pipeline.hpp"

namespace cinelstm {
namespace {

struct Offset {
  int dr = 0, dc = 0;
  auto operator<=>(const Offset&) const = default;
};

// Distinct integer offsets on a circle of radius r.
std::vector<Offset> circle_offsets(std::size_t r) {
  std::vector<Offset> out;
  const double radius = static_cast<double>(r);
  const std::size_t steps = std::max<std::size_t>(16, 8 * r);
  for (std::size_t k = 0; k < steps; ++k) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(steps);
    out.push_back({static_cast<int>(std::lround(radius * std::sin(theta))),
                   static_cast<int>(std::lround(radius * std::cos(theta)))});
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<float> sobel_magnitude(const Image& img) {
  std::vector<float> mag(img.size(), 0.0f);
  if (img.height < 3 || img.width < 3) return mag;
  for (std::size_t r = 1; r + 1 < img.height; ++r) {
    for (std::size_t c = 1; c + 1 < img.width; ++c) {
      const double gx = (img.at(r - 1, c + 1) + 2.0 * img.at(r, c + 1) + img.at(r + 1, c + 1)) -
                        (img.at(r - 1, c - 1) + 2.0 * img.at(r, c - 1) + img.at(r + 1, c - 1));
      const double gy = (img.at(r + 1, c - 1) + 2.0 * img.at(r + 1, c) + img.at(r + 1, c + 1)) -
                        (img.at(r - 1, c - 1) + 2.0 * img.at(r - 1, c) + img.at(r - 1, c + 1));
      mag[r * img.width + c] = static_cast<float>(std::sqrt(gx * gx + gy * gy));
    }
  }
  return mag;
}

}  // namespace

Localization hough_localize(const Image& map, std::size_t r_min, std::size_t r_max, std::size_t margin) {
  if (!(r_min < r_max) || 2 * r_max >= std::min(map.height, map.width)) {
    throw std::invalid_argument("hough_localize: need r_min < r_max < min(height, width) / 2, got [" +
                                std::to_string(r_min) + ", " + std::to_string(r_max) + "] for " + map.dims());
  }
  const std::vector<float> mag = sobel_magnitude(map);
  std::vector<float> sorted = mag;
  const std::size_t rank = static_cast<std::size_t>(0.9 * static_cast<double>(sorted.size() - 1));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(rank), sorted.end());
  const float threshold = sorted[rank];

  std::vector<std::size_t> edges;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    if (mag[i] > 0.0f && mag[i] >= threshold) edges.push_back(i);
  }
  if (edges.empty()) throw std::invalid_argument("hough_localize: no edge pixels in map");

  const std::size_t h = map.height, w = map.width, nr = r_max - r_min + 1;
  std::vector<std::uint32_t> acc(h * w * nr, 0);
  std::vector<std::uint64_t> ring_size(nr);
  for (std::size_t ri = 0; ri < nr; ++ri) {
    const std::vector<Offset> offsets = circle_offsets(r_min + ri);
    ring_size[ri] = offsets.size();
    for (std::size_t e : edges) {
      const int er = static_cast<int>(e / w), ec = static_cast<int>(e % w);
      for (const Offset& o : offsets) {
        const int cr = er - o.dr, cc = ec - o.dc;
        if (cr < 0 || cc < 0 || cr >= static_cast<int>(h) || cc >= static_cast<int>(w)) continue;
        ++acc[(static_cast<std::size_t>(cr) * w + static_cast<std::size_t>(cc)) * nr + ri];
      }
    }
  }

  // Score is the fraction of the ring that voted, so large radii do not win
  // on scattered edges alone. Cross-multiplied to keep comparisons exact.
  std::size_t best = 0;
  for (std::size_t i = 1; i < acc.size(); ++i) {
    if (std::uint64_t{acc[i]} * ring_size[best % nr] > std::uint64_t{acc[best]} * ring_size[i % nr]) best = i;
  }
  Localization loc;
  loc.radius = r_min + best % nr;
  loc.center_col = (best / nr) % w;
  loc.center_row = best / nr / w;
  loc.votes = acc[best];

  const long half = static_cast<long>(loc.radius + margin);
  const long r0 = std::max(0L, static_cast<long>(loc.center_row) - half);
  const long c0 = std::max(0L, static_cast<long>(loc.center_col) - half);
  const long r1 = std::min(static_cast<long>(h), static_cast<long>(loc.center_row) + half);
  const long c1 = std::min(static_cast<long>(w), static_cast<long>(loc.center_col) + half);
  loc.box = {static_cast<std::size_t>(r0), static_cast<std::size_t>(c0), static_cast<std::size_t>(r1 - r0),
             static_cast<std::size_t>(c1 - c0)};
  return loc;
}

}  // namespace cinelstm
