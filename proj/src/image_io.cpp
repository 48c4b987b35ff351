#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cinelstm/metrics.hpp"
#include "cinelstm/pipeline.hpp"

namespace cinelstm {

void write_overlay_pgm(const std::filesystem::path& path, const Image& image, const Mask* manual,
                       const Mask* automatic) {
  std::vector<unsigned char> gray(image.size(), 0);
  if (image.size() > 0) {
    const auto [lo, hi] = std::minmax_element(image.pixels.begin(), image.pixels.end());
    const float range = *hi - *lo;
    for (std::size_t i = 0; i < image.size(); ++i) {
      const float v = range > 0.0f ? (image.pixels[i] - *lo) / range : 0.0f;
      gray[i] = static_cast<unsigned char>(std::lround(200.0f * v));
    }
  }
  auto draw = [&](const Mask* m, unsigned char level) {
    if (!m) return;
    if (m->height != image.height || m->width != image.width) {
      throw std::invalid_argument("overlay: mask " + m->dims() + " does not match image " + image.dims());
    }
    for (const Pixel& p : extract_contour(*m)) gray[static_cast<std::size_t>(p.row) * image.width + p.col] = level;
  };
  draw(manual, 255);
  draw(automatic, 128);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write overlay " + path.string());
  os << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

}  // namespace cinelstm
