#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "cinelstm/pipeline.hpp"
#include "cinelstm/random.hpp"

namespace cinelstm {
namespace {

bool in_sector(double angle_deg, double start_deg, double width_deg) {
  const double rel = std::fmod(angle_deg - start_deg + 720.0, 360.0);
  return rel < width_deg;
}

void check(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("phantom spec: " + what);
}

}  // namespace

void PhantomSpec::validate() const {
  check(size >= 8 && size % 4 == 0, "size must be >= 8 and divisible by 4");
  check(frames >= 1, "frames must be >= 1");
  check(center_drift >= 0 && center_jitter >= 0 && radius_jitter >= 0 && beat_amplitude >= 0,
        "drift, jitter and beat amplitude must be non-negative");
  check(inner_radius - radius_jitter - beat_amplitude > 0.0, "inner radius must stay positive over the cycle");
  check(inner_radius < outer_radius, "inner radius must be smaller than outer radius");
  const double reach = outer_radius + radius_jitter + center_jitter + center_drift;
  check(reach < static_cast<double>(size) / 2.0, "outer radius plus motion must stay within size/2");
  check(thinning_factor >= 0.0 && thinning_factor <= 1.0, "thinning_factor must be in [0, 1]");
  check(lesion_attenuation >= 0.0 && lesion_attenuation <= 1.0, "lesion_attenuation must be in [0, 1]");
  check(thinning.width_deg >= 0.0 && thinning.width_deg <= 360.0, "thinning sector width must be in [0, 360]");
  check(lesion.width_deg >= 0.0 && lesion.width_deg <= 360.0, "lesion sector width must be in [0, 360]");
  check(noise_sigma >= 0.0, "noise_sigma must be non-negative");
}

std::vector<CineSequence> phantom_generate(const PhantomSpec& spec, std::size_t cycles) {
  spec.validate();
  std::vector<CineSequence> out;
  const std::size_t n = spec.size;
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t k = 0; k < cycles; ++k) {
    Rng rng = make_rng(spec.seed, "cycle/" + std::to_string(k));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double cy0 = static_cast<double>(n) / 2.0 + spec.center_jitter * unit(rng);
    const double cx0 = static_cast<double>(n) / 2.0 + spec.center_jitter * unit(rng);
    const double dr = spec.radius_jitter * unit(rng);
    const double thin_start = spec.randomize_sectors ? 180.0 * (unit(rng) + 1.0) : spec.thinning.start_deg;
    const double lesion_start = spec.randomize_sectors ? 180.0 * (unit(rng) + 1.0) : spec.lesion.start_deg;
    std::normal_distribution<double> noise(0.0, 1.0);

    CineSequence seq;
    seq.id = {0, 0, 0, static_cast<int>(k)};
    seq.masks.emplace();
    for (std::size_t t = 0; t < spec.frames; ++t) {
      const double phase = two_pi * static_cast<double>(t) / static_cast<double>(spec.frames);
      const double contraction = 0.5 * (1.0 - std::cos(phase));  // 0 at end-diastole, 1 at systole
      const double cy = cy0 + spec.center_drift * std::sin(phase);
      const double cx = cx0 + 0.5 * spec.center_drift * std::sin(phase + std::numbers::pi / 3.0);
      const double inner = spec.inner_radius + dr - spec.beat_amplitude * contraction;
      const double outer = spec.outer_radius + dr - 0.5 * spec.beat_amplitude * contraction;
      const bool lesion_frame = spec.lesion.enabled && t >= spec.lesion_first_frame &&
                                t < spec.lesion_first_frame + spec.lesion_frame_count;

      Image img(n, n);
      Mask mask(n, n, 1.0);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
          const double y = static_cast<double>(r) - cy, x = static_cast<double>(c) - cx;
          const double d = std::hypot(x, y);
          double angle = std::atan2(y, x) * 180.0 / std::numbers::pi;
          if (angle < 0.0) angle += 360.0;
          double wall_outer = outer;
          if (spec.thinning.enabled && in_sector(angle, thin_start, spec.thinning.width_deg)) {
            wall_outer = inner + (outer - inner) * (1.0 - spec.thinning_factor);
          }
          double value = spec.background;
          if (d < inner) {
            value = spec.blood;
          } else if (d < wall_outer) {
            value = spec.myocardium;
            if (lesion_frame && in_sector(angle, lesion_start, spec.lesion.width_deg)) {
              value *= 1.0 - spec.lesion_attenuation;
            }
            mask.at(r, c) = 1;
          }
          if (spec.noise_sigma > 0.0) value += spec.noise_sigma * noise(rng);
          img.at(r, c) = static_cast<float>(value);
        }
      }
      seq.frames.push_back(std::move(img));
      seq.masks->push_back(std::move(mask));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<CineSequence> phantom_dataset(const PhantomSpec& spec, std::size_t subjects,
                                          std::size_t cycles_per_subject) {
  std::vector<CineSequence> out;
  for (std::size_t s = 0; s < subjects; ++s) {
    PhantomSpec subject_spec = spec;
    subject_spec.seed = substream_seed(spec.seed, "subject/" + std::to_string(s));
    for (CineSequence& seq : phantom_generate(subject_spec, cycles_per_subject)) {
      seq.id.subject = static_cast<int>(s);
      out.push_back(std::move(seq));
    }
  }
  return out;
}

}  // namespace cinelstm
