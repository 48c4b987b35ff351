#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "cinelstm/config.hpp"
#include "cinelstm/errors.hpp"
#include "cinelstm/pipeline.hpp"
#include "support.hpp"

using namespace cinelstm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cinelstm_pipeline_tests";
  fs::create_directories(dir);
  return dir / name;
}

Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(h, w);
  for (float& p : img.pixels) p = u(rng);
  return img;
}

PhantomSpec still_phantom() {
  PhantomSpec s;
  s.inner_radius = 10.0;
  s.outer_radius = 16.0;
  s.noise_sigma = 0.0;
  s.center_jitter = 0.0;
  s.center_drift = 0.0;
  s.radius_jitter = 0.0;
  return s;
}

}  // namespace

TEST(Resample, UnitSpacingIsBitExactIdentity) {
  std::mt19937_64 rng(71);
  const Image img = random_image(13, 17, rng);
  EXPECT_EQ(resample_to_unit_mm(img, {1.0, 1.0}), img);
}

TEST(Resample, ShapeArithmeticAndConstants) {
  const Image c(100, 100, 0.7f);
  const Image up = resample_to_unit_mm(c, {2.0, 2.0});
  EXPECT_EQ(up.height, 200u);
  EXPECT_EQ(up.width, 200u);
  for (float v : up.pixels) EXPECT_FLOAT_EQ(v, 0.7f);
  const Image odd = resample_to_unit_mm(Image(33, 50, 0.25f), {1.37, 0.71});
  EXPECT_EQ(odd.height, 45u);
  EXPECT_EQ(odd.width, 36u);
  for (float v : odd.pixels) EXPECT_FLOAT_EQ(v, 0.25f);
  EXPECT_THROW(resample_to_unit_mm(c, {0.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(resample_to_unit_mm(c, {1.0, -2.0}), std::invalid_argument);
}

TEST(Resample, MasksStayBinary) {
  std::mt19937_64 rng(72);
  const Mask m = oracle::random_mask(20, 20, rng);
  const Mask up = resample_to_unit_mm(m, {1.5, 1.5});
  EXPECT_EQ(up.height, 30u);
  EXPECT_NO_THROW(up.validate());
  EXPECT_EQ(resample_to_unit_mm(m, {1.0, 1.0}).bits, m.bits);
}

TEST(CenterCrop, OffsetIdentityAndPadding) {
  std::mt19937_64 rng(73);
  const Image big = random_image(200, 200, rng);
  const Image c = center_crop(big, 184);
  ASSERT_EQ(c.height, 184u);
  EXPECT_EQ(c.at(0, 0), big.at(8, 8));
  EXPECT_EQ(c.at(183, 183), big.at(191, 191));

  const Image same = random_image(184, 184, rng);
  EXPECT_EQ(center_crop(same, 184), same);

  const Image small = random_image(100, 100, rng);
  const Image padded = center_crop(small, 184);
  EXPECT_EQ(padded.at(42, 42), small.at(0, 0));
  EXPECT_EQ(padded.at(141, 141), small.at(99, 99));
  EXPECT_EQ(padded.at(41, 41), 0.0f);
  EXPECT_EQ(padded.at(142, 100), 0.0f);
}

TEST(MotionMap, IdenticalFramesGiveZero) {
  std::mt19937_64 rng(74);
  CineSequence seq;
  seq.frames.assign(5, random_image(6, 6, rng));
  for (float v : motion_map(seq).pixels) EXPECT_EQ(v, 0.0f);
}

TEST(MotionMap, SingleMovingPixelIsTheMaximum) {
  CineSequence seq;
  for (int t = 0; t < 25; ++t) {
    Image f(8, 8, 0.3f);
    f.at(5, 2) = (t % 2 == 0 && t < 24) ? 1.0f : 0.0f;
    seq.frames.push_back(f);
  }
  const Image m = motion_map(seq);
  const auto it = std::max_element(m.pixels.begin(), m.pixels.end());
  EXPECT_EQ(static_cast<std::size_t>(it - m.pixels.begin()), 5u * 8u + 2u);
  EXPECT_GT(*it, 0.0f);
}

TEST(MotionMap, MatchesScalarOracle) {
  // The map is stored as 32-bit; the oracle runs in double and is rounded once.
  std::mt19937_64 rng(75);
  CineSequence seq;
  for (int t = 0; t < 25; ++t) seq.frames.push_back(random_image(12, 9, rng));
  const Image m = motion_map(seq);
  for (std::size_t p = 0; p < m.size(); ++p) {
    double s = 0.0, s2 = 0.0;
    for (const Image& f : seq.frames) s += f.pixels[p];
    const double mean = s / 25.0;
    for (const Image& f : seq.frames) s2 += (f.pixels[p] - mean) * (f.pixels[p] - mean);
    EXPECT_NEAR(m.pixels[p], static_cast<float>(std::sqrt(s2 / 25.0)), 1e-10) << "pixel " << p;
  }
  CineSequence one;
  one.frames.push_back(random_image(4, 4, rng));
  EXPECT_THROW(motion_map(one), std::invalid_argument);
}

TEST(Hough, RingAtCentre) {
  std::mt19937_64 rng(76);
  const Image map = oracle::circle_map(184, 92, 92, 20, 0.0, rng);
  const Localization loc = hough_localize(map, 8, 40);
  EXPECT_LE(std::abs(static_cast<double>(loc.center_row) - 92), 2.0);
  EXPECT_LE(std::abs(static_cast<double>(loc.center_col) - 92), 2.0);
  EXPECT_LE(std::abs(static_cast<double>(loc.radius) - 20), 2.0);
  // Box of side 2 (r + 16) around the centre.
  EXPECT_EQ(loc.box.rows, 2 * (loc.radius + 16));
  EXPECT_EQ(loc.box.row, loc.center_row - loc.radius - 16);
}

TEST(Hough, FiftyRandomCirclesWithinTwoPixels) {
  std::mt19937_64 rng(77);
  const auto start = std::chrono::steady_clock::now();
  int hits = 0;
  for (int k = 0; k < 50; ++k) {
    const auto truth = oracle::random_circle(184, 8, 40, rng);
    const Image map = oracle::circle_map(184, truth.row, truth.col, truth.radius, 0.05, rng);
    const Localization loc = hough_localize(map, 8, 40);
    const bool ok = std::abs(loc.center_row - truth.row) <= 2.0 && std::abs(loc.center_col - truth.col) <= 2.0 &&
                    std::abs(static_cast<double>(loc.radius) - truth.radius) <= 2.0;
    EXPECT_TRUE(ok) << "circle " << k << " at (" << truth.row << ", " << truth.col << ") r " << truth.radius
                    << " found (" << loc.center_row << ", " << loc.center_col << ") r " << loc.radius;
    hits += ok;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(hits, 50);
  EXPECT_LT(secs, 30.0);
}

TEST(Hough, CompleteCircleBeatsArcAndTiesGoToSmallestIndex) {
  std::mt19937_64 rng(78);
  // A large arc collects more raw votes than the small complete circle.
  Image two = oracle::circle_map(184, 50, 50, 10, 0.0, rng);
  const Image big = oracle::circle_map(184, 120, 110, 30, 0.0, rng);
  for (std::size_t r = 0; r < 184; ++r) {
    for (std::size_t c = 0; c < 184; ++c) {
      if (c < 110) two.at(r, c) += big.at(r, c);
    }
  }
  const Localization a = hough_localize(two, 6, 34);
  EXPECT_NEAR(static_cast<double>(a.center_row), 50.0, 2.0);
  EXPECT_NEAR(static_cast<double>(a.radius), 10.0, 2.0);

  // Identical circles translated by whole pixels collect identical votes.
  Image twins = oracle::circle_map(184, 60, 130, 15, 0.0, rng);
  const Image other = oracle::circle_map(184, 130, 40, 15, 0.0, rng);
  for (std::size_t i = 0; i < twins.size(); ++i) twins.pixels[i] += other.pixels[i];
  const Localization t = hough_localize(twins, 10, 20);
  EXPECT_NEAR(static_cast<double>(t.center_row), 60.0, 2.0);
  EXPECT_NEAR(static_cast<double>(t.center_col), 130.0, 2.0);
  EXPECT_EQ(hough_localize(twins, 10, 20).center_row, t.center_row);
}

TEST(Hough, Errors) {
  EXPECT_THROW(hough_localize(Image(64, 64, 0.5f), 4, 20), std::invalid_argument);
  EXPECT_THROW(hough_localize(Image(64, 64), 20, 10), std::invalid_argument);
  EXPECT_THROW(hough_localize(Image(64, 64), 4, 32), std::invalid_argument);
}

TEST(LocalizedCrop, WindowFollowsTheMovingRegion) {
  PhantomSpec s = still_phantom();
  s.size = 96;
  s.center_jitter = 6.0;
  s.seed = 9;
  const auto cycle = phantom_generate(s, 1).front();
  LocalizeOptions opts;
  opts.r_min = 4;
  opts.r_max = 30;
  const Localization loc = localize_cycle(cycle, opts);
  const CineSequence tight = localized_crop(cycle, 48, opts);
  ASSERT_EQ(tight.height(), 48u);
  // The whole myocardium stays inside the window.
  for (std::size_t t = 0; t < cycle.frames.size(); ++t) EXPECT_EQ(tight.masks->at(t).count(), cycle.masks->at(t).count());
  EXPECT_EQ(tight.frames[3].at(24, 24), cycle.frames[3].at(loc.center_row, loc.center_col));
}

TEST(GroupCycles, SplitsStreamsIntoCycles) {
  std::vector<FrameRecord> frames;
  for (int i = 0; i < 450; ++i) {
    FrameRecord f;
    f.subject = 3;
    f.image = Image(2, 2, static_cast<float>(i));
    frames.push_back(f);
  }
  const auto cycles = group_cycles(frames);
  ASSERT_EQ(cycles.size(), 18u);
  EXPECT_EQ(cycles[4].id.cycle, 4);
  EXPECT_EQ(cycles[4].frames[0].pixels[0], 100.0f);
  EXPECT_EQ(cycles[4].frames[24].pixels[0], 124.0f);
  EXPECT_FALSE(cycles[0].masks.has_value());

  frames.resize(25);
  const auto one = group_cycles(frames);
  ASSERT_EQ(one.size(), 1u);
  for (int t = 0; t < 25; ++t) EXPECT_EQ(one[0].frames[t].pixels[0], static_cast<float>(t));

  frames.push_back(frames.back());
  try {
    group_cycles(frames);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("subject 3"), std::string::npos) << e.what();
  }
}

TEST(GroupCycles, InterleavedStreamsKeepTemporalOrder) {
  std::vector<FrameRecord> frames;
  for (int i = 0; i < 8; ++i) {
    FrameRecord f;
    f.subject = 1;
    f.location = i % 2;
    f.image = Image(1, 1, static_cast<float>(i));
    f.mask = Mask(1, 1);
    frames.push_back(f);
  }
  const auto cycles = group_cycles(frames, 2);
  ASSERT_EQ(cycles.size(), 4u);
  EXPECT_EQ(cycles[0].id.location, 0);
  EXPECT_EQ(cycles[0].frames[1].pixels[0], 2.0f);
  EXPECT_EQ(cycles[2].id.location, 1);
  EXPECT_TRUE(cycles[2].masks.has_value());
}

TEST(Phantom, AnnulusAreaMatchesGeometry) {
  const auto cycle = phantom_generate(still_phantom(), 1).front();
  const double expected = std::numbers::pi * (16.0 * 16.0 - 10.0 * 10.0);
  EXPECT_NEAR(static_cast<double>(cycle.masks->front().count()), expected, 0.05 * expected);
  EXPECT_EQ(cycle.frames.size(), 25u);
}

TEST(Phantom, ZeroThinningIsANoOp) {
  PhantomSpec plain = still_phantom();
  PhantomSpec thin = plain;
  thin.thinning.enabled = true;
  thin.thinning.width_deg = 120.0;
  thin.thinning_factor = 0.0;
  EXPECT_EQ(phantom_generate(plain, 2)[1].masks, phantom_generate(thin, 2)[1].masks);
  thin.thinning_factor = 0.5;
  EXPECT_LT(phantom_generate(thin, 1)[0].masks->front().count(), phantom_generate(plain, 1)[0].masks->front().count());
}

TEST(Phantom, SameSeedIsBitIdentical) {
  PhantomSpec s;
  s.seed = 42;
  const auto a = phantom_dataset(s, 2, 2), b = phantom_dataset(s, 2, 2);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].frames, b[i].frames);
    EXPECT_EQ(a[i].masks, b[i].masks);
    EXPECT_EQ(a[i].id, b[i].id);
  }
  EXPECT_NE(a[0].frames, a[2].frames);
  s.seed = 43;
  EXPECT_NE(phantom_dataset(s, 1, 1)[0].frames, a[0].frames);
}

TEST(Phantom, MasksMatchNoiseFreeIntensities) {
  PhantomSpec s = still_phantom();
  s.center_jitter = 2.0;
  s.radius_jitter = 1.0;
  s.thinning = {true, 30.0, 90.0};
  s.thinning_factor = 0.6;
  s.lesion = {true, 200.0, 70.0};
  s.lesion_attenuation = 0.8;
  s.lesion_first_frame = 10;
  const float myo = static_cast<float>(s.myocardium);
  const float lesion = static_cast<float>(s.myocardium * (1.0 - s.lesion_attenuation));
  for (const auto& cycle : phantom_generate(s, 3)) {
    for (std::size_t t = 0; t < cycle.frames.size(); ++t) {
      const bool lesion_frame = t >= 10 && t < 15;
      std::size_t attenuated = 0;
      for (std::size_t p = 0; p < cycle.frames[t].size(); ++p) {
        const float v = cycle.frames[t].pixels[p];
        if (cycle.masks->at(t).bits[p]) {
          EXPECT_TRUE(v == myo || (lesion_frame && v == lesion)) << "frame " << t << " pixel " << p;
          attenuated += v == lesion;
        } else {
          EXPECT_TRUE(v == static_cast<float>(s.background) || v == static_cast<float>(s.blood));
        }
      }
      EXPECT_EQ(attenuated > 0, lesion_frame) << "frame " << t;
    }
  }
}

TEST(Phantom, InvalidSpecsRejected) {
  PhantomSpec s;
  s.inner_radius = 20.0;
  EXPECT_THROW(phantom_generate(s, 1), std::invalid_argument);
  s = PhantomSpec{};
  s.outer_radius = 30.0;
  EXPECT_THROW(phantom_generate(s, 1), std::invalid_argument);
  s = PhantomSpec{};
  s.lesion_attenuation = 1.5;
  EXPECT_THROW(phantom_generate(s, 1), std::invalid_argument);
}

TEST(Cine, RoundTripIsBitExact) {
  PhantomSpec s;
  s.seed = 5;
  CineSequence seq = phantom_dataset(s, 3, 1)[2];
  seq.spacing_mm = {1.25, 0.75};
  // A mask carries one spacing; files store it as the row spacing.
  for (Mask& m : *seq.masks) m.spacing_mm = 1.25;
  const fs::path p = scratch("roundtrip.cine");
  write_cine(p, seq);
  const CineSequence back = read_cine(p);
  EXPECT_EQ(back.frames, seq.frames);
  EXPECT_EQ(back.masks, seq.masks);
  EXPECT_EQ(back.spacing_mm, seq.spacing_mm);
  EXPECT_EQ(back.id, seq.id);
}

TEST(Cine, AbsentMasksStayAbsent) {
  PhantomSpec s;
  CineSequence seq = phantom_generate(s, 1)[0];
  seq.masks.reset();
  const fs::path p = scratch("nomasks.cine");
  write_cine(p, seq);
  EXPECT_FALSE(read_cine(p).masks.has_value());
}

TEST(Cine, TruncatedPayloadRejected) {
  PhantomSpec s;
  CineSequence seq = phantom_generate(s, 1)[0];
  seq.masks.reset();
  const fs::path p = scratch("truncated.cine");
  write_cine(p, seq);
  // Drop exactly one frame: header still says 25.
  fs::resize_file(p, fs::file_size(p) - s.size * s.size * sizeof(float));
  EXPECT_THROW(read_cine(p), FormatError);
}

TEST(Cine, BadMagicRejected) {
  const fs::path p = scratch("garbage.cine");
  std::ofstream(p, std::ios::binary) << "NOTACINEFILE";
  EXPECT_THROW(read_cine(p), FormatError);
  EXPECT_THROW(read_cine(scratch("missing.cine")), FormatError);
}

TEST(Overlay, ContoursUseDistinctGrayLevels) {
  Image img(6, 6, 0.5f);
  Mask manual(6, 6), automatic(6, 6);
  manual.at(1, 1) = 1;
  automatic.at(4, 4) = 1;
  const fs::path p = scratch("overlay.pgm");
  write_overlay_pgm(p, img, &manual, &automatic);
  std::ifstream is(p, std::ios::binary);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  is.get();
  std::vector<unsigned char> px(w * h);
  is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, 6u);
  EXPECT_EQ(px[1 * 6 + 1], 255);
  EXPECT_EQ(px[4 * 6 + 4], 128);
  EXPECT_LE(px[0], 200);
}

TEST(Config, UnknownKeysAndBadTypesRejected) {
  const auto base = nlohmann::json::parse(R"({"phantom": {"size": 48}, "subjects": 2})");
  EXPECT_NO_THROW(parse_run_config(base));
  auto extra = base;
  extra["bogus"] = 1;
  try {
    parse_run_config(extra);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos) << e.what();
  }
  auto nested = base;
  nested["train"] = {{"epochz", 3}};
  EXPECT_THROW(parse_run_config(nested), std::invalid_argument);
  auto typed = base;
  typed["subjects"] = "two";
  EXPECT_THROW(parse_run_config(typed), std::invalid_argument);
  auto both = base;
  both["data_dir"] = "x";
  EXPECT_THROW(parse_run_config(both), std::invalid_argument);
}

TEST(Config, RoundTripsThroughJson) {
  auto j = nlohmann::json::parse(R"({"phantom": {"size": 40, "seed": 4}, "subjects": 3, "seed": 9,
    "variants": ["cnn", "multi-level"], "encoder": {"base_width": 4, "units_per_stage": 1},
    "localize": {"window": 24, "r_min": 4, "r_max": 12}, "train": {"epochs": 2}})");
  const RunConfig a = parse_run_config(j);
  const RunConfig b = parse_run_config(to_json(a));
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(b.train.seed, 9u);
  EXPECT_EQ(b.localize_window, 24u);
  EXPECT_EQ(b.train.encoder.base_width, 4u);
  EXPECT_EQ(b.variants.size(), 2u);
}
