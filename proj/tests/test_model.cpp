#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "cinelstm/checkpoint.hpp"
#include "cinelstm/encoder.hpp"
#include "cinelstm/errors.hpp"
#include "cinelstm/segnet.hpp"
#include "cinelstm/tensor_io.hpp"
#include "support.hpp"

using namespace cinelstm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cinelstm_model_tests";
  fs::create_directories(dir);
  return dir / name;
}

EncoderConfig tiny_encoder() { return {2, 1, 1}; }

std::vector<Tensor<float>> random_frames(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor<float>> out;
  for (std::size_t t = 0; t < n; ++t) out.push_back(oracle::random_tensor(Shape::chw(1, h, w), rng, 0.0, 1.0).cast<float>());
  return out;
}

}  // namespace

TEST(Encoder, LayerCountOfPresets) {
  EXPECT_EQ(EncoderConfig::full().weighted_layers(), 56u);
  EXPECT_EQ(EncoderConfig::desk().weighted_layers(), 20u);
}

TEST(Encoder, FeatureShapes) {
  Rng rng = make_rng(3, "enc");
  const auto p = init_encoder<float>(EncoderConfig::desk(), rng);
  const auto f = encoder_forward(p, Tensor<float>(Shape::chw(1, 48, 40), 0.5f));
  EXPECT_EQ(f.half.shape(), Shape::chw(16, 24, 20));
  EXPECT_EQ(f.quarter.shape(), Shape::chw(32, 12, 10));
}

TEST(Encoder, RejectsSizesNotDivisibleByFour) {
  Rng rng = make_rng(3, "enc");
  const auto p = init_encoder<float>(tiny_encoder(), rng);
  EXPECT_THROW(encoder_forward(p, Tensor<float>(Shape::chw(1, 18, 16))), std::invalid_argument);
  EXPECT_THROW(encoder_forward(p, Tensor<float>(Shape::chw(2, 16, 16))), std::invalid_argument);
}

TEST(Encoder, ResidualUnitGradientCheck) {
  std::mt19937_64 rng(31);
  for (int n = 0; n < 20; ++n) {
    const std::size_t cin = 1 + rng() % 2, cout = cin + rng() % 2, stride = 1 + rng() % 2;
    ResUnitParams<double> u;
    u.conv1_w = oracle::random_tensor(Shape::kernel(cout, cin, 3, 3), rng);
    u.conv1_b = oracle::random_tensor(Shape::vec(cout), rng);
    u.conv2_w = oracle::random_tensor(Shape::kernel(cout, cout, 3, 3), rng);
    u.conv2_b = oracle::random_tensor(Shape::vec(cout), rng);
    const bool proj = cin != cout || stride != 1;
    if (proj) {
      u.proj_w = oracle::random_tensor(Shape::kernel(cout, cin, 1, 1), rng);
      u.proj_b = oracle::random_tensor(Shape::vec(cout), rng);
    }
    std::vector<Tensor<double>> leaves;
    u.visit([&](const char*, Tensor<double>& t) { leaves.push_back(t); });
    leaves.push_back(oracle::random_tensor(Shape::chw(cin, 4, 4), rng));
    const auto probe = res_unit_forward(u, leaves.back(), stride);
    const auto w = oracle::random_tensor(probe.shape(), rng);
    const auto r = oracle::check_gradients(leaves, [&](const std::vector<Tensor<double>>& v) {
      ResUnitParams<double> q = u;
      std::size_t i = 0;
      q.visit([&](const char*, Tensor<double>& t) { t = v[i++]; });
      return oracle::weighted_sum(res_unit_forward(q, v[i], stride), w);
    });
    // ReLU kinks can sit within the finite-difference step; those
    // instances are rare with continuous random data and reported here.
    EXPECT_LT(r.max_rel_error, 1e-5) << "instance " << n;
  }
}

TEST(Decoder, OutputIsFullResolutionProbability) {
  Rng rng = make_rng(4, "dec");
  const EncoderConfig cfg = tiny_encoder();
  const auto d = init_decoder<float>(cfg, rng);
  const auto out = decode(d, Tensor<float>(Shape::chw(8, 3, 4), 0.2f), Tensor<float>(Shape::chw(4, 6, 8), 0.1f));
  EXPECT_EQ(out.shape(), Shape::chw(1, 12, 16));
  for (float v : out.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  EXPECT_THROW(decode(d, Tensor<float>(Shape::chw(8, 3, 4)), Tensor<float>(Shape::chw(4, 5, 8))), std::invalid_argument);
}

TEST(SegModel, VariantsCarryTheRightBlocks) {
  const CycleConfig cyc{4, 2};
  const auto cnn = init_model<float>(Variant::CnnOnly, tiny_encoder(), cyc, 16, 16, 1);
  const auto one = init_model<float>(Variant::OneLevel, tiny_encoder(), cyc, 16, 16, 1);
  const auto multi = init_model<float>(Variant::MultiLevel, tiny_encoder(), cyc, 16, 16, 1);
  EXPECT_FALSE(cnn.lstm_quarter || cnn.lstm_half);
  EXPECT_TRUE(one.lstm_quarter && !one.lstm_half);
  EXPECT_TRUE(multi.lstm_quarter && multi.lstm_half);
  EXPECT_LT(cnn.parameter_count(), one.parameter_count());
  EXPECT_LT(one.parameter_count(), multi.parameter_count());
  EXPECT_EQ(one.lstm_quarter->height(), 4u);
  EXPECT_EQ(multi.lstm_half->hidden_channels(), tiny_encoder().half_channels());
}

TEST(SegModel, MissingBlockIsRejectedByName) {
  auto m = init_model<float>(Variant::MultiLevel, tiny_encoder(), CycleConfig{4, 2}, 16, 16, 1);
  m.lstm_quarter.reset();
  try {
    m.validate();
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("lstm_quarter"), std::string::npos);
  }
}

TEST(SegModel, ForwardSequenceShapesAndDeterminism) {
  const auto m = init_model<float>(Variant::MultiLevel, tiny_encoder(), CycleConfig{4, 2}, 16, 12, 9);
  const auto frames = random_frames(4, 16, 12, 1);
  const auto a = forward_sequence(m, frames);
  const auto b = forward_sequence(m, frames);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t].shape(), Shape::chw(1, 16, 12));
    EXPECT_TRUE(bit_equal(a[t], b[t]));
  }
  EXPECT_THROW(forward_sequence(m, random_frames(3, 16, 12, 1)), std::invalid_argument);
  EXPECT_THROW(forward_sequence(m, random_frames(4, 16, 16, 1)), std::invalid_argument);
}

TEST(SegModel, CnnOnlyFramesAreIndependent) {
  const auto m = init_model<float>(Variant::CnnOnly, tiny_encoder(), CycleConfig{3, 2}, 8, 8, 2);
  auto frames = random_frames(3, 8, 8, 2);
  const auto a = forward_sequence(m, frames);
  frames[2] = random_frames(1, 8, 8, 77)[0];
  const auto b = forward_sequence(m, frames);
  EXPECT_TRUE(bit_equal(a[0], b[0]));
  EXPECT_FALSE(bit_equal(a[2], b[2]));

  // With temporal blocks the last frame reaches the first via the loop.
  const auto t = init_model<float>(Variant::OneLevel, tiny_encoder(), CycleConfig{3, 2}, 8, 8, 2);
  auto frames2 = random_frames(3, 8, 8, 2);
  const auto c = forward_sequence(t, frames2);
  frames2[2] = random_frames(1, 8, 8, 77)[0];
  const auto d = forward_sequence(t, frames2);
  EXPECT_FALSE(bit_equal(c[0], d[0]));
}

TEST(SegModel, WholeModelGradientCheck) {
  // Tiny multi-level network, every parameter. Parameters are drawn at
  // random rather than from init: zero biases put whole regions exactly on
  // a ReLU kink.
  std::mt19937_64 rng(41);
  auto m = init_model<double>(Variant::MultiLevel, tiny_encoder(), CycleConfig{2, 2}, 8, 8, 5);
  m.visit([&](const std::string&, Tensor<double>& t) { t = oracle::random_tensor(t.shape(), rng, -0.5, 0.5); });
  std::vector<Tensor<double>> frames, weights, leaves;
  for (int t = 0; t < 2; ++t) {
    frames.push_back(oracle::random_tensor(Shape::chw(1, 8, 8), rng, 0.0, 1.0));
    weights.push_back(oracle::random_tensor(Shape::chw(1, 8, 8), rng));
  }
  m.visit([&](const std::string&, Tensor<double>& t) { leaves.push_back(t); });
  const auto r = oracle::check_gradients_contracted(
      leaves,
      [&](const std::vector<Tensor<double>>& v) {
        SegModel<double> q = m;
        std::size_t i = 0;
        q.visit([&](const std::string&, Tensor<double>& t) { t = v[i++]; });
        return forward_sequence(q, frames);
      },
      weights);
  EXPECT_EQ(r.checked, 8065u);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(TensorIo, RoundTripAllRanks) {
  std::mt19937_64 rng(5);
  const fs::path path = scratch("tensors.bin");
  const auto a = oracle::random_tensor(Shape::chw(2, 3, 4), rng).cast<float>();
  const auto k = oracle::random_tensor(Shape::kernel(2, 3, 3, 3), rng).cast<float>();
  {
    std::ofstream os(path, std::ios::binary);
    write_tensor(os, a);
    write_tensor(os, k);
  }
  std::ifstream is(path, std::ios::binary);
  const auto a2 = read_tensor(is);
  const auto k2 = read_tensor(is);
  EXPECT_TRUE(bit_equal(a, a2));
  EXPECT_EQ(k2.shape(), Shape::chw(6, 3, 3));
  EXPECT_TRUE(std::equal(k.data().begin(), k.data().end(), k2.data().begin()));
}

TEST(Checkpoint, RoundTripIsBitExactForEveryVariant) {
  for (Variant v : {Variant::CnnOnly, Variant::OneLevel, Variant::MultiLevel}) {
    const auto m = init_model<float>(v, tiny_encoder(), CycleConfig{4, 2}, 16, 16, 17);
    const fs::path path = scratch("model_" + to_string(v) + ".segm");
    save_checkpoint(m, path);
    const auto r = load_checkpoint(path);
    EXPECT_EQ(r.variant, v);
    std::vector<Tensor<float>> pa, pb;
    m.visit([&](const std::string&, const Tensor<float>& t) { pa.push_back(t); });
    r.visit([&](const std::string&, const Tensor<float>& t) { pb.push_back(t); });
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bit_equal(pa[i], pb[i]));
    const auto frames = random_frames(4, 16, 16, 3);
    const auto ya = forward_sequence(m, frames), yb = forward_sequence(r, frames);
    for (std::size_t t = 0; t < ya.size(); ++t) EXPECT_TRUE(bit_equal(ya[t], yb[t]));

    // Saving the loaded model reproduces the file byte for byte.
    const fs::path again = scratch("model_again.segm");
    save_checkpoint(r, again);
    std::ifstream fa(path, std::ios::binary), fb(again, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_EQ(sa, sb);
  }
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  const auto m = init_model<float>(Variant::OneLevel, tiny_encoder(), CycleConfig{4, 2}, 16, 16, 17);
  const fs::path path = scratch("corrupt.segm");
  save_checkpoint(m, path);
  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign((std::istreambuf_iterator<char>(is)), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  write(bytes.substr(0, bytes.size() - 10));
  EXPECT_THROW(load_checkpoint(path), FormatError);
  write("XXXX" + bytes.substr(4));
  EXPECT_THROW(load_checkpoint(path), FormatError);
  write(bytes + "extra");
  EXPECT_THROW(load_checkpoint(path), FormatError);
  EXPECT_THROW(load_checkpoint(scratch("does_not_exist.segm")), FormatError);
}

TEST(Variant, ParseAndPrint) {
  EXPECT_EQ(parse_variant("cnn"), Variant::CnnOnly);
  EXPECT_EQ(parse_variant("multi-level"), Variant::MultiLevel);
  EXPECT_EQ(to_string(Variant::OneLevel), "one-level");
  EXPECT_THROW(parse_variant("two-level"), std::invalid_argument);
}
