// Copyright (c) 2026 The MGLU Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include <unistd.h>

#include "mglu/mglu.hpp"

namespace mglu {
namespace {

std::vector<BinaryMask> random_masks(std::size_t n_m, std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<BinaryMask> out(n_m, BinaryMask(rows, cols));
  for (auto& m : out)
    for (auto& v : m.values()) v = coin(rng) ? 1 : 0;
  return out;
}

TEST(SteBinarize, SignRuleWithZeroMappedToZero) {
  DenseMatrix<double> logits(1, 3, {0.3, -0.2, 0.0});
  const auto m = ste_binarize(logits);
  EXPECT_EQ(m(0, 0), 1);
  EXPECT_EQ(m(0, 1), 0);
  EXPECT_EQ(m(0, 2), 0);
}

TEST(SteBinarize, NegativeZeroAndTinyValues) {
  DenseMatrix<float> logits(1, 3, {-0.0f, 1e-30f, -1e-30f});
  const auto m = ste_binarize(logits);
  EXPECT_EQ(m(0, 0), 0);
  EXPECT_EQ(m(0, 1), 1);
  EXPECT_EQ(m(0, 2), 0);
}

TEST(SteBinarize, RejectsNaN) {
  DenseMatrix<double> logits(1, 1, {std::nan("")});
  try {
    (void)ste_binarize(logits);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::non_finite);
  }
}

TEST(SteBinarize, PositiveRescalingLeavesMaskUnchanged) {
  std::mt19937_64 rng(3);
  auto logits = random_normal<double>(7, 9, rng);
  const auto before = ste_binarize(logits);
  for (auto& v : logits.values()) v *= 17.5;
  EXPECT_EQ(ste_binarize(logits), before);
}

TEST(SteBinarize, Idempotent) {
  std::mt19937_64 rng(4);
  const auto logits = random_normal<double>(5, 6, rng);
  const auto once = ste_binarize(logits);
  const auto twice = ste_binarize(mask_as_real<double>(once));
  EXPECT_EQ(once, twice);
}

TEST(PackMasks, TwoMasksOneElement) {
  // mask 0 in bit 0, mask 1 in bit 1
  BinaryMask a(1, 3, std::vector<std::uint8_t>{1, 0, 1});
  BinaryMask b(1, 3, std::vector<std::uint8_t>{0, 1, 1});
  std::vector<BinaryMask> ms{a, b};
  const auto p = pack_masks(ms);
  EXPECT_EQ(p.word_bits(), 8u);
  EXPECT_EQ(p.word(0, 0), 1);
  EXPECT_EQ(p.word(0, 1), 2);
  EXPECT_EQ(p.word(0, 2), 3);
}

TEST(PackMasks, WordWidthFollowsMaskCount) {
  std::mt19937_64 rng(5);
  EXPECT_EQ(pack_masks(random_masks(8, 2, 2, rng)).word_bits(), 8u);
  EXPECT_EQ(pack_masks(random_masks(9, 2, 2, rng)).word_bits(), 16u);
  EXPECT_EQ(pack_masks(random_masks(16, 2, 2, rng)).word_bytes(), 2u);
}

TEST(PackMasks, SixteenthMaskUsesTopBit) {
  std::vector<BinaryMask> ms(16, BinaryMask(1, 1));
  ms[15](0, 0) = 1;
  EXPECT_EQ(pack_masks(ms).word(0, 0), 0x8000);
}

TEST(PackMasks, RoundTripAllCounts) {
  std::mt19937_64 rng(6);
  for (std::size_t n_m = 1; n_m <= 16; ++n_m) {
    const auto ms = random_masks(n_m, 5, 11, rng);
    EXPECT_EQ(unpack_masks(pack_masks(ms)), ms) << "n_m=" << n_m;
  }
}

TEST(PackMasks, RejectsBadCounts) {
  std::vector<BinaryMask> none;
  EXPECT_THROW(pack_masks(none), Error);
  std::vector<BinaryMask> many(17, BinaryMask(1, 1));
  EXPECT_THROW(pack_masks(many), Error);
}

TEST(PackMasks, RejectsNonBinaryEntries) {
  std::vector<BinaryMask> ms{BinaryMask(1, 1, std::vector<std::uint8_t>{2})};
  EXPECT_THROW(pack_masks(ms), Error);
}

TEST(PackMasks, RejectsShapeMismatch) {
  std::vector<BinaryMask> ms{BinaryMask(2, 2), BinaryMask(2, 3)};
  EXPECT_THROW(pack_masks(ms), Error);
}

TEST(PackedMasks, HighBitContaminationDetected) {
  PackedMasks p(3, 1, 2, PackedMasks::Narrow{0b0000'0111, 0b0000'1000});
  try {
    p.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::high_bit_contamination);
  }
  EXPECT_THROW(unpack_masks(p), Error);
}

TEST(PackedMasks, WidthMustMatchCount) {
  EXPECT_THROW(PackedMasks(9, 1, 1, PackedMasks::Narrow{0}), Error);
  EXPECT_THROW(PackedMasks(2, 1, 1, PackedMasks::Wide{0}), Error);
  EXPECT_THROW(PackedMasks(2, 2, 2, PackedMasks::Narrow{0}), Error);
}

TEST(OnesFraction, CountsOnes) {
  std::vector<BinaryMask> ms{BinaryMask(1, 4, std::vector<std::uint8_t>{1, 1, 0, 1})};
  EXPECT_DOUBLE_EQ(ones_fraction(ms)[0], 0.75);
}

TEST(DenseMatrix, RejectsWrongDataLength) {
  EXPECT_THROW(DenseMatrix<double>(2, 2, std::vector<double>{1, 2, 3}), Error);
}

TEST(DenseMatrix, TransposedViewReadsColumns) {
  DenseMatrix<double> w(2, 3, {1, 2, 3, 4, 5, 6});
  const auto a = transposed_view(w);
  EXPECT_EQ(a.rows, 3u);
  EXPECT_EQ(a.cols, 2u);
  EXPECT_EQ(a(2, 1), 6.0);
  EXPECT_EQ(a(0, 1), 4.0);
  EXPECT_TRUE(a.contiguous_rows());
}

TEST(Layer, ValidateCatchesShapeErrors) {
  std::mt19937_64 rng(7);
  auto layer = make_random_layer<double>(4, 6, 2, Activation::swish, rng);
  layer.output_proj = DenseMatrix<double>(4, 6);
  EXPECT_THROW(layer.validate(), Error);
  layer.output_proj.reset();
  layer.router = Router<double>{DenseMatrix<double>(4, 2), 3};
  EXPECT_THROW(layer.validate(), Error);
}

class SerializeTest : public ::testing::Test {
 protected:
  void SetUp() override {
    path_ = std::filesystem::temp_directory_path() /
            ("mglu_layer_" + std::to_string(::getpid()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name() + ".bin");
  }
  void TearDown() override { std::filesystem::remove(path_); }
  std::filesystem::path path_;
};

TEST_F(SerializeTest, RoundTripWithLogitsProjectionAndRouter) {
  std::mt19937_64 rng(8);
  LayerInit init;
  init.output_proj = true;
  init.router_k = 2;
  const auto layer = make_random_layer<float>(6, 10, 3, Activation::gelu, rng, init);
  serialize_layer(layer, path_);
  EXPECT_EQ(deserialize_layer<float>(path_), layer);
}

TEST_F(SerializeTest, RoundTripPackedWideMasks) {
  std::mt19937_64 rng(9);
  auto layer = make_random_layer<float>(5, 7, 12, Activation::relu, rng);
  layer.masks = layer.packed_masks();
  serialize_layer(layer, path_);
  EXPECT_EQ(deserialize_layer<float>(path_), layer);
}

TEST_F(SerializeTest, FileSizeForLogitLayer) {
  // 32 header + W 768*3072*4 + four logit matrices 768*3072*4 each
  MgluLayer<float> layer;
  layer.weight = DenseMatrix<float>(768, 3072);
  layer.masks = MaskLogits<float>(4, 768, 3072);
  serialize_layer(layer, path_);
  EXPECT_EQ(std::filesystem::file_size(path_), 47'185'952u);
}

TEST_F(SerializeTest, FileSizeForInferenceLayer) {
  // 32 header + W 768*3072*4 + packed 8-bit words 768*3072 + W_o 3072*768*4
  MgluLayer<float> layer;
  layer.weight = DenseMatrix<float>(768, 3072);
  std::vector<BinaryMask> ms(4, BinaryMask(768, 3072));
  layer.masks = pack_masks(ms);
  layer.output_proj = DenseMatrix<float>(3072, 768);
  serialize_layer(layer, path_);
  EXPECT_EQ(std::filesystem::file_size(path_), 21'233'696u);
}

TEST_F(SerializeTest, BadMagic) {
  std::mt19937_64 rng(10);
  auto bytes = encode_layer(make_random_layer<float>(2, 3, 1, Activation::swish, rng));
  bytes[0] = std::byte{'X'};
  try {
    (void)decode_layer<float>(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::bad_magic);
  }
}

TEST_F(SerializeTest, VersionMismatch) {
  std::mt19937_64 rng(11);
  auto bytes = encode_layer(make_random_layer<float>(2, 3, 1, Activation::swish, rng));
  bytes[4] = std::byte{2};
  try {
    (void)decode_layer<float>(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::version_mismatch);
  }
}

TEST_F(SerializeTest, DimensionOverflow) {
  std::mt19937_64 rng(12);
  auto bytes = encode_layer(make_random_layer<float>(2, 3, 1, Activation::swish, rng));
  for (int i = 8; i < 16; ++i) bytes[i] = std::byte{0xFF};
  try {
    (void)decode_layer<float>(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::dim_overflow);
  }
}

TEST_F(SerializeTest, TruncatedFile) {
  std::mt19937_64 rng(13);
  auto bytes = encode_layer(make_random_layer<float>(2, 3, 1, Activation::swish, rng));
  bytes.resize(bytes.size() - 3);
  try {
    (void)decode_layer<float>(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::truncated_file);
  }
  bytes.resize(10);
  EXPECT_THROW((void)decode_layer<float>(bytes), Error);
}

TEST_F(SerializeTest, MissingFileIsIoError) {
  try {
    (void)deserialize_layer<float>(path_);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io_error);
  }
}

}  // namespace
}  // namespace mglu
