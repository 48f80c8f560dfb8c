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

#include <random>

#include "mglu/mglu.hpp"

namespace mglu {
namespace {

template <class A, class B>
double rel(const A& a, const B& b) {
  return max_relative_error<typename A::value_type, typename B::value_type>(a, b);
}

PackedMasks random_packed(std::size_t n_m, std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<BinaryMask> ms(n_m, BinaryMask(rows, cols));
  for (auto& m : ms)
    for (auto& v : m.values()) v = coin(rng);
  return pack_masks(ms);
}

TEST(FusedKernel, HandExample) {
  // A = [[1, 2], [3, 4]], x = [1, 1], M = [[1, 0], [0, 1]]
  DenseMatrix<double> a(2, 2, {1, 2, 3, 4});
  std::vector<BinaryMask> ms{BinaryMask(2, 2, std::vector<std::uint8_t>{1, 0, 0, 1})};
  const std::vector<double> x{1, 1};
  const auto z = fused_masked_matvec<double>(a, x, pack_masks(ms));
  EXPECT_EQ(z.total, (std::vector<double>{3, 7}));
  EXPECT_EQ(z.gate(0, 0), 1);
  EXPECT_EQ(z.gate(0, 1), 4);
  EXPECT_EQ(z.value(0, 0), 2);
  EXPECT_EQ(z.value(0, 1), 3);
}

TEST(FusedKernel, AllOnesMaskGivesZeroValue) {
  std::mt19937_64 rng(31);
  const auto a = random_normal<double>(9, 13, rng);
  const auto x = random_normal_vector<double>(13, rng);
  std::vector<BinaryMask> ms{BinaryMask(9, 13, std::uint8_t{1})};
  const auto z = fused_masked_matvec<double>(a, x, pack_masks(ms));
  for (std::size_t r = 0; r < 9; ++r) {
    EXPECT_EQ(z.gate(0, r), z.total[r]);
    EXPECT_EQ(z.value(0, r), 0.0);
  }
}

TEST(FusedKernel, RowMajorAndTransposedAgreeWithNaive) {
  std::mt19937_64 rng(32);
  for (std::size_t n_m : {1u, 2u, 5u, 8u, 11u, 16u}) {
    auto layer = make_random_layer<double>(37, 53, n_m, Activation::swish, rng, {.logit_std = 1.0});
    const auto x = random_normal_vector<double>(37, rng);
    KernelConfig cfg;
    cfg.split_k = 3;
    cfg.tile_width = 16;
    const auto fused = mglu_forward_fused<double>(x, layer, cfg);
    const auto naive = reference::mglu_forward_naive<double>(x, layer);
    EXPECT_LE(rel(fused, naive), 1e-12) << n_m;
  }
}

TEST(FusedKernel, StridedPathMatchesMatvec) {
  // row-major A exercises the strided lanes
  std::mt19937_64 rng(33);
  const auto a = random_normal<double>(20, 30, rng);
  const auto x = random_normal_vector<double>(30, rng);
  const auto packed = random_packed(4, 20, 30, rng);
  const auto z = fused_masked_matvec<double>(a, x, packed, {.split_k = 4, .tile_width = 8});
  for (std::size_t r = 0; r < 20; ++r) {
    double t = 0;
    for (std::size_t k = 0; k < 30; ++k) t += a(r, k) * x[k];
    EXPECT_NEAR(z.total[r], t, 1e-12);
    for (std::size_t i = 0; i < 4; ++i) {
      double g = 0;
      for (std::size_t k = 0; k < 30; ++k)
        if ((packed.word(r, k) >> i) & 1u) g += a(r, k) * x[k];
      EXPECT_NEAR(z.gate(i, r), g, 1e-12);
    }
  }
}

TEST(FusedKernel, DeterministicResultIndependentOfSplitAndThreads) {
  std::mt19937_64 rng(34);
  const auto w = random_normal<float>(300, 70, rng);
  const auto x = random_normal_vector<float>(300, rng);
  const auto packed = random_packed(6, 300, 70, rng);
  const auto base = fused_masked_matvec_transposed<float>(w, x, packed, {.split_k = 1, .threads = 1});
  for (std::size_t split : {2u, 3u, 7u, 64u, 300u})
    for (unsigned threads : {1u, 4u}) {
      KernelConfig cfg;
      cfg.split_k = split;
      cfg.threads = threads;
      cfg.tile_width = 32;
      EXPECT_EQ(fused_masked_matvec_transposed<float>(w, x, packed, cfg), base) << split << "/" << threads;
    }
}

TEST(FusedKernel, ComplementarityDeterministicDouble) {
  std::mt19937_64 rng(35);
  const auto w = random_normal<double>(64, 48, rng);
  const auto x = random_normal_vector<double>(64, rng);
  const auto packed = random_packed(3, 64, 48, rng);
  const auto z = fused_masked_matvec_transposed<double>(w, x, packed, {.split_k = 4});
  const auto t = reference::matvec<double>(x, w);
  EXPECT_EQ(z.total, t);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t r = 0; r < 48; ++r) EXPECT_EQ(z.value(i, r), t[r] - z.gate(i, r));
}

TEST(FusedKernel, ComplementarityAtomicMode) {
  std::mt19937_64 rng(36);
  const auto w = random_normal<float>(256, 64, rng);
  const auto x = random_normal_vector<float>(256, rng);
  const auto packed = random_packed(4, 256, 64, rng);
  KernelConfig cfg;
  cfg.split_k = 8;
  cfg.deterministic = false;
  cfg.threads = 4;
  const auto z = fused_masked_matvec_transposed<float>(w, x, packed, cfg);
  const auto t = reference::matvec<double>(cast_vector<double, float>(x), cast_matrix<double>(w));
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> sum(64);
    for (std::size_t r = 0; r < 64; ++r) sum[r] = double(z.gate(i, r)) + double(z.value(i, r));
    EXPECT_LE(rel(sum, t), 1e-5);
  }
}

TEST(FusedKernel, TrafficCountsEachElementOnce) {
  std::mt19937_64 rng(37);
  const auto w = random_normal<float>(40, 24, rng);
  const auto x = random_normal_vector<float>(40, rng);
  for (std::size_t n_m : {1u, 4u, 16u}) {
    const auto packed = random_packed(n_m, 40, 24, rng);
    const auto [y, traffic] = instrumented_forward<float>(x, w, packed, Activation::swish, {.split_k = 4});
    EXPECT_EQ(traffic.weight_elements_read, 40u * 24u);
    EXPECT_EQ(traffic.mask_words_read, 40u * 24u);
    EXPECT_EQ(traffic.modeled_weight_bits, (32u + n_m) * 40u * 24u);

    const auto hard = unpack_masks(packed);
    const auto [yn, naive] = instrumented_naive_forward<float>(x, w, hard, Activation::swish);
    EXPECT_EQ(naive.weight_elements_read, 2u * n_m * 40u * 24u);
  }
}

TEST(FusedKernel, ConfigErrors) {
  DenseMatrix<double> w(4, 3);
  const std::vector<double> x(4, 1.0);
  std::vector<BinaryMask> ms{BinaryMask(4, 3)};
  const auto packed = pack_masks(ms);
  EXPECT_THROW(fused_masked_matvec_transposed<double>(w, x, packed, {.split_k = 0}), Error);
  EXPECT_THROW(fused_masked_matvec_transposed<double>(w, x, packed, {.split_k = 5}), Error);
  EXPECT_THROW(fused_masked_matvec_transposed<double>(w, x, packed, {.tile_width = 3}), Error);
  EXPECT_THROW(fused_masked_matvec_transposed<double>(w, x, packed, {.tile_width = 2048}), Error);
  const std::vector<double> short_x(3, 1.0);
  EXPECT_THROW(fused_masked_matvec_transposed<double>(w, short_x, packed), Error);
  std::vector<BinaryMask> other{BinaryMask(3, 4)};
  EXPECT_THROW(fused_masked_matvec_transposed<double>(w, x, pack_masks(other)), Error);
}

TEST(FusedKernel, RejectsContaminatedWords) {
  DenseMatrix<double> w(1, 2, {1, 1});
  const std::vector<double> x{1};
  PackedMasks bad(2, 1, 2, PackedMasks::Narrow{0b100, 0});
  MgluLayer<double> layer;
  layer.weight = w;
  layer.masks = bad;
  EXPECT_THROW(reference::mglu_forward_naive<double>(x, layer), Error);
}

TEST(FusedKernel, FfnPathsAgree) {
  std::mt19937_64 rng(38);
  LayerInit init;
  init.output_proj = true;
  init.logit_std = 1.0;
  const auto layer = make_random_layer<double>(16, 40, 3, Activation::gelu, rng, init);
  const auto x = random_normal_vector<double>(16, rng);
  const auto a = ffn_forward<double>(x, layer, ForwardPath::fused);
  const auto b = ffn_forward<double>(x, layer, ForwardPath::naive);
  EXPECT_LE(rel(a, b), 1e-12);
}

}  // namespace
}  // namespace mglu
