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

#include <ostream>
#include <random>
#include <string>

#include "mglu/mglu.hpp"

namespace mglu {
namespace {

template <class A, class B>
double rel(const A& a, const B& b) {
  return max_relative_error<typename A::value_type, typename B::value_type>(a, b);
}

using reference::AblationVariant;

MgluLayer<double> small_layer(std::size_t n_m, Activation act, std::uint64_t seed, bool wo = false,
                              std::optional<std::size_t> k = std::nullopt) {
  std::mt19937_64 rng(seed);
  LayerInit init;
  init.output_proj = wo;
  init.router_k = k;
  init.logit_std = 1.0;
  return make_random_layer<double>(6, 10, n_m, act, rng, init);
}

TEST(FiniteDiff, QuadraticAndConstant) {
  std::vector<double> p{3.0, -1.0};
  const auto g = finite_diff_grad([&] { return p[0] * p[0] + 5.0 * p[1]; }, std::span<double>(p));
  EXPECT_NEAR(g[0], 6.0, 1e-8);
  EXPECT_NEAR(g[1], 5.0, 1e-8);
  EXPECT_EQ(p, (std::vector<double>{3.0, -1.0}));
  const auto z = finite_diff_grad([] { return 2.5; }, std::span<double>(p));
  EXPECT_EQ(z, (std::vector<double>{0.0, 0.0}));
}

TEST(FiniteDiff, RejectsNonFiniteObjective) {
  std::vector<double> p{1.0};
  EXPECT_THROW(finite_diff_grad([] { return std::numeric_limits<double>::infinity(); }, std::span<double>(p)),
               Error);
}

TEST(Backward, HandDerivedIdentityCase) {
  // y = s .* (t - s) with s = x (M.*W), t = x W; L = <1, y> = 11 x0 x1
  MgluLayer<double> layer;
  layer.weight = DenseMatrix<double>(2, 2, {1, 2, 3, 4});
  layer.masks = MaskLogits<double>({DenseMatrix<double>(2, 2, {1, -1, -1, 1})});
  layer.activation = Activation::identity;
  const std::vector<double> x{1, 1};
  const std::vector<double> u{1, 1};
  const auto g = mglu_backward<double>(x, layer, u);
  EXPECT_EQ(g.d_x, (std::vector<double>{11, 11}));
  EXPECT_EQ(g.d_W, DenseMatrix<double>(2, 2, {3, 4, 1, 2}));
  EXPECT_EQ(g.d_logits[0], DenseMatrix<double>(2, 2, {2, -4, 6, -8}));
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const auto layer = small_layer(3, Activation::gelu, 41, true);
  std::mt19937_64 rng(1);
  const auto x = random_normal_vector<double>(6, rng);
  const std::vector<double> u(6, 0.0);
  const auto g = mglu_backward<double>(x, layer, u);
  for (double v : g.d_x) EXPECT_EQ(v, 0.0);
  for (double v : g.d_W.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.d_W_o->values()) EXPECT_EQ(v, 0.0);
  for (const auto& m : g.d_logits.masks())
    for (double v : m.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LinearInUpstream) {
  const auto layer = small_layer(2, Activation::swish, 42);
  std::mt19937_64 rng(2);
  const auto x = random_normal_vector<double>(6, rng);
  const auto u1 = random_normal_vector<double>(10, rng);
  const auto u2 = random_normal_vector<double>(10, rng);
  std::vector<double> u12(10);
  for (int j = 0; j < 10; ++j) u12[j] = u1[j] + u2[j];
  const auto a = mglu_backward<double>(x, layer, u1);
  const auto b = mglu_backward<double>(x, layer, u2);
  const auto c = mglu_backward<double>(x, layer, u12);
  for (std::size_t k = 0; k < c.d_W.size(); ++k)
    EXPECT_NEAR(c.d_W.values()[k], a.d_W.values()[k] + b.d_W.values()[k], 1e-12);
  for (std::size_t p = 0; p < 6; ++p) EXPECT_NEAR(c.d_x[p], a.d_x[p] + b.d_x[p], 1e-12);
}

TEST(Backward, TapeForwardMatchesReference) {
  const auto layer = small_layer(4, Activation::gelu, 43, true);
  std::mt19937_64 rng(3);
  const auto x = random_normal_vector<double>(6, rng);
  MgluTape<double> tape(layer);
  MgluTape<double>::Cache c;
  tape.forward(x, c);
  const auto want = reference::ffn_forward<double>(x, layer);
  EXPECT_LE(rel(c.out, want), 1e-13);
}

TEST(Backward, AblationWithRouterRejected) {
  const auto layer = small_layer(2, Activation::gelu, 44, false, 1);
  EXPECT_THROW(MgluTape<double>(layer, AblationVariant::no_masks), Error);
}

TEST(Relaxed, HalfMaskIdentityIsQuarterSquare) {
  std::mt19937_64 rng(45);
  const auto w = random_normal<double>(5, 7, rng);
  const auto x = random_normal_vector<double>(5, rng);
  std::vector<DenseMatrix<double>> soft{DenseMatrix<double>(5, 7, 0.5)};
  const auto y = relaxed_mglu_forward<double>(x, w, soft, Activation::identity);
  const auto t = reference::matvec<double>(x, w);
  for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(y[j], 0.25 * t[j] * t[j], 1e-12);
}

TEST(Relaxed, HardSoftMasksReproduceNaive) {
  const auto layer = small_layer(3, Activation::swish, 46);
  std::mt19937_64 rng(4);
  const auto x = random_normal_vector<double>(6, rng);
  std::vector<DenseMatrix<double>> soft;
  for (const auto& m : layer.hard_masks()) soft.push_back(mask_as_real<double>(m));
  const auto a = relaxed_mglu_forward<double>(x, layer.weight, soft, layer.activation);
  const auto b = reference::mglu_forward_naive<double>(x, layer);
  EXPECT_LE(rel(a, b), 1e-13);
}

struct GradCase {
  Activation act;
  std::size_t n_m;
};

void PrintTo(const GradCase& c, std::ostream* os) { *os << to_string(c.act) << " n_m=" << c.n_m; }

class GradCheck : public ::testing::TestWithParam<GradCase> {};

TEST_P(GradCheck, PlainAndProjected) {
  const auto [act, n_m] = GetParam();
  for (bool wo : {false, true}) {
    const auto layer = small_layer(n_m, act, 50 + n_m, wo);
    const auto rep = check_gradients(layer, 7);
    EXPECT_TRUE(rep.pass) << to_string(act) << " n_m=" << n_m << " W_o=" << wo;
    for (const auto& b : rep.blocks) EXPECT_LE(b.max_rel, 1e-6) << b.block;
  }
}

TEST_P(GradCheck, Ablations) {
  const auto [act, n_m] = GetParam();
  const auto layer = small_layer(n_m, act, 60 + n_m, true);
  for (auto v : {AblationVariant::no_gate_mask, AblationVariant::no_value_mask, AblationVariant::no_masks}) {
    GradCheckOptions opt;
    opt.ablation = v;
    EXPECT_TRUE(check_gradients(layer, 8, opt).pass) << to_string(v);
  }
}

TEST_P(GradCheck, Routed) {
  const auto [act, n_m] = GetParam();
  const auto layer = small_layer(n_m, act, 70 + n_m, true, std::max<std::size_t>(1, n_m / 2));
  const auto rep = check_gradients(layer, 9);
  EXPECT_TRUE(rep.pass);
  EXPECT_NE(rep.find("W_r"), nullptr);
}

INSTANTIATE_TEST_SUITE_P(ActivationsAndCounts, GradCheck,
                         ::testing::Values(GradCase{Activation::identity, 1}, GradCase{Activation::relu, 2},
                                           GradCase{Activation::swish, 4}, GradCase{Activation::gelu, 1},
                                           GradCase{Activation::gelu, 4}, GradCase{Activation::relu, 4}),
                         [](const auto& info) {
                           return std::string(to_string(info.param.act)) + "_n" + std::to_string(info.param.n_m);
                         });

TEST(GradCheck, SinglePrecisionLooserTolerance) {
  std::mt19937_64 rng(80);
  const auto layer = make_random_layer<float>(6, 10, 2, Activation::swish, rng, {.logit_std = 1.0});
  const auto rep = check_gradients(layer, 3);
  EXPECT_EQ(rep.tolerance, 1e-4);
  EXPECT_TRUE(rep.pass);
}

TEST(GradCheck, CorruptedWeightGradientIsCaught) {
  const auto layer = small_layer(2, Activation::swish, 81);
  const auto rep = check_gradients<double>(layer, 5, {}, [](GradBundle<double>& g) { g.d_W(1, 2) += 1e-3; });
  EXPECT_FALSE(rep.pass);
  EXPECT_FALSE(rep.find("W")->pass);
  EXPECT_TRUE(rep.find("x")->pass);
  EXPECT_TRUE(rep.find("logits")->pass);
}

TEST(GradCheck, EmptyReluGateColumnIsSkipped) {
  std::mt19937_64 rng(81);
  auto layer = make_random_layer<double>(4, 3, 1, Activation::relu, rng, {.logit_std = 1.0});
  for (std::size_t p = 0; p < 4; ++p) layer.logits()[0](p, 1) = -1.0;
  const auto rep = check_gradients(layer, 5);
  EXPECT_TRUE(rep.pass);
  EXPECT_EQ(rep.find("logits")->skipped, 4u);
  layer.activation = Activation::swish;
  EXPECT_EQ(check_gradients(layer, 5).find("logits")->skipped, 0u);
}

TEST(GluBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(82);
  auto wg = random_normal<double>(4, 5, rng);
  auto wv = random_normal<double>(4, 5, rng);
  auto x = random_normal_vector<double>(4, rng);
  const auto u = random_normal_vector<double>(5, rng);
  const auto g = glu_backward<double>(x, wg, wv, Activation::gelu, u);
  auto f = [&] {
    const auto y = reference::glu_forward<double>(x, wg, wv, Activation::gelu);
    double s = 0;
    for (int j = 0; j < 5; ++j) s += u[j] * y[j];
    return s;
  };
  EXPECT_LE(rel(g.d_x, finite_diff_grad(f, std::span<double>(x))), 1e-8);
  EXPECT_LE(rel(g.d_W_g.values(), finite_diff_grad(f, wg.values())), 1e-8);
  EXPECT_LE(rel(g.d_W_v.values(), finite_diff_grad(f, wv.values())), 1e-8);
}

}  // namespace
}  // namespace mglu
