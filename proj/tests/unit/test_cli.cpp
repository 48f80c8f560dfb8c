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

#include "tools/cli/bench.hpp"
#include "tools/cli/json_io.hpp"
#include "tools/cli/verify.hpp"

namespace mglu::cli {
namespace {

std::string config_error_path(const std::string& text) {
  try {
    (void)parse_train_config(json::parse(text));
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<none>";
}

TEST(Shapes, ParsesSeparators) {
  EXPECT_EQ(parse_shapes("8x16,64X256"), (std::vector<Shape>{{8, 16}, {64, 256}}));
  EXPECT_EQ(parse_shapes("768\xC3\x97" "3072"), (std::vector<Shape>{{768, 3072}}));
}

TEST(Shapes, RejectsMalformed) {
  for (const char* bad : {"", "8", "8x", "x8", "0x4", "8x16,", "8y16", "8x16x2", "-1x4"})
    EXPECT_THROW(parse_shapes(bad), Error) << bad;
}

TEST(Percentile, InterpolatesBetweenRanks) {
  EXPECT_EQ(percentile({5.0}, 0.9), 5.0);
  EXPECT_EQ(percentile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_NEAR(percentile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, 0.1), 2.0, 1e-12);
  EXPECT_EQ(percentile({1, 2}, 1.0), 2.0);
}

TEST(TrainConfigJson, FieldPathsInErrors) {
  EXPECT_EQ(config_error_path(R"({"lr": "fast"})"), "/lr");
  EXPECT_EQ(config_error_path(R"({"dims": {"h": 8, "w": 4}})"), "/dims/w");
  EXPECT_EQ(config_error_path(R"({"variant": {"kind": "topk"}})"), "/variant/top_k");
  EXPECT_EQ(config_error_path(R"({"variant": {"kind": "ablation", "ablation": "no_mask"}})"), "/variant/ablation");
  EXPECT_EQ(config_error_path(R"({"schedule": "linear"})"), "/schedule");
  EXPECT_EQ(config_error_path(R"({"betas": [0.9]})"), "/betas");
  EXPECT_EQ(config_error_path(R"({"learning_rate": 1})"), "/learning_rate");
  EXPECT_EQ(config_error_path(R"({"n_m": 40})"), "/");
  EXPECT_EQ(config_error_path(R"([1, 2])"), "/");
}

TEST(TrainConfigJson, RoundTrip) {
  TrainConfig c;
  c.seed = 11;
  c.steps = 77;
  c.lr = 2.5e-3;
  c.n_m = 4;
  c.variant = {VariantKind::topk, reference::AblationVariant::no_masks, 2};
  c.freeze_masks_at = 30;
  c.activation = Activation::gelu;
  c.h = c.out = 16;
  c.d = 48;
  c.teacher_d = 48;
  const auto back = parse_train_config(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.variant, c.variant);
  EXPECT_EQ(back.freeze_masks_at, c.freeze_masks_at);
}

TEST(TrainConfigJson, StringVariant) {
  const auto c = parse_train_config(json::parse(R"({"variant": "glu"})"));
  EXPECT_EQ(c.variant.kind, VariantKind::glu);
}

TEST(TrainReportJson, NonFiniteLossesBecomeNull) {
  TrainReport r;
  r.steps = {10};
  r.loss_curve = {std::numeric_limits<double>::infinity()};
  r.train_loss_curve = {1.0};
  r.mask_stats = {{0.5}};
  r.final_loss = std::numeric_limits<double>::quiet_NaN();
  r.diverged = true;
  r.error = "boom";
  const auto j = to_json(r, false);
  EXPECT_TRUE(j["final_loss"].is_null());
  EXPECT_TRUE(j["checkpoints"][0]["loss"].is_null());
  EXPECT_EQ(j["error"], "boom");
  EXPECT_FALSE(j.contains("wall_time_s"));
}

VerifyOptions small_verify() {
  VerifyOptions o;
  o.shapes = {{8, 16}, {24, 40}};
  o.masks = {1, 3, 9};
  o.threads = 2;
  return o;
}

TEST(Verify, CleanRunPasses) {
  for (bool dbl : {false, true}) {
    auto o = small_verify();
    o.double_precision = dbl;
    const auto rep = run_verify(o);
    EXPECT_TRUE(rep.pass()) << dbl;
    EXPECT_GT(rep.cases.size(), 10u);
  }
}

TEST(Verify, MaskFaultIsDetected) {
  auto o = small_verify();
  o.fault = Fault::mask;
  o.gradients = false;
  EXPECT_FALSE(run_verify(o).pass());
}

TEST(Verify, GradientFaultIsDetected) {
  auto o = small_verify();
  o.fault = Fault::grad;
  const auto rep = run_verify(o);
  EXPECT_FALSE(rep.pass());
  for (const auto& c : rep.cases) {
    if (!c.pass) {
      EXPECT_EQ(c.suite, "gradients");
    }
  }
}

TEST(Verify, JsonIsStable) {
  const auto o = small_verify();
  EXPECT_EQ(to_json(run_verify(o)).dump(), to_json(run_verify(o)).dump());
}

TEST(Bench, TinyRunProducesAllKinds) {
  BenchOptions o;
  o.shapes = {{64, 128}};
  o.masks = {1, 2};
  o.reps = 3;
  o.warmup = 1;
  o.threads = 1;
  const auto recs = run_bench(o);
  EXPECT_TRUE(median_of(recs, BenchKind::fused, o.shapes[0], 2).has_value());
  EXPECT_TRUE(median_of(recs, BenchKind::naive, o.shapes[0], 1).has_value());
  for (const auto& r : recs) {
    EXPECT_LE(r.p10_ms, r.median_ms);
    EXPECT_LE(r.median_ms, r.p90_ms);
  }
}

}  // namespace
}  // namespace mglu::cli
