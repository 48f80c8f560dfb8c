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

#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mglu/analysis.hpp"
#include "mglu/trainer.hpp"

namespace mglu::cli {

using nlohmann::json;

inline constexpr const char* kSchemaVersion = "1.0.0";

// A malformed input document; `path` is a JSON pointer to the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& msg)
      : std::runtime_error(path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Timestamp is left out of reports that must be reproducible byte for byte.
inline json environment(std::string_view precision, unsigned threads, bool with_timestamp) {
  json env{{"cores", std::max(1u, std::thread::hardware_concurrency())},
           {"threads", threads},
           {"precision", precision}};
  if (with_timestamp) env["timestamp"] = utc_timestamp();
  return env;
}

namespace detail {

inline void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "/" : path, "expected an object");
}

inline void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> known) {
  std::set<std::string> ok(known.begin(), known.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError(path + "/" + it.key(), "unknown field");
}

template <class T>
void read(const json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  const std::string where = path + "/" + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(where, "expected a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0))
      throw ConfigError(where, "expected a non-negative integer");
    out = v.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(where, "expected a number");
    out = v.get<T>();
  } else {
    if (!v.is_string()) throw ConfigError(where, "expected a string");
    out = v.get<std::string>();
  }
}

template <class E>
E read_enum(const json& j, const std::string& path, const char* key, E fallback,
            std::initializer_list<std::pair<const char*, E>> names) {
  if (!j.contains(key)) return fallback;
  std::string s;
  read(j, path, key, s);
  for (const auto& [n, e] : names)
    if (s == n) return e;
  throw ConfigError(path + "/" + key, "unrecognized value '" + s + "'");
}

inline AblationVariant parse_ablation(const std::string& s, const std::string& path) {
  for (auto v : {AblationVariant::no_gate_mask, AblationVariant::no_value_mask, AblationVariant::no_masks})
    if (reference::to_string(v) == s) return v;
  throw ConfigError(path, "unrecognized ablation '" + s + "'");
}

inline TrainVariant parse_variant(const json& j, const std::string& path) {
  TrainVariant v;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "glu") v.kind = VariantKind::glu;
    else if (s == "mglu") v.kind = VariantKind::mglu;
    else throw ConfigError(path, "string variants are 'glu' or 'mglu'; use an object for ablation/topk");
    return v;
  }
  expect_object(j, path);
  reject_unknown(j, path, {"kind", "ablation", "top_k"});
  if (!j.contains("kind")) throw ConfigError(path + "/kind", "missing required field");
  v.kind = read_enum(j, path, "kind", VariantKind::mglu,
                     {{"glu", VariantKind::glu}, {"mglu", VariantKind::mglu},
                      {"ablation", VariantKind::ablation}, {"topk", VariantKind::topk}});
  if (v.kind == VariantKind::ablation) {
    if (!j.contains("ablation")) throw ConfigError(path + "/ablation", "missing required field");
    std::string s;
    read(j, path, "ablation", s);
    v.ablation = parse_ablation(s, path + "/ablation");
  }
  if (v.kind == VariantKind::topk) {
    if (!j.contains("top_k")) throw ConfigError(path + "/top_k", "missing required field");
    read(j, path, "top_k", v.top_k);
  }
  return v;
}

}  // namespace detail

// Field names mirror TrainConfig. Unknown fields are rejected.
inline TrainConfig parse_train_config(const json& j) {
  using namespace detail;
  expect_object(j, "");
  reject_unknown(j, "",
                 {"seed", "steps", "batch_size", "lr", "betas", "eps", "weight_decay", "warmup_fraction",
                  "min_lr_ratio", "schedule", "mask_mode", "mask_lr_multiplier", "freeze_masks_at", "variant",
                  "n_m", "activation", "dims", "task", "log_every", "eval_samples"});
  TrainConfig c;
  read(j, "", "seed", c.seed);
  read(j, "", "steps", c.steps);
  read(j, "", "batch_size", c.batch_size);
  read(j, "", "lr", c.lr);
  if (j.contains("betas")) {
    const json& b = j.at("betas");
    if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number())
      throw ConfigError("/betas", "expected [beta1, beta2]");
    c.beta1 = b[0].get<double>();
    c.beta2 = b[1].get<double>();
  }
  read(j, "", "eps", c.eps);
  read(j, "", "weight_decay", c.weight_decay);
  read(j, "", "warmup_fraction", c.warmup_fraction);
  read(j, "", "min_lr_ratio", c.min_lr_ratio);
  c.schedule = read_enum(j, "", "schedule", c.schedule,
                         {{"constant", Schedule::constant}, {"cosine", Schedule::cosine}});
  c.mask_mode = read_enum(j, "", "mask_mode", c.mask_mode,
                          {{"learned", MaskMode::learned}, {"fixed", MaskMode::fixed}});
  read(j, "", "mask_lr_multiplier", c.mask_lr_multiplier);
  if (j.contains("freeze_masks_at")) {
    std::size_t at = 0;
    read(j, "", "freeze_masks_at", at);
    c.freeze_masks_at = at;
  }
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant"), "/variant");
  read(j, "", "n_m", c.n_m);
  if (j.contains("activation")) {
    std::string s;
    read(j, "", "activation", s);
    const auto a = parse_activation(s);
    if (!a) throw ConfigError("/activation", "unrecognized activation '" + s + "'");
    c.activation = *a;
  }
  if (j.contains("dims")) {
    const json& d = j.at("dims");
    expect_object(d, "/dims");
    reject_unknown(d, "/dims", {"h", "d", "out"});
    read(d, "/dims", "h", c.h);
    read(d, "/dims", "d", c.d);
    c.out = c.h;
    read(d, "/dims", "out", c.out);
  }
  if (j.contains("task")) {
    const json& t = j.at("task");
    expect_object(t, "/task");
    reject_unknown(t, "/task", {"samples", "teacher_n_m", "teacher_d", "noise", "seed"});
    read(t, "/task", "samples", c.samples);
    read(t, "/task", "teacher_n_m", c.teacher_n_m);
    read(t, "/task", "teacher_d", c.teacher_d);
    read(t, "/task", "noise", c.noise);
    read(t, "/task", "seed", c.task_seed);
  }
  read(j, "", "log_every", c.log_every);
  read(j, "", "eval_samples", c.eval_samples);
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError("/", e.what());
  }
  return c;
}

inline json variant_json(const TrainVariant& v) {
  json j{{"kind", to_string(v.kind)}};
  if (v.kind == VariantKind::ablation) j["ablation"] = reference::to_string(v.ablation);
  if (v.kind == VariantKind::topk) j["top_k"] = v.top_k;
  return j;
}

inline json to_json(const TrainConfig& c) {
  json j{{"seed", c.seed},
         {"steps", c.steps},
         {"batch_size", c.batch_size},
         {"lr", c.lr},
         {"betas", {c.beta1, c.beta2}},
         {"eps", c.eps},
         {"weight_decay", c.weight_decay},
         {"warmup_fraction", c.warmup_fraction},
         {"min_lr_ratio", c.min_lr_ratio},
         {"schedule", to_string(c.schedule)},
         {"mask_mode", to_string(c.mask_mode)},
         {"mask_lr_multiplier", c.mask_lr_multiplier},
         {"variant", variant_json(c.variant)},
         {"n_m", c.n_m},
         {"activation", to_string(c.activation)},
         {"dims", {{"h", c.h}, {"d", c.d}, {"out", c.out}}},
         {"task",
          {{"samples", c.samples},
           {"teacher_n_m", c.teacher_n_m},
           {"teacher_d", c.teacher_d ? c.teacher_d : c.d},
           {"noise", c.noise},
           {"seed", c.task_seed}}},
         {"log_every", c.log_every},
         {"eval_samples", c.eval_samples}};
  if (c.freeze_masks_at) j["freeze_masks_at"] = *c.freeze_masks_at;
  return j;
}

// Non-finite losses are written as null.
inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const TrainReport& r, bool with_timing) {
  json curve = json::array();
  for (std::size_t k = 0; k < r.steps.size(); ++k)
    curve.push_back({{"step", r.steps[k]},
                     {"loss", number_or_null(r.loss_curve[k])},
                     {"train_loss", number_or_null(r.train_loss_curve[k])},
                     {"gate_ratios", r.mask_stats[k]}});
  json j{{"final_loss", number_or_null(r.final_loss)},
         {"loss_spikes", r.loss_spikes},
         {"diverged", r.diverged},
         {"checkpoints", std::move(curve)}};
  if (r.diverged) j["error"] = r.error;
  if (with_timing) j["wall_time_s"] = r.wall_time_s;
  return j;
}

inline json to_json(const analysis::CostReport& r) {
  return {{"layer_kind", analysis::to_string(r.layer_kind)},
          {"h", r.h},
          {"d", r.d},
          {"n_m", r.n_m},
          {"memory_load_bits", r.memory_load_bits},
          {"fp16_params", r.fp16_params},
          {"fp16_params_ffn", r.fp16_params_ffn},
          {"mask_param_bits", r.mask_param_bits},
          {"inference_flops", r.inference_flops},
          {"inference_flops_ffn", r.inference_flops_ffn},
          {"training_flops", r.training_flops},
          {"training_flops_ffn", r.training_flops_ffn},
          {"reduction_vs_glu", r.reduction_vs_glu}};
}

}  // namespace mglu::cli
