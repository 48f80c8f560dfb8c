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

#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mglu/error.hpp"

namespace mglu::analysis {

enum class LayerKind { lu, glu, mglu };
enum class Phase { inference, training };
// intermediate: the up/gate projections only. ffn_total: plus the output
// projection W_o.
enum class FlopView { intermediate, ffn_total };

constexpr std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::lu: return "lu";
    case LayerKind::glu: return "glu";
    case LayerKind::mglu: return "mglu";
  }
  return "unknown";
}

constexpr std::string_view to_string(Phase p) { return p == Phase::inference ? "inference" : "training"; }
constexpr std::string_view to_string(FlopView v) { return v == FlopView::intermediate ? "intermediate" : "ffn_total"; }

namespace detail {
inline std::uint64_t masks_for(LayerKind kind, std::optional<std::uint64_t> n_m) {
  if (kind == LayerKind::mglu) {
    require(n_m.has_value(), Errc::invalid_argument, "mglu costs need a mask count");
    return *n_m;
  }
  require(!n_m.has_value(), Errc::invalid_argument, "mask count only applies to mglu");
  return 0;
}

inline void check_dims(std::uint64_t h, std::uint64_t d) {
  require(h >= 1 && d >= 1, Errc::invalid_argument, "h and d must be positive");
}
}  // namespace detail

// Bits read per token by the intermediate layer with weights stored at
// `storage_bits`: lu 1 matrix, glu 2, mglu 1 plus one bit per mask.
inline std::uint64_t memory_load_bits(LayerKind kind, std::uint64_t h, std::uint64_t d,
                                      std::optional<std::uint64_t> n_m = std::nullopt,
                                      std::uint64_t storage_bits = 16) {
  detail::check_dims(h, d);
  const std::uint64_t m = detail::masks_for(kind, n_m);
  const std::uint64_t hd = h * d;
  switch (kind) {
    case LayerKind::lu: return storage_bits * hd;
    case LayerKind::glu: return 2 * storage_bits * hd;
    case LayerKind::mglu: return (storage_bits + m) * hd;
  }
  return 0;
}

inline double reduction_vs_glu(std::uint64_t bits, std::uint64_t glu_bits) {
  return 1.0 - static_cast<double>(bits) / static_cast<double>(glu_bits);
}

struct ParamCounts {
  std::uint64_t fp16_params = 0;
  std::uint64_t mask_bits = 0;
  friend bool operator==(const ParamCounts&, const ParamCounts&) = default;
};

// Real-valued weights and mask bits. With `with_output_proj` every kind gains
// the h x d matrix W_o, so glu totals 3hd.
inline ParamCounts param_counts(LayerKind kind, std::uint64_t h, std::uint64_t d,
                                std::optional<std::uint64_t> n_m = std::nullopt, bool with_output_proj = false) {
  detail::check_dims(h, d);
  const std::uint64_t m = detail::masks_for(kind, n_m);
  const std::uint64_t hd = h * d;
  ParamCounts c;
  c.fp16_params = (kind == LayerKind::glu ? 2 : 1) * hd + (with_output_proj ? hd : 0);
  c.mask_bits = m * hd;
  return c;
}

// Multiply-add operations per token. Inference intermediate: lu 2hd, glu 4hd,
// mglu 2(1+n_m)hd. Training intermediate: lu 6hd, glu 12hd, mglu (6+8n_m)hd.
// The FFN total adds 2hd (inference) or 6hd (training) for W_o.
inline std::uint64_t flops_per_token(LayerKind kind, std::uint64_t h, std::uint64_t d,
                                     std::optional<std::uint64_t> n_m, Phase phase,
                                     FlopView view = FlopView::intermediate) {
  detail::check_dims(h, d);
  const std::uint64_t m = detail::masks_for(kind, n_m);
  const std::uint64_t hd = h * d;
  std::uint64_t per_hd = 0;
  if (phase == Phase::inference) {
    switch (kind) {
      case LayerKind::lu: per_hd = 2; break;
      case LayerKind::glu: per_hd = 4; break;
      case LayerKind::mglu: per_hd = 2 * (1 + m); break;
    }
    if (view == FlopView::ffn_total) per_hd += 2;
  } else {
    switch (kind) {
      case LayerKind::lu: per_hd = 6; break;
      case LayerKind::glu: per_hd = 12; break;
      case LayerKind::mglu: per_hd = 6 + 8 * m; break;
    }
    if (view == FlopView::ffn_total) per_hd += 6;
  }
  return per_hd * hd;
}

struct CostReport {
  LayerKind layer_kind = LayerKind::mglu;
  std::uint64_t h = 0;
  std::uint64_t d = 0;
  std::uint64_t n_m = 0;
  std::uint64_t memory_load_bits = 0;
  std::uint64_t fp16_params = 0;       // intermediate weights
  std::uint64_t fp16_params_ffn = 0;   // with W_o
  std::uint64_t mask_param_bits = 0;
  std::uint64_t inference_flops = 0;   // intermediate view
  std::uint64_t inference_flops_ffn = 0;
  std::uint64_t training_flops = 0;    // intermediate view
  std::uint64_t training_flops_ffn = 0;
  double reduction_vs_glu = 0.0;

  friend bool operator==(const CostReport&, const CostReport&) = default;
};

inline CostReport cost_report(LayerKind kind, std::uint64_t h, std::uint64_t d,
                              std::optional<std::uint64_t> n_m = std::nullopt) {
  CostReport r;
  r.layer_kind = kind;
  r.h = h;
  r.d = d;
  r.n_m = kind == LayerKind::mglu && n_m ? *n_m : 0;
  r.memory_load_bits = memory_load_bits(kind, h, d, n_m);
  const auto p = param_counts(kind, h, d, n_m, false);
  r.fp16_params = p.fp16_params;
  r.mask_param_bits = p.mask_bits;
  r.fp16_params_ffn = param_counts(kind, h, d, n_m, true).fp16_params;
  r.inference_flops = flops_per_token(kind, h, d, n_m, Phase::inference, FlopView::intermediate);
  r.inference_flops_ffn = flops_per_token(kind, h, d, n_m, Phase::inference, FlopView::ffn_total);
  r.training_flops = flops_per_token(kind, h, d, n_m, Phase::training, FlopView::intermediate);
  r.training_flops_ffn = flops_per_token(kind, h, d, n_m, Phase::training, FlopView::ffn_total);
  r.reduction_vs_glu = reduction_vs_glu(r.memory_load_bits, memory_load_bits(LayerKind::glu, h, d));
  return r;
}

// lu, glu, then one mglu row per mask count.
inline std::vector<CostReport> cost_table(std::uint64_t h, std::uint64_t d, std::span<const std::uint64_t> mask_counts) {
  std::vector<CostReport> rows{cost_report(LayerKind::lu, h, d), cost_report(LayerKind::glu, h, d)};
  for (auto m : mask_counts) rows.push_back(cost_report(LayerKind::mglu, h, d, m));
  return rows;
}

// Costs divided by h*d, the form the formulas are usually quoted in.
inline std::string format_cost_table(std::span<const CostReport> rows) {
  std::ostringstream os;
  auto per_hd = [](std::uint64_t v, const CostReport& r) { return std::to_string(v / (r.h * r.d)) + "hd"; };
  os << std::left << std::setw(6) << "kind" << std::right << std::setw(6) << "h" << std::setw(7) << "d"
     << std::setw(5) << "n_m" << std::setw(10) << "mem_bits" << std::setw(10) << "params" << std::setw(10)
     << "mask_bits" << std::setw(10) << "inf" << std::setw(10) << "inf_ffn" << std::setw(10) << "train"
     << std::setw(11) << "train_ffn" << std::setw(11) << "reduction" << '\n';
  for (const auto& r : rows) {
    std::ostringstream red;
    red << std::fixed << std::setprecision(3) << 100.0 * r.reduction_vs_glu << '%';
    os << std::left << std::setw(6) << to_string(r.layer_kind) << std::right << std::setw(6) << r.h << std::setw(7)
       << r.d << std::setw(5) << r.n_m << std::setw(10) << per_hd(r.memory_load_bits, r) << std::setw(10)
       << per_hd(r.fp16_params, r) << std::setw(10) << per_hd(r.mask_param_bits, r) << std::setw(10)
       << per_hd(r.inference_flops, r) << std::setw(10) << per_hd(r.inference_flops_ffn, r) << std::setw(10)
       << per_hd(r.training_flops, r) << std::setw(11) << per_hd(r.training_flops_ffn, r) << std::setw(11)
       << red.str() << '\n';
  }
  return os.str();
}

}  // namespace mglu::analysis
