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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mglu/kernel.hpp"
#include "mglu/reference.hpp"
#include "tools/cli/verify.hpp"

namespace mglu::cli {

enum class BenchKind { naive, fused, glu_baseline };

constexpr std::string_view to_string(BenchKind k) {
  switch (k) {
    case BenchKind::naive: return "naive";
    case BenchKind::fused: return "fused";
    case BenchKind::glu_baseline: return "glu_baseline";
  }
  return "unknown";
}

struct BenchOptions {
  std::vector<Shape> shapes{{2048, 8192}};
  std::vector<std::size_t> masks{1, 2, 4, 8};
  std::size_t split_k = 1;
  std::size_t reps = 10;
  std::size_t warmup = 2;
  std::uint64_t seed = 1;
  bool double_precision = false;
  bool deterministic = true;
  unsigned threads = 0;
  bool include_naive = true;
};

struct BenchRecord {
  BenchKind kind = BenchKind::fused;
  std::size_t h = 0, d = 0, n_m = 0, split_k = 1, reps = 0, warmup_reps = 0;
  double median_ms = 0.0, p10_ms = 0.0, p90_ms = 0.0;
};

// Linear interpolation between closest ranks.
inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v.front();
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

template <class F>
BenchRecord time_case(F&& body, std::size_t reps, std::size_t warmup) {
  for (std::size_t i = 0; i < warmup; ++i) body();
  std::vector<double> ms;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    body();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  BenchRecord r;
  r.reps = reps;
  r.warmup_reps = warmup;
  r.median_ms = percentile(ms, 0.5);
  r.p10_ms = percentile(ms, 0.1);
  r.p90_ms = percentile(ms, 0.9);
  return r;
}

namespace detail {
// Keeps results observable so the timed calls are not optimized away.
inline volatile double bench_sink = 0.0;

template <class T>
std::vector<BenchRecord> bench_typed(const BenchOptions& o) {
  require(o.reps >= 1, Errc::invalid_argument, "reps must be >= 1");
  std::vector<BenchRecord> out;
  KernelConfig cfg;
  cfg.split_k = o.split_k;
  cfg.deterministic = o.deterministic;
  cfg.threads = o.threads;
  for (const auto& s : o.shapes) {
    std::mt19937_64 rng(o.seed);
    const auto w = random_normal<T>(s.h, s.d, rng, 1.0 / std::sqrt(static_cast<double>(s.h)));
    const auto w2 = random_normal<T>(s.h, s.d, rng, 1.0 / std::sqrt(static_cast<double>(s.h)));
    const auto x = random_normal_vector<T>(s.h, rng);
    auto stamp = [&](BenchRecord r, BenchKind k, std::size_t n_m) {
      r.kind = k;
      r.h = s.h;
      r.d = s.d;
      r.n_m = n_m;
      r.split_k = o.split_k;
      return r;
    };
    out.push_back(stamp(time_case([&] { bench_sink = reference::glu_forward<T>(x, w, w2, Activation::swish)[0]; },
                                  o.reps, o.warmup),
                        BenchKind::glu_baseline, 0));
    for (const std::size_t n_m : o.masks) {
      const PackedMasks packed = random_packed(n_m, s.h, s.d, rng);
      if (o.include_naive)
        out.push_back(stamp(
            time_case([&] { bench_sink = reference::mglu_forward_naive<T>(x, w, packed, Activation::swish)[0]; },
                      o.reps, o.warmup),
            BenchKind::naive, n_m));
      out.push_back(stamp(
          time_case([&] { bench_sink = mglu_forward_fused<T>(x, w, packed, Activation::swish, cfg)[0]; }, o.reps,
                    o.warmup),
          BenchKind::fused, n_m));
    }
  }
  return out;
}
}  // namespace detail

inline std::vector<BenchRecord> run_bench(const BenchOptions& o) {
  for (auto n : o.masks) check_mask_count(n);
  return o.double_precision ? detail::bench_typed<double>(o) : detail::bench_typed<float>(o);
}

inline std::optional<double> median_of(const std::vector<BenchRecord>& recs, BenchKind k, const Shape& s,
                                       std::size_t n_m) {
  for (const auto& r : recs)
    if (r.kind == k && r.h == s.h && r.d == s.d && r.n_m == n_m) return r.median_ms;
  return std::nullopt;
}

inline json to_json(const BenchRecord& r) {
  return {{"kind", to_string(r.kind)}, {"h", r.h},           {"d", r.d},
          {"n_m", r.n_m},              {"split_k", r.split_k}, {"reps", r.reps},
          {"warmup_reps", r.warmup_reps}, {"median_ms", r.median_ms}, {"p10_ms", r.p10_ms},
          {"p90_ms", r.p90_ms}};
}

// Per shape: naive and fused t(8)/t(1) and fused speed-up over naive at n_m=4,
// when those mask counts were measured.
inline json scaling_summary(const std::vector<BenchRecord>& recs, const std::vector<Shape>& shapes) {
  json out = json::array();
  for (const auto& s : shapes) {
    json row{{"h", s.h}, {"d", s.d}};
    auto ratio = [&](BenchKind k) -> json {
      const auto a = median_of(recs, k, s, 8), b = median_of(recs, k, s, 1);
      return a && b ? json(*a / *b) : json(nullptr);
    };
    row["naive_ratio_8_over_1"] = ratio(BenchKind::naive);
    row["fused_ratio_8_over_1"] = ratio(BenchKind::fused);
    const auto n4 = median_of(recs, BenchKind::naive, s, 4), f4 = median_of(recs, BenchKind::fused, s, 4);
    row["fused_speedup_at_4"] = n4 && f4 ? json(*n4 / *f4) : json(nullptr);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace mglu::cli
