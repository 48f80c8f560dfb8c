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

#include <charconv>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mglu/autograd.hpp"
#include "mglu/kernel.hpp"
#include "mglu/masks.hpp"
#include "mglu/reference.hpp"

namespace mglu::cli {

using nlohmann::json;

struct Shape {
  std::size_t h = 0;
  std::size_t d = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

// "8x16,64x256"; 'X' and the multiplication sign also separate h from d.
inline std::vector<Shape> parse_shapes(const std::string& text) {
  std::vector<Shape> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    std::string item = text.substr(pos, comma - pos);
    for (const std::string sep : {"\xC3\x97", "X"}) {
      for (std::size_t f = item.find(sep); f != std::string::npos; f = item.find(sep)) item.replace(f, sep.size(), "x");
    }
    const std::size_t x = item.find('x');
    require(x != std::string::npos && x > 0 && x + 1 < item.size(), Errc::invalid_argument,
            "shape '" + item + "' is not of the form HxD");
    auto number = [&](std::string_view part) {
      std::size_t v = 0;
      const auto [end, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
      require(ec == std::errc{} && end == part.data() + part.size() && v > 0, Errc::invalid_argument,
              "shape '" + item + "' is not of the form HxD");
      return v;
    };
    const std::string_view view(item);
    const Shape s{number(view.substr(0, x)), number(view.substr(x + 1))};
    out.push_back(s);
    pos = comma + 1;
  }
  return out;
}

enum class Fault { none, mask, grad };

struct VerifyOptions {
  std::vector<Shape> shapes{{8, 16}, {64, 256}, {768, 3072}};
  std::vector<std::size_t> masks{1, 2, 4, 8, 16};
  std::uint64_t seed = 1;
  std::size_t seeds = 1;
  std::size_t split_k = 4;
  bool double_precision = false;
  bool deterministic = true;
  unsigned threads = 0;
  bool gradients = true;
  Fault fault = Fault::none;
};

struct VerifyCase {
  std::string suite;
  std::string name;
  double metric = 0.0;
  double threshold = 0.0;
  bool pass = true;
  std::string detail;
};

struct VerifyReport {
  std::vector<VerifyCase> cases;
  std::size_t failed() const {
    std::size_t n = 0;
    for (const auto& c : cases) n += !c.pass;
    return n;
  }
  bool pass() const { return failed() == 0; }
};

// Random Bernoulli(0.5) masks straight into packed words.
inline PackedMasks random_packed(std::size_t n_m, std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const std::uint32_t keep = (1u << n_m) - 1u;
  auto fill = [&](auto& words) {
    for (std::size_t k = 0; k < words.size(); k += 4) {
      const std::uint64_t bits = rng();
      for (std::size_t q = 0; q < 4 && k + q < words.size(); ++q)
        words[k + q] = static_cast<std::remove_reference_t<decltype(words[0])>>((bits >> (16 * q)) & keep);
    }
  };
  if (n_m <= 8) {
    PackedMasks::Narrow w(rows * cols);
    fill(w);
    return PackedMasks(n_m, rows, cols, std::move(w));
  }
  PackedMasks::Wide w(rows * cols);
  fill(w);
  return PackedMasks(n_m, rows, cols, std::move(w));
}

inline void flip_first_bit(PackedMasks& p) {
  std::visit([](auto& w) { w[0] ^= 1u; }, p.words());
}

namespace detail {

template <class T>
constexpr double fused_tolerance() {
  return std::is_same_v<T, double> ? 1e-10 : 1e-4;
}

inline std::string case_name(const Shape& s, std::size_t n_m, std::uint64_t seed) {
  return std::to_string(s.h) + "x" + std::to_string(s.d) + "/n_m=" + std::to_string(n_m) + "/seed=" +
         std::to_string(seed);
}

inline std::string hex_bits(double v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
  return buf;
}

template <class T>
void kernel_suites(const VerifyOptions& o, VerifyReport& rep) {
  KernelConfig cfg;
  cfg.deterministic = o.deterministic;
  cfg.threads = o.threads;
  bool fault_pending = o.fault == Fault::mask;
  for (const auto& shape : o.shapes) {
    for (std::size_t s = 0; s < o.seeds; ++s) {
      const std::uint64_t seed = o.seed + s;
      std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + shape.h * 131 + shape.d);
      const auto w = random_normal<T>(shape.h, shape.d, rng, 1.0 / std::sqrt(static_cast<double>(shape.h)));
      const auto x = random_normal_vector<T>(shape.h, rng);
      const auto t_ref = reference::matvec<T>(x, w);
      for (const std::size_t n_m : o.masks) {
        const std::string name = case_name(shape, n_m, seed);
        const PackedMasks packed = random_packed(n_m, shape.h, shape.d, rng);
        PackedMasks used = packed;
        if (fault_pending) {
          flip_first_bit(used);
          fault_pending = false;
        }

        KernelConfig c1 = cfg;
        c1.split_k = 1;
        const auto z = fused_masked_matvec_transposed<T>(w, x, used, c1);
        const auto fused = combine_partials(z, Activation::swish);
        const auto naive = reference::mglu_forward_naive<T>(x, w, packed, Activation::swish);
        const double err = max_relative_error<T, T>(fused, naive);
        rep.cases.push_back({"fused_vs_naive", name, err, fused_tolerance<T>(), err <= fused_tolerance<T>(), ""});

        // gate + value against an independent unmasked matvec.
        double comp = 0.0;
        bool exact = true;
        for (std::size_t i = 0; i < n_m; ++i) {
          std::vector<T> sum(shape.d);
          for (std::size_t r = 0; r < shape.d; ++r) {
            sum[r] = z.gate(i, r) + z.value(i, r);
            exact = exact && z.value(i, r) == z.total[r] - z.gate(i, r);
          }
          comp = std::max(comp, max_relative_error<T, T>(sum, t_ref));
        }
        const bool total_exact = z.total == t_ref;
        VerifyCase cc{"complementarity", name, comp, 1e-6, comp <= 1e-6, ""};
        if (std::is_same_v<T, double> && o.deterministic) {
          cc.pass = cc.pass && exact && total_exact;
          cc.detail = std::string("value==total-gate:") + (exact ? "yes" : "no") +
                      " total==oracle:" + (total_exact ? "yes" : "no");
        }
        rep.cases.push_back(cc);

        // Split-K invariance against split_k = 1.
        double split_err = 0.0;
        bool identical = true;
        for (std::size_t k : {std::size_t{2}, std::size_t{4}, o.split_k}) {
          if (k > shape.h || k == 1) continue;
          KernelConfig ck = cfg;
          ck.split_k = k;
          const auto zk = fused_masked_matvec_transposed<T>(w, x, used, ck);
          identical = identical && zk == z;
          split_err = std::max(split_err, max_relative_error<T, T>(combine_partials(zk, Activation::swish), fused));
        }
        const double split_tol = std::is_same_v<T, double> ? 1e-12 : 1e-5;
        VerifyCase sc{"split_k_invariance", name, split_err, split_tol, split_err <= split_tol, ""};
        if (o.deterministic) {
          sc.threshold = 0.0;
          sc.pass = identical;
          sc.detail = identical ? "bit-identical" : "differs";
        }
        rep.cases.push_back(sc);
      }
    }
  }
}

inline void pack_suite(const VerifyOptions& o, VerifyReport& rep) {
  std::mt19937_64 rng(o.seed);
  for (const std::size_t n_m : o.masks) {
    std::vector<BinaryMask> masks;
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < n_m; ++i) {
      BinaryMask m(13, 29);
      for (auto& v : m.values()) v = coin(rng) ? 1 : 0;
      masks.push_back(std::move(m));
    }
    PackedMasks p = pack_masks(masks);
    const bool round = unpack_masks(p) == masks && pack_masks(unpack_masks(p)) == p;
    const bool width = p.word_bits() == (n_m <= 8 ? 8u : 16u);
    rep.cases.push_back({"pack_round_trip", "n_m=" + std::to_string(n_m), round && width ? 0.0 : 1.0, 0.0,
                         round && width, "word_bits=" + std::to_string(p.word_bits())});
  }
}

template <class T>
void gradient_suite(const VerifyOptions& o, VerifyReport& rep) {
  bool fault_pending = o.fault == Fault::grad;
  for (auto act : {Activation::identity, Activation::relu, Activation::swish, Activation::gelu}) {
    for (std::size_t n_m : {1u, 2u, 4u}) {
      std::mt19937_64 rng(o.seed * 1000 + n_m * 10 + static_cast<unsigned>(act));
      LayerInit init;
      init.output_proj = true;
      const auto layer = make_random_layer<T>(6, 10, n_m, act, rng, init);
      std::function<void(GradBundle<T>&)> tamper;
      if (fault_pending) {
        tamper = [](GradBundle<T>& g) { g.d_W(0, 0) += T(1e-2); };
        fault_pending = false;
      }
      const auto r = check_gradients<T>(layer, o.seed + n_m, {}, tamper);
      double worst = 0.0;
      std::string failed;
      for (const auto& b : r.blocks) {
        worst = std::max(worst, b.max_rel);
        if (!b.pass) failed += (failed.empty() ? "" : ",") + b.block;
      }
      rep.cases.push_back({"gradients", std::string(to_string(act)) + "/n_m=" + std::to_string(n_m), worst,
                           r.tolerance, r.pass, failed.empty() ? "" : "failing blocks: " + failed});
    }
  }
}

}  // namespace detail

inline VerifyReport run_verify(const VerifyOptions& o) {
  VerifyReport rep;
  for (auto n : o.masks) check_mask_count(n);
  if (o.double_precision) detail::kernel_suites<double>(o, rep);
  else detail::kernel_suites<float>(o, rep);
  detail::pack_suite(o, rep);
  if (o.gradients) {
    if (o.double_precision) detail::gradient_suite<double>(o, rep);
    else detail::gradient_suite<float>(o, rep);
  }
  return rep;
}

inline json to_json(const VerifyCase& c) {
  json j{{"suite", c.suite}, {"name", c.name}, {"metric", c.metric}, {"threshold", c.threshold}, {"pass", c.pass}};
  if (!c.detail.empty()) j["detail"] = c.detail;
  return j;
}

inline json to_json(const VerifyReport& r) {
  json cases = json::array();
  json failures = json::array();
  for (const auto& c : r.cases) {
    cases.push_back(to_json(c));
    if (!c.pass) failures.push_back(c.suite + ":" + c.name);
  }
  return {{"cases", std::move(cases)},
          {"summary", {{"total", r.cases.size()}, {"failed", r.failed()}, {"failures", std::move(failures)}}},
          {"pass", r.pass()}};
}

}  // namespace mglu::cli
