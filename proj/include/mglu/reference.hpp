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
#include <bit>
#include <cstdint>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <type_traits>
#include <vector>

#include "mglu/activation.hpp"
#include "mglu/layer.hpp"
#include "mglu/masks.hpp"
#include "mglu/tensor.hpp"
#include "mglu/traffic.hpp"

// Straightforward forward passes for every layer variant. Each masked
// projection is its own full pass over W; nothing here is fused.
namespace mglu::reference {

enum class AblationVariant { no_gate_mask, no_value_mask, no_masks };

constexpr std::string_view to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::no_gate_mask: return "no_gate_mask";
    case AblationVariant::no_value_mask: return "no_value_mask";
    case AblationVariant::no_masks: return "no_masks";
  }
  return "unknown";
}

namespace detail {

template <class T>
void check_input(std::span<const T> x, const DenseMatrix<T>& w) {
  require(x.size() == w.rows(), Errc::dimension_mismatch,
          "input length " + std::to_string(x.size()) + " != W rows " + std::to_string(w.rows()));
}

template <class T>
void count_pass(TrafficReport* traffic, std::size_t h, std::size_t d, bool masked) {
  if (!traffic) return;
  const std::uint64_t hd = static_cast<std::uint64_t>(h) * d;
  traffic->weight_elements_read += hd;
  traffic->weight_bytes_read += hd * sizeof(T);
  if (masked) {
    traffic->mask_words_read += hd;
    traffic->mask_bytes_read += hd;
  }
  traffic->input_bytes_read += h * sizeof(T);
  traffic->output_bytes_written += d * sizeof(T);
}

}  // namespace detail

// y = x W for x of length h and W h x d, accumulated in ascending row order.
template <class T>
DenseVector<T> matvec(std::span<const T> x, const DenseMatrix<T>& w, TrafficReport* traffic = nullptr) {
  detail::check_input(x, w);
  DenseVector<T> y(w.cols(), T(0));
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const T xi = x[i];
    const T* row = w.row(i).data();
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += row[j] * xi;
  }
  detail::count_pass<T>(traffic, w.rows(), w.cols(), false);
  return y;
}

// y = x (M .* W) with keep == 1, or x ((1 - M) .* W) with keep == 0, where
// M is bit `bit` of each mask word.
template <class T, class Word>
DenseVector<T> masked_matvec_bits(std::span<const T> x, const DenseMatrix<T>& w, const Word* words, unsigned bit,
                                  unsigned keep, TrafficReport* traffic) {
  detail::check_input(x, w);
  DenseVector<T> y(w.cols(), T(0));
  T* __restrict yp = y.data();
  const std::size_t cols = w.cols();
  using Bits = std::conditional_t<sizeof(T) == 4, std::int32_t, std::int64_t>;
  const std::uint32_t flip = keep ? 0u : (1u << bit);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const T xi = x[i];
    const T* row = w.row(i).data();
    const Word* mrow = words + i * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      const T p = row[j] * xi;
      // all-ones or all-zeros; a cleared term contributes +0
      const Bits sel = -static_cast<Bits>(((static_cast<std::uint32_t>(mrow[j]) ^ flip) >> bit) & 1u);
      yp[j] += std::bit_cast<T>(static_cast<Bits>(std::bit_cast<Bits>(p) & sel));
    }
  }
  detail::count_pass<T>(traffic, w.rows(), w.cols(), true);
  if (traffic) traffic->mask_bytes_read += static_cast<std::uint64_t>(w.size()) * (sizeof(Word) - 1);
  return y;
}

template <class T>
DenseVector<T> masked_matvec(std::span<const T> x, const DenseMatrix<T>& w, const BinaryMask& mask, bool complement,
                             TrafficReport* traffic = nullptr) {
  require(mask.same_shape(w), Errc::dimension_mismatch, "mask dims differ from W");
  return masked_matvec_bits(x, w, mask.data(), 0, complement ? 0u : 1u, traffic);
}

template <class T>
DenseVector<T> glu_forward(std::span<const T> x, const DenseMatrix<T>& w_gate, const DenseMatrix<T>& w_value,
                           Activation kind, TrafficReport* traffic = nullptr) {
  require(w_gate.same_shape(w_value), Errc::dimension_mismatch, "gate and value weights differ in shape");
  auto gate = matvec(x, w_gate, traffic);
  const auto value = matvec(x, w_value, traffic);
  for (std::size_t j = 0; j < gate.size(); ++j) gate[j] = activate(kind, gate[j]) * value[j];
  return gate;
}

// Sum over masks of g(x (M_i .* W)) .* x ((1 - M_i) .* W), two full passes per mask.
template <class T>
DenseVector<T> mglu_forward_naive(std::span<const T> x, const DenseMatrix<T>& w, std::span<const BinaryMask> masks,
                                  Activation kind, TrafficReport* traffic = nullptr) {
  require(!masks.empty(), Errc::invalid_argument, "at least one mask is required");
  DenseVector<T> out(w.cols(), T(0));
  for (const auto& m : masks) {
    const auto gate = masked_matvec(x, w, m, false, traffic);
    const auto value = masked_matvec(x, w, m, true, traffic);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += activate(kind, gate[j]) * value[j];
  }
  return out;
}

// Same computation reading mask i straight out of the packed words.
template <class T>
DenseVector<T> mglu_forward_naive(std::span<const T> x, const DenseMatrix<T>& w, const PackedMasks& packed,
                                  Activation kind, TrafficReport* traffic = nullptr) {
  require(packed.rows() == w.rows() && packed.cols() == w.cols(), Errc::dimension_mismatch,
          "packed mask dims differ from W");
  DenseVector<T> out(w.cols(), T(0));
  std::visit(
      [&](const auto& words) {
        for (unsigned b = 0; b < packed.n_m(); ++b) {
          const auto gate = masked_matvec_bits(x, w, words.data(), b, 1u, traffic);
          const auto value = masked_matvec_bits(x, w, words.data(), b, 0u, traffic);
          for (std::size_t j = 0; j < out.size(); ++j) out[j] += activate(kind, gate[j]) * value[j];
        }
      },
      packed.words());
  return out;
}

template <class T>
DenseVector<T> mglu_ablation_forward(std::span<const T> x, const DenseMatrix<T>& w, const BinaryMask& mask,
                                     AblationVariant variant, Activation kind, TrafficReport* traffic = nullptr) {
  require(mask.same_shape(w), Errc::dimension_mismatch, "mask dims differ from W");
  DenseVector<T> gate;
  DenseVector<T> value;
  switch (variant) {
    case AblationVariant::no_gate_mask:
      gate = matvec(x, w, traffic);
      value = masked_matvec(x, w, mask, true, traffic);
      break;
    case AblationVariant::no_value_mask:
      gate = masked_matvec(x, w, mask, false, traffic);
      value = matvec(x, w, traffic);
      break;
    case AblationVariant::no_masks:
      gate = matvec(x, w, traffic);
      value = gate;
      break;
  }
  for (std::size_t j = 0; j < gate.size(); ++j) gate[j] = activate(kind, gate[j]) * value[j];
  return gate;
}

// Indices of the K largest logits; equal logits resolve to the lower index.
template <class T>
std::vector<std::size_t> topk_indices(std::span<const T> logits, std::size_t k) {
  require(k >= 1 && k <= logits.size(), Errc::out_of_range,
          "K=" + std::to_string(k) + " outside 1.." + std::to_string(logits.size()));
  std::vector<std::size_t> idx(logits.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Softmax restricted to the selected logits; every other weight is exactly 0.
template <class T>
DenseVector<T> topk_softmax(std::span<const T> logits, std::size_t k) {
  const auto sel = topk_indices(logits, k);
  T peak = logits[sel.front()];
  for (auto i : sel) peak = std::max(peak, logits[i]);
  DenseVector<T> g(logits.size(), T(0));
  T total = T(0);
  for (auto i : sel) total += g[i] = std::exp(logits[i] - peak);
  for (auto i : sel) g[i] /= total;
  return g;
}

template <class T>
DenseVector<T> router_logits(std::span<const T> x, const DenseMatrix<T>& w_router) {
  return matvec(x, w_router);
}

template <class T>
DenseVector<T> topk_gate(std::span<const T> x, const DenseMatrix<T>& w_router, std::size_t k) {
  const auto logits = router_logits(x, w_router);
  return topk_softmax<T>(logits, k);
}

// Sum over masks of G(x)_i g(x (M_i .* W)) .* x ((1 - M_i) .* W); masks with
// zero routing weight are skipped entirely.
template <class T>
DenseVector<T> mglu_topk_forward(std::span<const T> x, const MgluLayer<T>& layer, std::size_t k,
                                 TrafficReport* traffic = nullptr) {
  if (!layer.router) throw Error(Errc::missing_router, "top-K forward needs a router");
  const auto weights = topk_gate(x, layer.router->weight, k);
  const auto masks = layer.hard_masks();
  DenseVector<T> out(layer.d(), T(0));
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (weights[i] == T(0)) continue;
    const auto gate = masked_matvec(x, layer.weight, masks[i], false, traffic);
    const auto value = masked_matvec(x, layer.weight, masks[i], true, traffic);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += weights[i] * (activate(layer.activation, gate[j]) * value[j]);
  }
  return out;
}

template <class T>
DenseVector<T> mglu_topk_forward(std::span<const T> x, const MgluLayer<T>& layer, TrafficReport* traffic = nullptr) {
  if (!layer.router) throw Error(Errc::missing_router, "top-K forward needs a router");
  return mglu_topk_forward(x, layer, layer.router->top_k, traffic);
}

template <class T>
DenseVector<T> mglu_forward_naive(std::span<const T> x, const MgluLayer<T>& layer, TrafficReport* traffic = nullptr) {
  const auto masks = layer.hard_masks();
  return mglu_forward_naive<T>(x, layer.weight, masks, layer.activation, traffic);
}

// y W_o with W_o d x h; no bias.
template <class T>
DenseVector<T> output_projection(std::span<const T> y, const MgluLayer<T>& layer) {
  if (!layer.output_proj) throw Error(Errc::missing_output_projection, "layer has no W_o");
  return matvec(y, *layer.output_proj);
}

template <class T>
DenseVector<T> ffn_forward(std::span<const T> x, const MgluLayer<T>& layer) {
  if (!layer.output_proj) throw Error(Errc::missing_output_projection, "layer has no W_o");
  const auto y = layer.router ? mglu_topk_forward(x, layer) : mglu_forward_naive(x, layer);
  return output_projection<T>(y, layer);
}

}  // namespace mglu::reference
