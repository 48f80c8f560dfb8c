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
#include <optional>
#include <random>
#include <variant>
#include <vector>

#include "mglu/activation.hpp"
#include "mglu/masks.hpp"
#include "mglu/tensor.hpp"

namespace mglu {

// Top-K router: logits = x * weight, weight is h x n_m.
template <class T>
struct Router {
  DenseMatrix<T> weight;
  std::size_t top_k = 1;

  friend bool operator==(const Router&, const Router&) = default;
};

// Masked GLU layer over a shared weight W (h x d). Masks are either trainable
// logits or, for inference-only layers, already packed hard masks.
template <class T>
struct MgluLayer {
  DenseMatrix<T> weight;
  std::variant<MaskLogits<T>, PackedMasks> masks;
  Activation activation = Activation::swish;
  std::optional<DenseMatrix<T>> output_proj;  // d x h
  std::optional<Router<T>> router;

  std::size_t h() const noexcept { return weight.rows(); }
  std::size_t d() const noexcept { return weight.cols(); }

  std::size_t n_m() const noexcept {
    return std::visit([](const auto& m) { return m.n_m(); }, masks);
  }

  bool has_logits() const noexcept { return std::holds_alternative<MaskLogits<T>>(masks); }
  const MaskLogits<T>& logits() const { return std::get<MaskLogits<T>>(masks); }
  MaskLogits<T>& logits() { return std::get<MaskLogits<T>>(masks); }

  std::vector<BinaryMask> hard_masks() const {
    if (has_logits()) return ste_binarize(logits());
    return unpack_masks(std::get<PackedMasks>(masks));
  }

  PackedMasks packed_masks() const {
    if (has_logits()) {
      auto hard = ste_binarize(logits());
      return pack_masks(hard);
    }
    return std::get<PackedMasks>(masks);
  }

  void validate() const {
    require(weight.all_finite(), Errc::non_finite, "layer weight must be finite");
    std::visit(
        [&](const auto& m) {
          require(m.rows() == h() && m.cols() == d(), Errc::dimension_mismatch, "mask dims differ from W");
        },
        masks);
    if (output_proj)
      require(output_proj->rows() == d() && output_proj->cols() == h(), Errc::dimension_mismatch,
              "output projection must be d x h");
    if (router) {
      require(router->weight.rows() == h() && router->weight.cols() == n_m(), Errc::dimension_mismatch,
              "router weight must be h x n_m");
      require(router->top_k >= 1 && router->top_k <= n_m(), Errc::out_of_range, "router K outside 1..n_m");
    }
  }

  friend bool operator==(const MgluLayer&, const MgluLayer&) = default;
};

struct LayerInit {
  bool output_proj = false;
  std::optional<std::size_t> router_k;
  double weight_std = 0.0;  // 0 selects 1/sqrt(h)
  double logit_std = 0.01;
};

template <class T, class Rng>
MgluLayer<T> make_random_layer(std::size_t h, std::size_t d, std::size_t n_m, Activation act, Rng& rng,
                               const LayerInit& init = {}) {
  const double wstd = init.weight_std > 0.0 ? init.weight_std : 1.0 / std::sqrt(static_cast<double>(h));
  MgluLayer<T> layer;
  layer.weight = random_normal<T>(h, d, rng, wstd);
  layer.masks = init_mask_logits<T>(n_m, h, d, rng, init.logit_std);
  layer.activation = act;
  if (init.output_proj) layer.output_proj = random_normal<T>(d, h, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  if (init.router_k)
    layer.router = Router<T>{random_normal<T>(h, n_m, rng, wstd), *init.router_k};
  layer.validate();
  return layer;
}

}  // namespace mglu
