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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string_view>

#include "mglu/tensor.hpp"

namespace mglu {

// Numeric values are the on-disk activation codes.
enum class Activation : std::uint8_t { identity = 0, relu = 1, gelu = 2, swish = 3, sigmoid = 4 };

constexpr std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::swish: return "swish";
    case Activation::sigmoid: return "sigmoid";
  }
  return "unknown";
}

inline std::optional<Activation> parse_activation(std::string_view s) {
  for (auto a : {Activation::identity, Activation::relu, Activation::gelu, Activation::swish,
                 Activation::sigmoid})
    if (to_string(a) == s) return a;
  return std::nullopt;
}

constexpr bool valid_activation_code(std::uint8_t code) { return code <= 4; }

template <class T>
inline T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

// GELU uses the exact Gaussian CDF, x * Phi(x), not the tanh approximation.
template <class T>
inline T activate(Activation kind, T z) {
  switch (kind) {
    case Activation::identity: return z;
    case Activation::relu: return z > T(0) ? z : T(0);
    case Activation::gelu: return z * T(0.5) * (T(1) + std::erf(z / std::numbers::sqrt2_v<T>));
    case Activation::swish: return z * sigmoid(z);
    case Activation::sigmoid: return sigmoid(z);
  }
  return z;
}

// relu'(0) is taken as 0.
template <class T>
inline T activate_derivative(Activation kind, T z) {
  switch (kind) {
    case Activation::identity: return T(1);
    case Activation::relu: return z > T(0) ? T(1) : T(0);
    case Activation::gelu: {
      const T cdf = T(0.5) * (T(1) + std::erf(z / std::numbers::sqrt2_v<T>));
      const T pdf = std::exp(T(-0.5) * z * z) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
      return cdf + z * pdf;
    }
    case Activation::swish: {
      const T s = sigmoid(z);
      return s * (T(1) + z * (T(1) - s));
    }
    case Activation::sigmoid: {
      const T s = sigmoid(z);
      return s * (T(1) - s);
    }
  }
  return T(1);
}

template <class T>
DenseVector<T> activation(Activation kind, std::span<const T> v) {
  DenseVector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = activate(kind, v[i]);
  return out;
}

}  // namespace mglu
