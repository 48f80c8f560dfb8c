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
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mglu/tensor.hpp"

namespace mglu {

inline constexpr std::size_t kMaxMasks = 16;

inline void check_mask_count(std::size_t n_m) {
  require(n_m >= 1 && n_m <= kMaxMasks, Errc::out_of_range,
          "mask count " + std::to_string(n_m) + " outside 1..16");
}

// One real-valued logit matrix per mask, each shaped like W.
template <class T>
class MaskLogits {
 public:
  MaskLogits() = default;
  explicit MaskLogits(std::vector<DenseMatrix<T>> logits) : logits_(std::move(logits)) {
    check_mask_count(logits_.size());
    for (const auto& m : logits_)
      require(m.same_shape(logits_.front()), Errc::dimension_mismatch, "mask logits differ in shape");
  }
  MaskLogits(std::size_t n_m, std::size_t rows, std::size_t cols, T fill = T{})
      : MaskLogits(std::vector<DenseMatrix<T>>(n_m, DenseMatrix<T>(rows, cols, fill))) {}

  std::size_t n_m() const noexcept { return logits_.size(); }
  std::size_t rows() const noexcept { return logits_.empty() ? 0 : logits_.front().rows(); }
  std::size_t cols() const noexcept { return logits_.empty() ? 0 : logits_.front().cols(); }

  DenseMatrix<T>& operator[](std::size_t i) noexcept { return logits_[i]; }
  const DenseMatrix<T>& operator[](std::size_t i) const noexcept { return logits_[i]; }
  std::span<DenseMatrix<T>> masks() noexcept { return logits_; }
  std::span<const DenseMatrix<T>> masks() const noexcept { return logits_; }

  friend bool operator==(const MaskLogits&, const MaskLogits&) = default;

 private:
  std::vector<DenseMatrix<T>> logits_;
};

// Logits drawn as std * N(0, 1), the usual init for learned masks.
template <class T, class Rng>
MaskLogits<T> init_mask_logits(std::size_t n_m, std::size_t rows, std::size_t cols, Rng& rng,
                               double stddev = 0.01) {
  check_mask_count(n_m);
  std::vector<DenseMatrix<T>> out;
  out.reserve(n_m);
  for (std::size_t i = 0; i < n_m; ++i) out.push_back(random_normal<T>(rows, cols, rng, stddev));
  return MaskLogits<T>(std::move(out));
}

// Bernoulli(0.5) hard masks encoded as +-stddev logits, for frozen-mask runs.
template <class T, class Rng>
MaskLogits<T> fixed_bernoulli_logits(std::size_t n_m, std::size_t rows, std::size_t cols, Rng& rng,
                                     double magnitude = 0.01) {
  check_mask_count(n_m);
  std::bernoulli_distribution coin(0.5);
  std::vector<DenseMatrix<T>> out;
  for (std::size_t i = 0; i < n_m; ++i) {
    DenseMatrix<T> m(rows, cols);
    for (auto& v : m.values()) v = static_cast<T>(coin(rng) ? magnitude : -magnitude);
    out.push_back(std::move(m));
  }
  return MaskLogits<T>(std::move(out));
}

// Hard mask: 1 iff logit > 0. A logit of exactly zero maps to 0.
template <class T>
BinaryMask ste_binarize(const DenseMatrix<T>& logits) {
  require(logits.all_finite(), Errc::non_finite, "mask logits must be finite");
  BinaryMask out(logits.rows(), logits.cols());
  auto src = logits.values();
  auto dst = out.values();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k] = src[k] > T(0) ? 1 : 0;
  return out;
}

template <class T>
std::vector<BinaryMask> ste_binarize(const MaskLogits<T>& logits) {
  std::vector<BinaryMask> out;
  out.reserve(logits.n_m());
  for (const auto& m : logits.masks()) out.push_back(ste_binarize(m));
  return out;
}

// n_m binary masks packed into one word per element, mask i (0-based) in bit i.
// Words are 8 bits wide for up to 8 masks and 16 bits beyond that.
class PackedMasks {
 public:
  using Narrow = std::vector<std::uint8_t>;
  using Wide = std::vector<std::uint16_t>;

  PackedMasks() = default;

  // Takes ownership of raw words; the width must match n_m. Does not validate
  // the high bits, use validate() for that.
  PackedMasks(std::size_t n_m, std::size_t rows, std::size_t cols, std::variant<Narrow, Wide> words)
      : n_m_(n_m), rows_(rows), cols_(cols), words_(std::move(words)) {
    check_mask_count(n_m);
    require(std::holds_alternative<Narrow>(words_) == (n_m <= 8), Errc::invalid_argument,
            "packed word width does not match mask count");
    require(size() == rows * cols, Errc::dimension_mismatch, "packed word count != rows*cols");
  }

  static unsigned word_bits_for(std::size_t n_m) noexcept { return n_m <= 8 ? 8u : 16u; }

  std::size_t n_m() const noexcept { return n_m_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  unsigned word_bits() const noexcept { return std::holds_alternative<Narrow>(words_) ? 8u : 16u; }
  std::size_t word_bytes() const noexcept { return word_bits() / 8; }
  std::size_t size() const noexcept {
    return std::visit([](const auto& w) { return w.size(); }, words_);
  }

  std::uint16_t word(std::size_t r, std::size_t c) const noexcept {
    return std::visit([&](const auto& w) { return static_cast<std::uint16_t>(w[r * cols_ + c]); }, words_);
  }

  const std::variant<Narrow, Wide>& words() const noexcept { return words_; }
  std::variant<Narrow, Wide>& words() noexcept { return words_; }

  std::uint16_t unused_bits() const noexcept {
    return static_cast<std::uint16_t>(~((1u << n_m_) - 1u) & 0xFFFFu);
  }

  void validate() const {
    const std::uint16_t bad = unused_bits();
    std::visit(
        [&](const auto& w) {
          for (std::size_t k = 0; k < w.size(); ++k)
            if (w[k] & bad)
              throw Error(Errc::high_bit_contamination,
                          "word " + std::to_string(k) + " has bits set at or above n_m=" + std::to_string(n_m_));
        },
        words_);
  }

  friend bool operator==(const PackedMasks&, const PackedMasks&) = default;

 private:
  std::size_t n_m_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::variant<Narrow, Wide> words_;
};

namespace detail {
template <class Word>
std::vector<Word> pack_words(std::span<const BinaryMask> masks) {
  const std::size_t n = masks.front().size();
  std::vector<Word> out(n, 0);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    auto m = masks[i].values();
    for (std::size_t k = 0; k < n; ++k) {
      require(m[k] <= 1, Errc::invalid_argument, "mask entries must be 0 or 1");
      out[k] = static_cast<Word>(out[k] | (static_cast<unsigned>(m[k]) << i));
    }
  }
  return out;
}
}  // namespace detail

inline PackedMasks pack_masks(std::span<const BinaryMask> masks) {
  check_mask_count(masks.size());
  for (const auto& m : masks)
    require(m.same_shape(masks.front()), Errc::dimension_mismatch, "masks differ in shape");
  const std::size_t rows = masks.front().rows();
  const std::size_t cols = masks.front().cols();
  if (masks.size() <= 8)
    return PackedMasks(masks.size(), rows, cols, detail::pack_words<std::uint8_t>(masks));
  return PackedMasks(masks.size(), rows, cols, detail::pack_words<std::uint16_t>(masks));
}

inline std::vector<BinaryMask> unpack_masks(const PackedMasks& packed) {
  packed.validate();
  std::vector<BinaryMask> out(packed.n_m(), BinaryMask(packed.rows(), packed.cols()));
  std::visit(
      [&](const auto& w) {
        for (std::size_t i = 0; i < out.size(); ++i) {
          auto dst = out[i].values();
          for (std::size_t k = 0; k < w.size(); ++k) dst[k] = static_cast<std::uint8_t>((w[k] >> i) & 1u);
        }
      },
      packed.words());
  return out;
}

// Fraction of ones in each binary mask.
inline std::vector<double> ones_fraction(std::span<const BinaryMask> masks) {
  std::vector<double> out;
  for (const auto& m : masks) {
    std::size_t ones = 0;
    for (auto v : m.values()) ones += v;
    out.push_back(m.empty() ? 0.0 : static_cast<double>(ones) / static_cast<double>(m.size()));
  }
  return out;
}

template <class T>
DenseMatrix<T> mask_as_real(const BinaryMask& m) {
  DenseMatrix<T> out(m.rows(), m.cols());
  auto src = m.values();
  auto dst = out.values();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<T>(src[k]);
  return out;
}

}  // namespace mglu
