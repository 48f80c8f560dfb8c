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

#include <array>
#include <atomic>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <variant>

#include "mglu/activation.hpp"
#include "mglu/layer.hpp"
#include "mglu/masks.hpp"
#include "mglu/parallel.hpp"
#include "mglu/reference.hpp"
#include "mglu/tensor.hpp"
#include "mglu/traffic.hpp"

namespace mglu {

inline constexpr std::size_t kMaxTileWidth = 1024;

struct KernelConfig {
  std::size_t split_k = 1;
  // Output rows handled together by one worker. When rows are contiguous in
  // memory (the transposed layer view) these are the vector lanes.
  std::size_t tile_width = 512;
  // Chunks of a row are accumulated in ascending order into one running sum,
  // so results do not depend on split_k or thread count. Otherwise each chunk
  // starts from zero and is combined with atomic adds in completion order.
  bool deterministic = true;
  bool parallel_rows = true;
  unsigned threads = 0;
  bool count_traffic = false;

  void validate(std::size_t n) const {
    require(split_k >= 1, Errc::invalid_argument, "split_k must be >= 1");
    require(split_k <= n, Errc::invalid_argument,
            "split_k=" + std::to_string(split_k) + " exceeds reduction length " + std::to_string(n));
    require(tile_width >= 1 && tile_width <= kMaxTileWidth && std::has_single_bit(tile_width),
            Errc::invalid_argument, "tile_width must be a power of two in 1..1024");
  }
};

// Accumulators of the split-K kernel: per mask, the gate stream x(M .* W) and
// the value stream x((1 - M) .* W), plus the unmasked row sums.
template <class T>
struct PartialSums {
  std::size_t n_m = 0;
  std::size_t m_rows = 0;
  DenseMatrix<T> gate;   // n_m x m_rows
  DenseMatrix<T> value;  // n_m x m_rows
  DenseVector<T> total;  // m_rows

  PartialSums() = default;
  PartialSums(std::size_t masks, std::size_t rows)
      : n_m(masks), m_rows(rows), gate(masks, rows), value(masks, rows), total(rows, T(0)) {}

  friend bool operator==(const PartialSums&, const PartialSums&) = default;
};

namespace detail {

struct ChunkRange {
  std::size_t begin;
  std::size_t end;
};

inline ChunkRange chunk_range(std::size_t n, std::size_t split_k, std::size_t chunk) {
  const std::size_t size = (n + split_k - 1) / split_k;
  const std::size_t begin = std::min(chunk * size, n);
  return {begin, std::min(begin + size, n)};
}

template <class T>
struct TileAccumulators {
  std::array<T, kMaxTileWidth> total;
  std::array<std::array<T, kMaxTileWidth>, kMaxMasks> gate;

  void clear(std::size_t n_m) {
    total.fill(T(0));
    for (std::size_t i = 0; i < n_m; ++i) gate[i].fill(T(0));
  }
};

// Lanes are consecutive output rows stored contiguously: A(r0 + j, k) sits at
// a[k * col_stride + j] once a and mask are offset to r0. Two or four k rows
// are folded per pass over the accumulators; each lane still sums in ascending k.
template <std::size_t NM, class T, class Word>
void accumulate_contiguous(const T* a, const Word* mask, std::size_t col_stride, const T* x, std::size_t k0,
                           std::size_t k1, std::size_t width, T* __restrict total,
                           std::array<T, kMaxTileWidth>* __restrict gate) {
  constexpr std::size_t R = NM > 4 && NM <= 8 ? 4 : 2;
  std::size_t k = k0;
  for (; k + R <= k1; k += R) {
    const T* ap[R];
    const Word* mp[R];
    T xr[R];
    for (std::size_t q = 0; q < R; ++q) {
      ap[q] = a + (k + q) * col_stride;
      mp[q] = mask + (k + q) * col_stride;
      xr[q] = x[k + q];
    }
    for (std::size_t j = 0; j < width; ++j) {
      T v[R];
      std::uint32_t b[R];
      T t = total[j];
      for (std::size_t q = 0; q < R; ++q) {
        v[q] = ap[q][j] * xr[q];
        b[q] = mp[q][j];
        t += v[q];
      }
      total[j] = t;
      for (std::size_t i = 0; i < NM; ++i) {
        T s = gate[i][j];
        for (std::size_t q = 0; q < R; ++q) s += (b[q] & (1u << i)) ? v[q] : T(0);
        gate[i][j] = s;
      }
    }
  }
  for (; k < k1; ++k) {
    const T xk = x[k];
    const T* ap = a + k * col_stride;
    const Word* mp = mask + k * col_stride;
    for (std::size_t j = 0; j < width; ++j) {
      const T v = ap[j] * xk;
      const std::uint32_t b = mp[j];
      total[j] += v;
      for (std::size_t i = 0; i < NM; ++i) gate[i][j] += (b & (1u << i)) ? v : T(0);
    }
  }
}

template <class T, class Word, std::size_t... Ns>
void accumulate_contiguous_n(std::size_t n_m, std::index_sequence<Ns...>, const T* a, const Word* mask,
                             std::size_t col_stride, const T* x, std::size_t k0, std::size_t k1, std::size_t width,
                             TileAccumulators<T>& acc) {
  const bool hit = ((n_m == Ns + 1 ? (accumulate_contiguous<Ns + 1>(a, mask, col_stride, x, k0, k1, width,
                                                                     acc.total.data(), acc.gate.data()),
                                      true)
                                   : false) ||
                    ...);
  if (!hit) throw Error(Errc::out_of_range, "mask count outside 1..16");
}

// General strides: every lane walks its own row.
template <class T, class Word>
void accumulate_strided(StridedView<const T> a, const Word* mask, const T* x, std::size_t r0, std::size_t width,
                        std::size_t k0, std::size_t k1, std::size_t n_m, TileAccumulators<T>& acc) {
  for (std::size_t j = 0; j < width; ++j) {
    const std::size_t row_off = (r0 + j) * a.row_stride;
    T total = acc.total[j];
    std::array<T, kMaxMasks> s{};
    for (std::size_t i = 0; i < n_m; ++i) s[i] = acc.gate[i][j];
    for (std::size_t k = k0; k < k1; ++k) {
      const std::size_t off = row_off + k * a.col_stride;
      const T v = a.data[off] * x[k];
      total += v;
      const unsigned w = mask[off];
      for (std::size_t i = 0; i < n_m; ++i) s[i] += ((w >> i) & 1u) ? v : T(0);
    }
    acc.total[j] = total;
    for (std::size_t i = 0; i < n_m; ++i) acc.gate[i][j] = s[i];
  }
}

template <class T, class Word>
void accumulate(StridedView<const T> a, const Word* mask, const T* x, std::size_t r0, std::size_t width,
                ChunkRange range, std::size_t n_m, TileAccumulators<T>& acc) {
  if (a.contiguous_rows()) {
    accumulate_contiguous_n(n_m, std::make_index_sequence<kMaxMasks>{}, a.data + r0, mask + r0, a.col_stride, x,
                            range.begin, range.end, width, acc);
  } else {
    accumulate_strided(a, mask, x, r0, width, range.begin, range.end, n_m, acc);
  }
}

template <class T, class Word>
PartialSums<T> run_split_k(StridedView<const T> a, const Word* mask, std::size_t n_m, std::span<const T> x,
                           const KernelConfig& cfg, TrafficReport* traffic) {
  const std::size_t m = a.rows;
  const std::size_t n = a.cols;
  const std::size_t tw = cfg.tile_width;
  const std::size_t n_tiles = (m + tw - 1) / tw;
  const unsigned threads = cfg.parallel_rows ? cfg.threads : 1u;
  PartialSums<T> z(n_m, m);

  if (cfg.deterministic) {
    parallel_for(n_tiles, threads, [&](std::size_t tile) {
      const std::size_t r0 = tile * tw;
      const std::size_t width = std::min(tw, m - r0);
      auto acc_owner = std::make_unique<TileAccumulators<T>>();
      auto& acc = *acc_owner;
      acc.clear(n_m);
      for (std::size_t chunk = 0; chunk < cfg.split_k; ++chunk)
        accumulate(a, mask, x.data(), r0, width, chunk_range(n, cfg.split_k, chunk), n_m, acc);
      for (std::size_t j = 0; j < width; ++j) {
        const T t = acc.total[j];
        z.total[r0 + j] = t;
        for (std::size_t i = 0; i < n_m; ++i) {
          z.gate(i, r0 + j) = acc.gate[i][j];
          z.value(i, r0 + j) = t - acc.gate[i][j];
        }
      }
    });
  } else {
    parallel_for(n_tiles * cfg.split_k, threads, [&](std::size_t task) {
      const std::size_t tile = task / cfg.split_k;
      const std::size_t chunk = task % cfg.split_k;
      const std::size_t r0 = tile * tw;
      const std::size_t width = std::min(tw, m - r0);
      auto acc_owner = std::make_unique<TileAccumulators<T>>();
      auto& acc = *acc_owner;
      acc.clear(n_m);
      accumulate(a, mask, x.data(), r0, width, chunk_range(n, cfg.split_k, chunk), n_m, acc);
      for (std::size_t j = 0; j < width; ++j) {
        const T t = acc.total[j];
        std::atomic_ref<T>(z.total[r0 + j]).fetch_add(t, std::memory_order_relaxed);
        for (std::size_t i = 0; i < n_m; ++i) {
          std::atomic_ref<T>(z.gate(i, r0 + j)).fetch_add(acc.gate[i][j], std::memory_order_relaxed);
          std::atomic_ref<T>(z.value(i, r0 + j)).fetch_add(t - acc.gate[i][j], std::memory_order_relaxed);
        }
      }
    });
  }

  if (traffic) {
    const std::uint64_t elements = static_cast<std::uint64_t>(m) * n;
    traffic->weight_elements_read += elements;
    traffic->weight_bytes_read += elements * sizeof(T);
    traffic->mask_words_read += elements;
    traffic->mask_bytes_read += elements * sizeof(Word);
    // Contiguous tiles load x[k] once per tile; strided lanes load it per row.
    const std::uint64_t x_loads = a.contiguous_rows() ? static_cast<std::uint64_t>(n_tiles) * n : elements;
    traffic->input_bytes_read += x_loads * sizeof(T);
    const std::uint64_t combines = cfg.deterministic ? 1 : cfg.split_k;
    traffic->output_bytes_written += combines * m * (1 + 2 * n_m) * sizeof(T);
  }
  return z;
}

template <class T>
PartialSums<T> dispatch_words(StridedView<const T> a, const PackedMasks& packed, std::span<const T> x,
                              const KernelConfig& cfg, TrafficReport* traffic) {
  cfg.validate(a.cols);
  return std::visit(
      [&](const auto& words) { return run_split_k(a, words.data(), packed.n_m(), x, cfg, traffic); },
      packed.words());
}

}  // namespace detail

// Split-K matrix-vector product with packed masks over a row-major A (M x N).
// For every row r and mask i: gate = sum_k A[r,k] x[k] M_i[r,k], value =
// total - gate. Each element of A and each packed word is loaded once.
template <class T>
PartialSums<T> fused_masked_matvec(const DenseMatrix<T>& a, std::span<const T> x, const PackedMasks& packed,
                                   const KernelConfig& cfg = {}, TrafficReport* traffic = nullptr) {
  require(packed.rows() == a.rows() && packed.cols() == a.cols(), Errc::dimension_mismatch,
          "packed mask dims differ from A");
  require(x.size() == a.cols(), Errc::dimension_mismatch, "x length != A cols");
  return detail::dispatch_words(row_major_view(a), packed, x, cfg, traffic);
}

// Same kernel on A = W^T for a layer weight W (h x d) and masks stored like W.
// No copy is made; output row r corresponds to column r of W.
template <class T>
PartialSums<T> fused_masked_matvec_transposed(const DenseMatrix<T>& w, std::span<const T> x, const PackedMasks& packed,
                                              const KernelConfig& cfg = {}, TrafficReport* traffic = nullptr) {
  require(packed.rows() == w.rows() && packed.cols() == w.cols(), Errc::dimension_mismatch,
          "packed mask dims differ from W");
  require(x.size() == w.rows(), Errc::dimension_mismatch, "x length != W rows");
  return detail::dispatch_words(transposed_view(w), packed, x, cfg, traffic);
}

template <class T>
DenseVector<T> combine_partials(const PartialSums<T>& z, Activation kind) {
  DenseVector<T> out(z.m_rows, T(0));
  for (std::size_t i = 0; i < z.n_m; ++i) {
    auto gate = z.gate.row(i);
    auto value = z.value.row(i);
    for (std::size_t r = 0; r < z.m_rows; ++r) out[r] += activate(kind, gate[r]) * value[r];
  }
  return out;
}

template <class T>
DenseVector<T> mglu_forward_fused(std::span<const T> x, const DenseMatrix<T>& w, const PackedMasks& packed,
                                  Activation kind, const KernelConfig& cfg = {}, TrafficReport* traffic = nullptr) {
  const auto z = fused_masked_matvec_transposed(w, x, packed, cfg, traffic);
  return combine_partials(z, kind);
}

template <class T>
DenseVector<T> mglu_forward_fused(std::span<const T> x, const MgluLayer<T>& layer, const KernelConfig& cfg = {}) {
  const PackedMasks packed = layer.packed_masks();
  return mglu_forward_fused(x, layer.weight, packed, layer.activation, cfg);
}

// Modeled bits moved per token by the fused path: W at its storage width plus
// one bit per mask per element.
inline std::uint64_t modeled_fused_bits(std::uint64_t h, std::uint64_t d, std::uint64_t n_m, unsigned storage_bits) {
  return (storage_bits + n_m) * h * d;
}

template <class T>
std::pair<DenseVector<T>, TrafficReport> instrumented_forward(std::span<const T> x, const DenseMatrix<T>& w,
                                                              const PackedMasks& packed, Activation kind,
                                                              KernelConfig cfg = {}) {
  cfg.count_traffic = true;
  TrafficReport traffic;
  auto out = mglu_forward_fused(x, w, packed, kind, cfg, &traffic);
  traffic.modeled_weight_bits = modeled_fused_bits(w.rows(), w.cols(), packed.n_m(), w.storage_width_bits());
  return {std::move(out), traffic};
}

template <class T>
std::pair<DenseVector<T>, TrafficReport> instrumented_forward(std::span<const T> x, const MgluLayer<T>& layer,
                                                              const KernelConfig& cfg = {}) {
  return instrumented_forward(x, layer.weight, layer.packed_masks(), layer.activation, cfg);
}

// The unfused path for comparison: 2 n_m full passes over W, each also reading
// one mask bit per element.
template <class T>
std::pair<DenseVector<T>, TrafficReport> instrumented_naive_forward(std::span<const T> x, const DenseMatrix<T>& w,
                                                                    std::span<const BinaryMask> masks,
                                                                    Activation kind) {
  TrafficReport traffic;
  auto out = reference::mglu_forward_naive(x, w, masks, kind, &traffic);
  const std::uint64_t passes = 2 * masks.size();
  traffic.modeled_weight_bits = passes * (w.storage_width_bits() + 1ull) * w.rows() * w.cols();
  return {std::move(out), traffic};
}

enum class ForwardPath { naive, fused };

template <class T>
DenseVector<T> mglu_forward(std::span<const T> x, const MgluLayer<T>& layer, ForwardPath path,
                            const KernelConfig& cfg = {}) {
  return path == ForwardPath::fused ? mglu_forward_fused(x, layer, cfg) : reference::mglu_forward_naive(x, layer);
}

// MGLU followed by the output projection W_o (d x h), no bias.
template <class T>
DenseVector<T> ffn_forward(std::span<const T> x, const MgluLayer<T>& layer, ForwardPath path,
                           const KernelConfig& cfg = {}) {
  if (!layer.output_proj) throw Error(Errc::missing_output_projection, "layer has no W_o");
  if (layer.router || path == ForwardPath::naive) return reference::ffn_forward(x, layer);
  const auto y = mglu_forward_fused(x, layer, cfg);
  return reference::output_projection<T>(y, layer);
}

}  // namespace mglu
