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
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mglu/layer.hpp"

namespace mglu {

// Layer file, little-endian:
//   0  char[4] "MGLU"        4  u32 version        8  u64 h      16 u64 d
//   24 u16 n_m               26 u8 activation      27 u8 flags   28 u8 precision
//   29 zero padding to 32
// Payload: W (h*d f32), then n_m*h*d f32 logits or h*d packed words, then
// optional W_o (d*h f32), then optional W_r (h*n_m f32) followed by K as u16.
inline constexpr std::array<char, 4> kLayerMagic{'M', 'G', 'L', 'U'};
inline constexpr std::uint32_t kLayerFormatVersion = 1;
inline constexpr std::size_t kLayerHeaderBytes = 32;
inline constexpr std::uint64_t kMaxPayloadBytes = std::uint64_t{1} << 40;

enum LayerFlags : std::uint8_t {
  kHasOutputProj = 1u << 0,
  kHasRouter = 1u << 1,
  kPackedMasks = 1u << 2,
};

struct LayerHeader {
  std::uint32_t version = kLayerFormatVersion;
  std::uint64_t h = 0;
  std::uint64_t d = 0;
  std::uint16_t n_m = 0;
  Activation activation = Activation::identity;
  std::uint8_t flags = 0;
  Precision precision = Precision::single;

  unsigned word_bits() const noexcept { return n_m <= 8 ? 8u : 16u; }

  // Throws dim_overflow when any size term overflows or exceeds the cap.
  std::uint64_t payload_bytes() const {
    auto mul = [](std::uint64_t a, std::uint64_t b) {
      if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a)
        throw Error(Errc::dim_overflow, "layer dimensions overflow");
      return a * b;
    };
    auto add = [](std::uint64_t a, std::uint64_t b) {
      if (b > std::numeric_limits<std::uint64_t>::max() - a) throw Error(Errc::dim_overflow, "payload size overflows");
      return a + b;
    };
    const std::uint64_t hd = mul(h, d);
    std::uint64_t bytes = mul(hd, 4);
    if (flags & kPackedMasks)
      bytes = add(bytes, mul(hd, word_bits() / 8));
    else
      bytes = add(bytes, mul(mul(hd, n_m), 4));
    if (flags & kHasOutputProj) bytes = add(bytes, mul(hd, 4));
    if (flags & kHasRouter) bytes = add(bytes, add(mul(mul(h, n_m), 4), 2));
    if (bytes > kMaxPayloadBytes) throw Error(Errc::dim_overflow, "payload exceeds 1 TiB");
    return bytes;
  }

  std::uint64_t file_bytes() const { return kLayerHeaderBytes + payload_bytes(); }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<std::byte>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  template <class T>
  void reals(std::span<const T> v) {
    for (T x : v) f32(static_cast<float>(x));
  }
  void pad_to(std::size_t n) {
    while (buf_.size() < n) u8(0);
  }
  std::vector<std::byte> take() { return std::move(buf_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::byte> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  float f32() { return std::bit_cast<float>(u32()); }

  template <class T>
  DenseMatrix<T> matrix(std::size_t rows, std::size_t cols) {
    DenseMatrix<T> m(rows, cols);
    need(m.size() * 4);
    for (auto& v : m.values()) v = static_cast<T>(f32());
    return m;
  }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw Error(Errc::truncated_file, "needed " + std::to_string(n) + " bytes at offset " +
                                            std::to_string(pos_) + ", file has " + std::to_string(bytes_.size()));
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
LayerHeader header_for(const MgluLayer<T>& layer) {
  LayerHeader hdr;
  hdr.h = layer.h();
  hdr.d = layer.d();
  hdr.n_m = static_cast<std::uint16_t>(layer.n_m());
  hdr.activation = layer.activation;
  hdr.flags = static_cast<std::uint8_t>((layer.output_proj ? kHasOutputProj : 0) | (layer.router ? kHasRouter : 0) |
                                        (layer.has_logits() ? 0 : kPackedMasks));
  hdr.precision = precision_of<T>();
  return hdr;
}

// Reals are stored as f32, so double layers round to single on disk.
template <class T>
std::vector<std::byte> encode_layer(const MgluLayer<T>& layer) {
  layer.validate();
  const LayerHeader hdr = header_for(layer);
  detail::ByteWriter w;
  for (char c : kLayerMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(hdr.version);
  w.u64(hdr.h);
  w.u64(hdr.d);
  w.u16(hdr.n_m);
  w.u8(static_cast<std::uint8_t>(hdr.activation));
  w.u8(hdr.flags);
  w.u8(static_cast<std::uint8_t>(hdr.precision));
  w.pad_to(kLayerHeaderBytes);

  w.reals(layer.weight.values());
  if (layer.has_logits()) {
    for (const auto& m : layer.logits().masks()) w.reals(m.values());
  } else {
    std::visit(
        [&](const auto& words) {
          for (auto word : words) {
            if constexpr (sizeof(word) == 1)
              w.u8(word);
            else
              w.u16(word);
          }
        },
        std::get<PackedMasks>(layer.masks).words());
  }
  if (layer.output_proj) w.reals(layer.output_proj->values());
  if (layer.router) {
    w.reals(layer.router->weight.values());
    w.u16(static_cast<std::uint16_t>(layer.router->top_k));
  }
  return w.take();
}

inline LayerHeader decode_header(std::span<const std::byte> bytes) {
  detail::ByteReader r(bytes);
  r.need(kLayerHeaderBytes);
  for (char c : kLayerMagic)
    if (r.u8() != static_cast<std::uint8_t>(c)) throw Error(Errc::bad_magic, "not an MGLU layer file");
  LayerHeader hdr;
  hdr.version = r.u32();
  if (hdr.version != kLayerFormatVersion)
    throw Error(Errc::version_mismatch, "format version " + std::to_string(hdr.version) + ", expected " +
                                            std::to_string(kLayerFormatVersion));
  hdr.h = r.u64();
  hdr.d = r.u64();
  hdr.n_m = r.u16();
  const std::uint8_t act = r.u8();
  hdr.flags = r.u8();
  const std::uint8_t prec = r.u8();
  if (hdr.h == 0 || hdr.d == 0) throw Error(Errc::corrupt_header, "zero dimension");
  if (hdr.n_m < 1 || hdr.n_m > kMaxMasks) throw Error(Errc::corrupt_header, "n_m outside 1..16");
  if (!valid_activation_code(act)) throw Error(Errc::corrupt_header, "unknown activation code");
  if (hdr.flags & ~0x07u) throw Error(Errc::corrupt_header, "unknown flag bits");
  if (prec > 1) throw Error(Errc::corrupt_header, "unknown precision code");
  hdr.activation = static_cast<Activation>(act);
  hdr.precision = static_cast<Precision>(prec);
  hdr.payload_bytes();
  return hdr;
}

template <class T>
MgluLayer<T> decode_layer(std::span<const std::byte> bytes) {
  const LayerHeader hdr = decode_header(bytes);
  if (bytes.size() < hdr.file_bytes())
    throw Error(Errc::truncated_file, "file has " + std::to_string(bytes.size()) + " bytes, header declares " +
                                          std::to_string(hdr.file_bytes()));
  if (bytes.size() > hdr.file_bytes()) throw Error(Errc::corrupt_header, "trailing bytes after payload");

  detail::ByteReader r(bytes);
  r.skip(kLayerHeaderBytes);
  const auto h = static_cast<std::size_t>(hdr.h);
  const auto d = static_cast<std::size_t>(hdr.d);

  MgluLayer<T> layer;
  layer.activation = hdr.activation;
  layer.weight = r.matrix<T>(h, d);
  if (hdr.flags & kPackedMasks) {
    if (hdr.word_bits() == 8) {
      PackedMasks::Narrow words(h * d);
      for (auto& w : words) w = r.u8();
      layer.masks = PackedMasks(hdr.n_m, h, d, std::move(words));
    } else {
      PackedMasks::Wide words(h * d);
      for (auto& w : words) w = r.u16();
      layer.masks = PackedMasks(hdr.n_m, h, d, std::move(words));
    }
    std::get<PackedMasks>(layer.masks).validate();
  } else {
    std::vector<DenseMatrix<T>> logits;
    for (std::size_t i = 0; i < hdr.n_m; ++i) logits.push_back(r.matrix<T>(h, d));
    layer.masks = MaskLogits<T>(std::move(logits));
  }
  if (hdr.flags & kHasOutputProj) layer.output_proj = r.matrix<T>(d, h);
  if (hdr.flags & kHasRouter) {
    Router<T> router;
    router.weight = r.matrix<T>(h, hdr.n_m);
    router.top_k = r.u16();
    layer.router = std::move(router);
  }
  layer.validate();
  return layer;
}

template <class T>
void serialize_layer(const MgluLayer<T>& layer, const std::filesystem::path& path) {
  const auto bytes = encode_layer(layer);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

inline std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(Errc::io_error, "read failed for " + path.string());
  return bytes;
}

template <class T>
MgluLayer<T> deserialize_layer(const std::filesystem::path& path) {
  return decode_layer<T>(read_file_bytes(path));
}

}  // namespace mglu
