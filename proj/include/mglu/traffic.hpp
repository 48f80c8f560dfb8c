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

namespace mglu {

// Element loads performed by one forward invocation. Byte fields follow the
// arithmetic type; modeled_weight_bits follows the declared storage width.
struct TrafficReport {
  std::uint64_t weight_elements_read = 0;
  std::uint64_t mask_words_read = 0;
  std::uint64_t weight_bytes_read = 0;
  std::uint64_t mask_bytes_read = 0;
  std::uint64_t input_bytes_read = 0;
  std::uint64_t output_bytes_written = 0;
  std::uint64_t modeled_weight_bits = 0;

  TrafficReport& operator+=(const TrafficReport& o) {
    weight_elements_read += o.weight_elements_read;
    mask_words_read += o.mask_words_read;
    weight_bytes_read += o.weight_bytes_read;
    mask_bytes_read += o.mask_bytes_read;
    input_bytes_read += o.input_bytes_read;
    output_bytes_written += o.output_bytes_written;
    modeled_weight_bits += o.modeled_weight_bits;
    return *this;
  }

  friend bool operator==(const TrafficReport&, const TrafficReport&) = default;
};

}  // namespace mglu
