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

#include <stdexcept>
#include <string>
#include <string_view>

namespace mglu {

enum class Errc {
  dimension_mismatch,
  invalid_argument,
  out_of_range,
  non_finite,
  high_bit_contamination,
  missing_router,
  missing_output_projection,
  bad_magic,
  version_mismatch,
  dim_overflow,
  truncated_file,
  corrupt_header,
  io_error,
  divergence,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::dimension_mismatch: return "dimension mismatch";
    case Errc::invalid_argument: return "invalid argument";
    case Errc::out_of_range: return "out of range";
    case Errc::non_finite: return "non-finite value";
    case Errc::high_bit_contamination: return "high-bit contamination";
    case Errc::missing_router: return "missing router";
    case Errc::missing_output_projection: return "missing output projection";
    case Errc::bad_magic: return "bad magic";
    case Errc::version_mismatch: return "version mismatch";
    case Errc::dim_overflow: return "dim overflow";
    case Errc::truncated_file: return "truncated file";
    case Errc::corrupt_header: return "corrupt header";
    case Errc::io_error: return "i/o error";
    case Errc::divergence: return "divergence";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace mglu
