// Copyright 2026 The Crashaccum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace crashaccum {

// One call-stack entry. Empty strings and zero numbers mean "unknown".
struct Frame {
  std::string function;
  std::string module;
  std::string file;
  std::uint64_t line = 0;
  std::uint64_t column = 0;
  std::uint64_t address = 0;

  // At least one of function, module, address must identify the frame, and a
  // line number is only meaningful together with a file.
  bool valid() const {
    if (function.empty() && module.empty() && address == 0) return false;
    if (file.empty() && line != 0) return false;
    return true;
  }

  friend bool operator==(const Frame&, const Frame&) = default;
};

// Ordered call stack, index 0 is the innermost frame (the crash site).
struct Stacktrace {
  std::vector<Frame> frames;

  bool empty() const { return frames.empty(); }
  std::size_t size() const { return frames.size(); }

  friend bool operator==(const Stacktrace&, const Stacktrace&) = default;
};

}  // namespace crashaccum
