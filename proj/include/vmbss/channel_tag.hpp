// Copyright 2026  The vmbss Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <string>
#include <variant>

namespace vmbss {

// All indices are zero-based; microphone 0 is the reference microphone.

struct Physical {
  std::size_t mic = 0;
  bool operator==(const Physical&) const = default;
};

struct Virtual {
  std::size_t mic = 0;
  std::size_t source = 0;
  bool operator==(const Virtual&) const = default;
};

/// Channel of a separated component or a source estimate (not an observation).
struct Source {
  std::size_t index = 0;
  bool operator==(const Source&) const = default;
};

using ChannelTag = std::variant<Physical, Virtual, Source>;

inline bool is_physical(const ChannelTag& t) { return std::holds_alternative<Physical>(t); }
inline bool is_virtual(const ChannelTag& t) { return std::holds_alternative<Virtual>(t); }

/// "P0", "V1.0" (mic 1, source 0) or "S1".
std::string to_string(const ChannelTag& tag);
ChannelTag parse_channel_tag(const std::string& text);

}  // namespace vmbss
