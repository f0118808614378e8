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

#include "vmbss/virtual_mic.hpp"

namespace vmbss {

void AugmentedStack::validate() const {
  require_input(observations.channels() == num_total(), "stack: channel count differs from P_r + Q");
  const auto& tags = observations.tags();
  for (std::size_t k = 0; k < num_physical; ++k)
    require_input(tags[k] == ChannelTag{Physical{k}}, "stack: physical channels must come first, in order");
  for (std::size_t k = num_physical; k < num_total(); ++k) {
    const auto* v = std::get_if<Virtual>(&tags[k]);
    require_input(v != nullptr, "stack: expected a virtual channel at position " + std::to_string(k));
    require_input(v->mic < num_physical, "stack: virtual channel refers to an unknown microphone");
    if (k > num_physical) {
      const auto& prev = std::get<Virtual>(tags[k - 1]);
      const bool ordered = prev.mic < v->mic || (prev.mic == v->mic && prev.source < v->source);
      require_input(ordered, "stack: virtual channels must be mic-major, source-minor");
    }
  }
}

Spectrogram backproject(const DemixingSolution& sol) {
  const Spectrogram& s = sol.separated;
  const std::size_t C = s.channels();
  require_input(sol.A.size() == s.bins(), "backproject: A frequency count differs from separated bins");
  require_input(!sol.A.empty() && static_cast<std::size_t>(sol.A.front().cols()) == C,
                "backproject: A column count differs from separated sources");
  const std::size_t P = static_cast<std::size_t>(sol.A.front().rows());

  std::vector<ChannelTag> tags;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < C; ++c) tags.push_back(Virtual{p, c});
  Spectrogram out = s.like(P * C, std::move(tags));
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t ch = p * C + c;
      for (std::size_t t = 0; t < s.frames(); ++t)
        for (std::size_t f = 0; f < s.bins(); ++f)
          out(ch, t, f) = sol.A[f](static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) * s(c, t, f);
    }
  }
  return out;
}

AugmentedStack build_stack(const Spectrogram& physical, const Spectrogram& virtual_channels) {
  if (virtual_channels.channels() == 0) return build_stack(physical);
  require_input(physical.same_grid(virtual_channels), "build_stack: physical and virtual grids differ");
  std::vector<ChannelTag> tags;
  for (std::size_t p = 0; p < physical.channels(); ++p) tags.push_back(Physical{p});
  for (const auto& t : virtual_channels.tags()) tags.push_back(t);

  AugmentedStack stack;
  stack.num_physical = physical.channels();
  stack.num_virtual = virtual_channels.channels();
  const std::size_t total = tags.size();
  stack.observations = physical.like(total, std::move(tags));
  auto& dst = stack.observations.data();
  std::copy(physical.data().begin(), physical.data().end(), dst.begin());
  std::copy(virtual_channels.data().begin(), virtual_channels.data().end(),
            dst.begin() + static_cast<std::ptrdiff_t>(physical.data().size()));
  stack.validate();
  return stack;
}

AugmentedStack build_stack(const Spectrogram& physical) {
  AugmentedStack stack;
  stack.num_physical = physical.channels();
  stack.observations = physical;
  for (std::size_t p = 0; p < physical.channels(); ++p) stack.observations.tags()[p] = Physical{p};
  stack.validate();
  return stack;
}

Spectrogram regrid(const Spectrogram& s, const StftConfig& cfg) {
  if (s.config() == cfg) return s;
  Spectrogram out = stft(istft(s), cfg);
  out.tags() = s.tags();
  return out;
}

}  // namespace vmbss
