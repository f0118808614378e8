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

#include "vmbss/iva.hpp"
#include "vmbss/signal.hpp"

namespace vmbss {

/// Physical channels followed by virtual channels, the separator's view of
/// the scene. Ordering: Physical(0..P_r-1), then Virtual(p, c) mic-major.
struct AugmentedStack {
  Spectrogram observations;
  std::size_t num_physical = 0;  // P_r
  std::size_t num_virtual = 0;   // Q

  std::size_t num_total() const { return num_physical + num_virtual; }  // P_u
  void validate() const;
};

/// V_{p,c}(t,f) = A[f](p, c) * separated(c, t, f) for every mic p and kept
/// source c, tagged Virtual(p, c), mic-major.
Spectrogram backproject(const DemixingSolution& sol);

/// Concatenates physical and virtual channels; `virtual_channels` may be empty.
AugmentedStack build_stack(const Spectrogram& physical, const Spectrogram& virtual_channels);
AugmentedStack build_stack(const Spectrogram& physical);

/// Moves a spectrogram onto another STFT grid through the time domain. Tags
/// are preserved. Real-linear in the input.
Spectrogram regrid(const Spectrogram& s, const StftConfig& cfg);

}  // namespace vmbss
