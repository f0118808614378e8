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

#include <span>
#include <vector>

#include "vmbss/signal.hpp"

namespace vmbss {

/// Value reported when the residual vanishes.
inline constexpr double kSiSdrCap = 200.0;

/// Scale-invariant SDR in dB.
double si_sdr(std::span<const double> est, std::span<const double> ref);

struct ScoreCard {
  std::vector<double> per_source_si_sdr;  // indexed by reference
  /// permutation[c] is the estimate assigned to reference c.
  std::vector<std::size_t> permutation;
  double mean_si_sdr = 0.0;
  /// Mean SI-SDR gain over using the mixture as every estimate; 0 without one.
  double improvement_over_mixture = 0.0;
};

/// Exhaustive permutation search over C <= 6 estimates, maximizing the mean
/// SI-SDR. Ties keep the lexicographically smallest permutation. `mixture`
/// channel 0 is the baseline for improvement_over_mixture.
ScoreCard pit_score(const Waveform& ests, const Waveform& refs, const Waveform* mixture = nullptr);

}  // namespace vmbss
