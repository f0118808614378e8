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

#include "vmbss/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vmbss {

double si_sdr(std::span<const double> est, std::span<const double> ref) {
  require_input(est.size() == ref.size(), "si_sdr: length mismatch");
  const double ref_energy = std::inner_product(ref.begin(), ref.end(), ref.begin(), 0.0);
  require_input(ref_energy > 0.0, "si_sdr: reference is all zero");
  const double alpha = std::inner_product(est.begin(), est.end(), ref.begin(), 0.0) / ref_energy;
  double target = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double s = alpha * ref[i];
    target += s * s;
    residual += (s - est[i]) * (s - est[i]);
  }
  if (residual <= 0.0 || target <= 0.0) return target > 0.0 ? kSiSdrCap : -kSiSdrCap;
  return std::clamp(10.0 * std::log10(target / residual), -kSiSdrCap, kSiSdrCap);
}

ScoreCard pit_score(const Waveform& ests, const Waveform& refs, const Waveform* mixture) {
  const std::size_t C = refs.channels();
  require_input(C >= 1 && C <= 6, "pit_score: between 1 and 6 sources supported");
  require_input(ests.channels() == C, "pit_score: estimate and reference counts differ");
  require_input(ests.length() == refs.length(), "pit_score: estimate and reference lengths differ");

  // score[c][e]: reference c against estimate e
  std::vector<std::vector<double>> score(C, std::vector<double>(C));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t e = 0; e < C; ++e) score[c][e] = si_sdr(ests.channel(e), refs.channel(c));

  std::vector<std::size_t> perm(C);
  std::iota(perm.begin(), perm.end(), 0);
  ScoreCard card;
  double best = -std::numeric_limits<double>::infinity();
  do {
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += score[c][perm[c]];
    // next_permutation visits in lexicographic order, so strict > keeps the first
    if (sum > best) {
      best = sum;
      card.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  for (std::size_t c = 0; c < C; ++c) card.per_source_si_sdr.push_back(score[c][card.permutation[c]]);
  card.mean_si_sdr = std::accumulate(card.per_source_si_sdr.begin(), card.per_source_si_sdr.end(), 0.0) /
                     static_cast<double>(C);
  if (mixture) {
    require_input(mixture->length() == refs.length(), "pit_score: mixture length differs");
    double base = 0.0;
    for (std::size_t c = 0; c < C; ++c) base += si_sdr(mixture->channel(0), refs.channel(c));
    card.improvement_over_mixture = card.mean_si_sdr - base / static_cast<double>(C);
  }
  return card;
}

}  // namespace vmbss
