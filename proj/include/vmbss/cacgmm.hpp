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

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "vmbss/signal.hpp"

namespace vmbss {

struct ScConfig {
  std::size_t n_classes = 2;
  std::size_t n_iter = 20;
  /// Relative diagonal loading for near-singular shape matrices.
  double eps = 1e-6;
  bool drop_lowest_energy = false;
  std::uint64_t seed = 0;
  StftConfig stft = StftConfig::from_ms(128.0, 16.0, 8000);

  std::size_t output_sources() const { return drop_lowest_energy ? n_classes - 1 : n_classes; }
  void validate() const;
};

/// Complex angular central Gaussian mixture, one independent model per bin.
struct CacgmmState {
  std::size_t classes = 0;
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t mics = 0;
  std::vector<double> weights;               // [F x K]
  std::vector<Eigen::MatrixXcd> shape_mats;  // [F x K], each P x P
  std::vector<double> posteriors;            // [K x T x F]
  /// Frames whose observation vector was too small to normalize, [T x F].
  std::vector<std::uint8_t> masked;
  /// Per-bin log-likelihood after each E-step, [iterations][F].
  std::vector<std::vector<double>> loglik_history;
  /// Class permutation applied at each bin by align_permutations (new k <- old perm[k]).
  std::vector<std::vector<std::size_t>> alignment;

  double& posterior(std::size_t k, std::size_t t, std::size_t f) {
    return posteriors[(k * frames + t) * bins + f];
  }
  double posterior(std::size_t k, std::size_t t, std::size_t f) const {
    return posteriors[(k * frames + t) * bins + f];
  }
  double& weight(std::size_t f, std::size_t k) { return weights[f * classes + k]; }
  double weight(std::size_t f, std::size_t k) const { return weights[f * classes + k]; }
  Eigen::MatrixXcd& shape(std::size_t f, std::size_t k) { return shape_mats[f * classes + k]; }
  const Eigen::MatrixXcd& shape(std::size_t f, std::size_t k) const { return shape_mats[f * classes + k]; }

  /// Sum over bins of the last recorded log-likelihoods for each iteration.
  std::vector<double> total_loglik() const;
};

/// EM for the CACGMM, initialized from seeded per-bin k-means on inter-channel
/// phase differences. Bins are modelled independently, so the class labels are
/// not aligned across frequency on return.
CacgmmState cacgmm_em(const Spectrogram& mix, const ScConfig& cfg);

/// Greedy inter-frequency alignment of class labels by posterior time-profile
/// correlation, starting from the bin with the most posterior variance.
CacgmmState align_permutations(CacgmmState state);

/// Pearson correlation; 0 when either input has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

/// The target_count classes with the most masked reference-channel energy,
/// ascending; ties keep the lower index.
std::vector<std::size_t> sc_kept_classes(const Spectrogram& mix, const CacgmmState& state,
                                         std::size_t target_count);

/// V_{p,c}(t,f) = posterior_c(t,f) * Y_p(t,f) for every mic p and kept class
/// c, ordered mic-major. Channel tags are Virtual(p, i) with i the position in
/// `kept`.
Spectrogram sc_virtual_channels(const Spectrogram& mix, const CacgmmState& state,
                                std::span<const std::size_t> kept);

}  // namespace vmbss
