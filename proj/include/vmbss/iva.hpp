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
#include <string>
#include <vector>

#include "vmbss/signal.hpp"

namespace vmbss {

struct IvaConfig {
  std::size_t n_src = 2;
  std::size_t n_iter = 50;
  /// Relative loading added to near-singular spatial covariances; also the
  /// floor on per-frame source power in the whitened domain.
  double eps = 1e-6;
  /// Keep n_src - 1 sources, dropping the one with the least energy.
  bool drop_lowest_energy = false;
  StftConfig stft = StftConfig::from_ms(256.0, 32.0, 8000);

  std::size_t output_sources() const { return drop_lowest_energy ? n_src - 1 : n_src; }
  void validate(std::size_t num_channels) const;
};

/// Per-frequency linear demixer. Row c of W[f] is w_c(f)^H, so that
/// separated(c, t, f) = W[f].row(c) * y(t, f).
struct DemixingSolution {
  std::vector<Eigen::MatrixXcd> W;  // [F] of C' x P_r
  std::vector<Eigen::MatrixXcd> A;  // [F] of P_r x C'
  Spectrogram separated;            // C' channels tagged Source(c)
  std::vector<double> source_energies;
  /// Indices into the original n_src sources that survived dropping.
  std::vector<std::size_t> kept_indices;
  /// AuxIVA negative log-likelihood after each iteration (index 0 = initial).
  std::vector<double> objective_history;
  std::vector<std::string> warnings;

  std::size_t num_sources() const { return kept_indices.size(); }
  std::size_t num_mics() const { return W.empty() ? 0 : static_cast<std::size_t>(W.front().cols()); }
  std::size_t bins() const { return W.size(); }
  void validate() const;
};

/// Determined AuxIVA with a time-varying Gaussian source model and IP1 updates,
/// preceded by per-frequency PCA whitening to n_src components. The demixer is
/// scaled to the reference microphone (minimal distortion) before returning.
DemixingSolution auxiva_run(const Spectrogram& mix, const IvaConfig& cfg);

/// Keeps the target_count most energetic sources; ties keep the lower index.
DemixingSolution drop_lowest_energy(const DemixingSolution& sol, std::size_t target_count);

/// separated(c, t, f) = W[f].row(c) * mix(:, t, f).
Spectrogram apply_demixing(const std::vector<Eigen::MatrixXcd>& W, const Spectrogram& mix);

/// Moore-Penrose pseudo-inverse.
Eigen::MatrixXcd pseudo_inverse(const Eigen::MatrixXcd& m);

}  // namespace vmbss
