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

#include <cstdint>
#include <string>
#include <vector>

#include "vmbss/fcp.hpp"
#include "vmbss/iva.hpp"
#include "vmbss/virtual_mic.hpp"

namespace vmbss {

enum class InitMode { IvaEstimates, MixtureSplit };

std::string to_string(InitMode m);
InitMode parse_init_mode(const std::string& s);

struct SeparatorConfig {
  InitMode init = InitMode::IvaEstimates;
  std::size_t max_steps = 500;
  /// RMS of each update relative to the reference mixture RMS.
  double step_size = 0.1;
  std::size_t fcp_refresh_every = 10;
  LossWeights loss_weights;
  FcpConfig fcp;
  bool isms_enabled = false;
  double early_stop_rel_tol = 1e-5;
  /// Number of estimates for mixture_split; iva_estimates uses the demixer's.
  std::size_t num_sources = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SeparationResult {
  Spectrogram estimates;
  /// FCP images of the final estimates at the reference microphone, with
  /// freshly solved filters.
  Spectrogram reference_images;
  /// Loss after initialization and after every accepted step.
  std::vector<double> loss_history;
  LossReport init_report;
  /// Report under the filters in effect at the end of the run.
  LossReport final_report;
  /// vm_loss of the final estimates with freshly solved filters.
  double final_fresh_total = 0.0;
  std::size_t steps_taken = 0;
  std::size_t refreshes_accepted = 0;
  std::size_t refreshes_rejected = 0;
};

/// iva_estimates: separated source c times A[f](0, c), on the stack's grid.
/// mixture_split: Y_0 / C plus seeded complex noise 40 dB below it.
Spectrogram init_estimates(const AugmentedStack& stack, const DemixingSolution* sol,
                           const SeparatorConfig& cfg);

/// Alternates closed-form FCP refreshes with fixed-filter gradient steps on
/// the estimates. Steps use backtracking and are only accepted when the loss
/// does not increase; refreshes likewise. loss_history is non-increasing.
SeparationResult separate(const AugmentedStack& stack, const SeparatorConfig& cfg,
                          const DemixingSolution* sol = nullptr);

/// FCP images of `est` at physical channel 0 of the stack, with fresh filters.
Spectrogram reference_fcp_images(const AugmentedStack& stack, const Spectrogram& est, const FcpConfig& cfg);

/// Same, starting from given estimates.
SeparationResult separate_from(const AugmentedStack& stack, const SeparatorConfig& cfg, Spectrogram init);

}  // namespace vmbss
