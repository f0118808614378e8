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
#include <filesystem>
#include <string>
#include <vector>

#include "vmbss/cacgmm.hpp"
#include "vmbss/iva.hpp"
#include "vmbss/scene.hpp"
#include "vmbss/separator.hpp"
#include "vmbss/virtual_mic.hpp"

namespace vmbss {

enum class DemixerKind { Iva, Sc, None };

std::string to_string(DemixerKind d);
DemixerKind parse_demixer(const std::string& s);

struct PipelineConfig {
  SceneSpec scene;
  DemixerKind demixer = DemixerKind::Iva;
  IvaConfig iva;
  ScConfig sc;
  /// Grid the separator and the loss work on.
  StftConfig stft = StftConfig::from_ms(64.0, 16.0, 8000);
  SeparatorConfig separator;
  std::filesystem::path output_dir = "out";
  std::size_t num_scenes = 1;
  std::uint64_t base_seed = 0;
  std::size_t jobs = 1;
  /// Write per-scene WAVs and reports; the aggregate CSV is always written.
  bool write_artifacts = true;

  void validate() const;
};

struct SceneOutcome {
  std::size_t scene_id = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double si_sdr_mixture = 0.0;
  double si_sdr_init = 0.0;
  double si_sdr_final = 0.0;
  double loss_init = 0.0;
  double loss_final = 0.0;
  std::size_t steps = 0;
  std::vector<double> loss_history;
};

struct PipelineReport {
  std::vector<SceneOutcome> scenes;
  std::size_t failures = 0;
  std::filesystem::path csv_path;
  std::filesystem::path manifest_path;

  /// More than 10% of scenes failed.
  bool failed() const { return failures * 10 > scenes.size(); }
};

struct MixtureSeparation {
  AugmentedStack stack;
  Spectrogram init;
  SeparationResult result;
};

/// demix -> virtual mics -> separate for one multichannel mixture. A given
/// demixing solution (with `separated` filled in) replaces the configured
/// demixer. Demixer outputs, the loss history and loss reports go to `dir`
/// when non-empty.
MixtureSeparation separate_mixture(const PipelineConfig& cfg, const Waveform& mixtures,
                                   const std::filesystem::path& dir, const DemixingSolution* demixed = nullptr);

/// simulate -> demix -> virtual mics -> separate -> evaluate for one scene.
/// Artifacts go to `dir` when non-empty.
SceneOutcome run_scene(const PipelineConfig& cfg, std::size_t scene_id, const std::filesystem::path& dir);

/// Runs every scene (up to cfg.jobs at a time), writes results.csv and
/// manifest.json into output_dir. Scene failures are recorded, not thrown.
PipelineReport run_pipeline(const PipelineConfig& cfg);

/// The aggregate CSV text: one row per scene, then median and mean rows.
std::string format_results_csv(const std::vector<SceneOutcome>& scenes);

}  // namespace vmbss
