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

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>

#include "vmbss/cacgmm.hpp"
#include "vmbss/fcp.hpp"
#include "vmbss/iva.hpp"
#include "vmbss/metrics.hpp"
#include "vmbss/pipeline.hpp"
#include "vmbss/scene.hpp"
#include "vmbss/separator.hpp"

namespace vmbss {

using json = nlohmann::json;

json to_json(const StftConfig& c);
json to_json(const SceneSpec& s);
json to_json(const IvaConfig& c);
json to_json(const ScConfig& c);
json to_json(const FcpConfig& c);
json to_json(const LossWeights& w);
json to_json(const SeparatorConfig& c);
json to_json(const PipelineConfig& c);
json to_json(const LossReport& r);
json to_json(const ScoreCard& s);

StftConfig stft_config_from_json(const json& j);
SceneSpec scene_spec_from_json(const json& j);

/// Flat `section.key = value` text. `#` starts a comment; blank lines are
/// ignored. Duplicate keys are an error.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);

/// Applies recognised keys to `cfg`; unknown keys or malformed values throw
/// ConfigError. The result is validated.
void apply_key_values(PipelineConfig& cfg, const KeyValues& kv);

/// Every tunable of `cfg` in key-value form; parse + apply reproduces `cfg`.
std::string to_key_values(const PipelineConfig& cfg);

/// `<base>.bin`: W then A as complex float64 pairs, frequency-major, row-major
/// per matrix. `<base>.json`: shapes, kept_indices, source energies, STFT.
void write_demixing(const std::filesystem::path& base, const DemixingSolution& sol);
/// Restores W, A, kept_indices and energies; `separated` is left empty.
DemixingSolution read_demixing(const std::filesystem::path& base, StftConfig* grid = nullptr);

/// `<base>.bin`: posteriors [K x T x F] float32; `<base>.json`: shape, STFT.
void write_masks(const std::filesystem::path& base, const CacgmmState& state, const StftConfig& grid);
/// Restores the posteriors and shape; weights and shape matrices are left empty.
CacgmmState read_masks(const std::filesystem::path& base, StftConfig* grid = nullptr);

}  // namespace vmbss
