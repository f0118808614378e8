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
#include <vector>

#include "vmbss/signal.hpp"

namespace vmbss {

/// Synthetic scene description. Every random draw derives from `seed`.
struct SceneSpec {
  std::size_t num_sources = 2;
  std::size_t num_mics = 2;
  double duration_s = 3.0;
  int sample_rate = 8000;
  std::size_t rir_length = 400;
  std::size_t delay_min = 0;
  std::size_t delay_max = 20;
  /// Per-sample amplitude decay of the reverberant tail, in (0, 1).
  double decay_rate = 0.99;
  /// Standard deviation of the first tail tap relative to the unit direct path.
  double tail_gain = 0.1;
  /// White Gaussian noise standard deviation added to every mixture channel.
  double noise_level = 0.01;
  std::uint64_t seed = 0;
  /// Row-major [num_mics x num_sources] gains. When non-empty the scene is an
  /// instantaneous mixture: each RIR is the gain at lag 0 and nothing else.
  std::vector<double> instantaneous_gains;

  std::size_t num_samples() const;
  bool instantaneous() const { return !instantaneous_gains.empty(); }
  void validate() const;
};

struct Scene {
  SceneSpec spec;
  Waveform sources;                   // [C]
  std::vector<double> rirs;           // [P x C x rir_length]
  std::vector<Waveform> images;       // images[p] has C channels
  Waveform mixtures;                  // [P]

  std::size_t rir_length() const { return spec.instantaneous() ? 1 : spec.rir_length; }
  std::span<const double> rir(std::size_t p, std::size_t c) const {
    return {rirs.data() + (p * spec.num_sources + c) * rir_length(), rir_length()};
  }
  /// Images at the reference microphone, the separation targets.
  const Waveform& reference_images() const { return images.front(); }
};

/// Unit-RMS colored noise with random on/off amplitude envelopes.
Waveform generate_sources(const SceneSpec& spec);

Scene render_scene(const SceneSpec& spec);

/// Full linear convolution truncated to the length of `x`.
std::vector<double> convolve_truncated(std::span<const double> x, std::span<const double> h);

}  // namespace vmbss
