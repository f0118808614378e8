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

#include "vmbss/scene.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace vmbss {

namespace {

constexpr std::uint64_t kSourceStream = 1000;
constexpr std::uint64_t kRirStream = 2000;
constexpr std::uint64_t kNoiseStream = 3000;

std::vector<double> envelope(std::mt19937_64& rng, std::size_t n, int rate) {
  std::uniform_real_distribution<double> seg_len(0.15, 0.5);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> target(n);
  std::size_t pos = 0;
  while (pos < n) {
    const auto len = static_cast<std::size_t>(seg_len(rng) * rate);
    const double level = coin(rng) < 0.25 ? 0.02 : std::exp(0.8 * gauss(rng));
    for (std::size_t i = pos; i < std::min(n, pos + len); ++i) target[i] = level;
    pos += std::max<std::size_t>(len, 1);
  }

  // 20 ms moving average softens the segment edges.
  const std::size_t half = static_cast<std::size_t>(0.01 * rate);
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + target[i];
  std::vector<double> env(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + half + 1);
    env[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return env;
}

}  // namespace

std::size_t SceneSpec::num_samples() const {
  return static_cast<std::size_t>(std::llround(duration_s * sample_rate));
}

void SceneSpec::validate() const {
  require_config(num_sources >= 1, "scene: num_sources must be >= 1");
  require_config(num_mics >= 1, "scene: num_mics must be >= 1");
  require_config(sample_rate > 0, "scene: sample_rate must be positive");
  require_config(num_samples() >= 1, "scene: duration too short");
  require_config(noise_level >= 0.0, "scene: noise_level must be non-negative");
  if (instantaneous()) {
    require_config(instantaneous_gains.size() == num_mics * num_sources,
                   "scene: instantaneous_gains must have num_mics * num_sources entries");
    return;
  }
  require_config(rir_length >= 1, "scene: rir_length must be >= 1");
  require_config(delay_min <= delay_max, "scene: delay_min must not exceed delay_max");
  require_config(delay_max < rir_length, "scene: delays must fit within rir_length");
  require_config(decay_rate > 0.0 && decay_rate < 1.0, "scene: decay_rate must lie in (0, 1)");
  require_config(tail_gain >= 0.0, "scene: tail_gain must be non-negative");
}

Waveform generate_sources(const SceneSpec& spec) {
  spec.validate();
  const std::size_t n = spec.num_samples();
  Waveform out(spec.num_sources, n, spec.sample_rate);
  for (std::size_t c = 0; c < spec.num_sources; ++c) {
    auto rng = make_rng(spec.seed, kSourceStream + c);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> centre(200.0, 2500.0);
    std::uniform_real_distribution<double> radius(0.85, 0.97);

    // two-pole resonance plus a white floor
    const double theta = 2.0 * std::numbers::pi * centre(rng) / spec.sample_rate;
    const double r = radius(rng);
    const double a1 = 2.0 * r * std::cos(theta);
    const double a2 = -r * r;
    const auto env = envelope(rng, n, spec.sample_rate);

    auto x = out.channel(c);
    double y1 = 0.0, y2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = gauss(rng);
      const double y = (1.0 - r) * e + a1 * y1 + a2 * y2;
      y2 = y1;
      y1 = y;
      x[i] = y;
    }
    double colored = 0.0;
    for (double v : x) colored += v * v;
    const double gain = std::sqrt(static_cast<double>(n) / std::max(colored, 1e-300));
    for (std::size_t i = 0; i < n; ++i) x[i] = (gain * x[i] + 0.3 * gauss(rng)) * env[i];

    double energy = 0.0;
    for (double v : x) energy += v * v;
    const double rms = std::sqrt(energy / static_cast<double>(n));
    for (double& v : x) v /= rms;
  }
  return out;
}

std::vector<double> convolve_truncated(std::span<const double> x, std::span<const double> h) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double hk = h[k];
    if (hk == 0.0) continue;
    for (std::size_t n = k; n < x.size(); ++n) y[n] += hk * x[n - k];
  }
  return y;
}

Scene render_scene(const SceneSpec& spec) {
  spec.validate();
  Scene scene;
  scene.spec = spec;
  scene.sources = generate_sources(spec);

  const std::size_t P = spec.num_mics;
  const std::size_t C = spec.num_sources;
  const std::size_t L = scene.rir_length();
  const std::size_t n = spec.num_samples();

  scene.rirs.assign(P * C * L, 0.0);
  if (spec.instantaneous()) {
    std::copy(spec.instantaneous_gains.begin(), spec.instantaneous_gains.end(), scene.rirs.begin());
  } else {
    auto rng = make_rng(spec.seed, kRirStream);
    std::uniform_int_distribution<std::size_t> delay(spec.delay_min, spec.delay_max);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t c = 0; c < C; ++c) {
        double* h = scene.rirs.data() + (p * C + c) * L;
        const std::size_t d = delay(rng);
        h[d] = 1.0;
        double amp = spec.tail_gain;
        for (std::size_t k = d + 1; k < L; ++k) {
          amp *= spec.decay_rate;
          h[k] = amp * gauss(rng);
        }
      }
    }
  }

  scene.mixtures = Waveform(P, n, spec.sample_rate);
  auto noise_rng = make_rng(spec.seed, kNoiseStream);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t p = 0; p < P; ++p) {
    Waveform img(C, n, spec.sample_rate);
    auto mix = scene.mixtures.channel(p);
    for (std::size_t c = 0; c < C; ++c) {
      const auto y = convolve_truncated(scene.sources.channel(c), scene.rir(p, c));
      std::copy(y.begin(), y.end(), img.channel(c).begin());
      for (std::size_t i = 0; i < n; ++i) mix[i] += y[i];
    }
    if (spec.noise_level > 0.0) {
      for (std::size_t i = 0; i < n; ++i) mix[i] += spec.noise_level * noise(noise_rng);
    }
    scene.images.push_back(std::move(img));
  }
  return scene;
}

}  // namespace vmbss
