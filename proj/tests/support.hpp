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

#include <cmath>
#include <complex>
#include <random>
#include <span>
#include <vector>

#include "vmbss/signal.hpp"

namespace vmbss::testing {

inline Waveform random_waveform(std::size_t channels, std::size_t length, std::uint64_t seed, int rate = 8000) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Waveform w(channels, length, rate);
  for (std::size_t c = 0; c < channels; ++c)
    for (auto& v : w.channel(c)) v = g(rng);
  return w;
}

/// Complex Gaussian spectrogram on a grid with `frames` frames.
inline Spectrogram random_spectrogram(std::size_t channels, std::size_t frames, const StftConfig& cfg,
                                      std::uint64_t seed, std::vector<ChannelTag> tags = {}) {
  // longest signal that yields exactly `frames` frames
  const std::size_t length = (frames + 1) * cfg.hop_length - cfg.window_length;
  Spectrogram s(channels, frames, cfg, 8000, length, std::move(tags));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  for (auto& v : s.data()) v = {g(rng), g(rng)};
  return s;
}

/// Smallest grid with the requested bin count: fft = 2 (bins - 1), hop = fft / 2.
inline StftConfig tiny_grid(std::size_t bins) {
  const std::size_t fft = 2 * (bins - 1);
  return StftConfig{fft, fft / 2, fft};
}

inline double rel_l2(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

inline double rel_l2(std::span<const cplx> a, std::span<const cplx> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::norm(a[i] - b[i]);
    den += std::norm(b[i]);
  }
  return std::sqrt(num / den);
}

inline double max_abs(std::span<const cplx> a) {
  double m = 0.0;
  for (const auto& v : a) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace vmbss::testing
