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

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <vector>

#include "vmbss/channel_tag.hpp"
#include "vmbss/common.hpp"

namespace vmbss {

using RealMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Multichannel time-domain signal, one row per channel.
class Waveform {
 public:
  Waveform() = default;
  Waveform(RealMatrix samples, int sample_rate);
  Waveform(std::size_t channels, std::size_t length, int sample_rate);

  std::size_t channels() const { return static_cast<std::size_t>(samples_.rows()); }
  std::size_t length() const { return static_cast<std::size_t>(samples_.cols()); }
  int sample_rate() const { return sample_rate_; }

  std::span<const double> channel(std::size_t c) const {
    return {samples_.data() + c * length(), length()};
  }
  std::span<double> channel(std::size_t c) { return {samples_.data() + c * length(), length()}; }

  const RealMatrix& samples() const { return samples_; }
  RealMatrix& samples() { return samples_; }

  /// Single channel copy.
  Waveform select(std::size_t c) const;

  /// Throws InvalidInput on non-finite samples or a non-positive rate.
  void validate() const;

 private:
  RealMatrix samples_;
  int sample_rate_ = 8000;
};

enum class WindowKind { SqrtHann };

struct StftConfig {
  std::size_t window_length = 512;
  std::size_t hop_length = 128;
  std::size_t fft_size = 512;
  WindowKind window_kind = WindowKind::SqrtHann;

  std::size_t num_bins() const { return fft_size / 2 + 1; }
  /// Zero padding placed before the first sample.
  std::size_t lead_padding() const { return window_length - hop_length; }
  std::size_t num_frames(std::size_t signal_length) const;
  /// window_length / hop_length, the number of frames covering each sample.
  std::size_t overlap() const { return window_length / hop_length; }

  /// Throws ConfigError unless the hop divides the window at least twice and
  /// the FFT is at least as long as the window.
  void validate() const;

  /// window/hop in milliseconds at the given rate (rounded to samples, FFT = window).
  static StftConfig from_ms(double window_ms, double hop_ms, int sample_rate);

  bool operator==(const StftConfig&) const = default;
};

/// Complex [channels x frames x bins] tensor, bins fastest.
class Spectrogram {
 public:
  Spectrogram() = default;
  Spectrogram(std::size_t channels, std::size_t frames, const StftConfig& cfg, int sample_rate,
              std::size_t signal_length, std::vector<ChannelTag> tags = {});

  std::size_t channels() const { return channels_; }
  std::size_t frames() const { return frames_; }
  std::size_t bins() const { return bins_; }
  std::size_t channel_size() const { return frames_ * bins_; }

  const StftConfig& config() const { return config_; }
  int sample_rate() const { return sample_rate_; }
  std::size_t signal_length() const { return signal_length_; }

  const std::vector<ChannelTag>& tags() const { return tags_; }
  std::vector<ChannelTag>& tags() { return tags_; }

  cplx& operator()(std::size_t c, std::size_t t, std::size_t f) {
    return data_[(c * frames_ + t) * bins_ + f];
  }
  const cplx& operator()(std::size_t c, std::size_t t, std::size_t f) const {
    return data_[(c * frames_ + t) * bins_ + f];
  }

  std::span<cplx> channel(std::size_t c) { return {data_.data() + c * channel_size(), channel_size()}; }
  std::span<const cplx> channel(std::size_t c) const {
    return {data_.data() + c * channel_size(), channel_size()};
  }

  std::vector<cplx>& data() { return data_; }
  const std::vector<cplx>& data() const { return data_; }

  /// Same grid and config, given channels, zero data.
  Spectrogram like(std::size_t channels, std::vector<ChannelTag> tags = {}) const;
  /// Copies a subset of channels (and their tags).
  Spectrogram select(std::span<const std::size_t> channels) const;
  Spectrogram select(std::size_t c) const;

  /// True when the time-frequency grid (config, frames, rate, length) matches.
  bool same_grid(const Spectrogram& other) const;

  double energy() const;
  double channel_energy(std::size_t c) const;

  void validate() const;

 private:
  std::size_t channels_ = 0;
  std::size_t frames_ = 0;
  std::size_t bins_ = 0;
  StftConfig config_;
  int sample_rate_ = 8000;
  std::size_t signal_length_ = 0;
  std::vector<ChannelTag> tags_;
  std::vector<cplx> data_;
};

/// Analysis window, periodic so that overlapping squared windows sum to a constant.
std::vector<double> make_window(const StftConfig& cfg);

/// One-sided STFT of every channel. Frames are padded with
/// window_length - hop_length zeros in front so every sample is covered by
/// exactly window_length / hop_length frames. Channels are tagged Physical(c).
Spectrogram stft(const Waveform& w, const StftConfig& cfg);

/// Weighted overlap-add inverse of stft(); returns signal_length() samples.
Waveform istft(const Spectrogram& s);

/// Ratio between STFT energy (one-sided bins counted with their mirror) and
/// waveform energy: fft_size * window_length / (2 * hop_length).
double stft_energy_gain(const StftConfig& cfg);
double stft_energy(const Spectrogram& s);

/// Temporal context [Z(t-A,f) ... Z(t+B,f)] of a single channel, zero outside
/// the valid frame range. Stored [T x F x E].
class ContextTensor {
 public:
  ContextTensor(std::span<const cplx> channel, std::size_t frames, std::size_t bins,
                std::size_t past, std::size_t future);

  std::size_t frames() const { return frames_; }
  std::size_t bins() const { return bins_; }
  std::size_t taps() const { return taps_; }

  const cplx& operator()(std::size_t t, std::size_t f, std::size_t e) const {
    return data_[(t * bins_ + f) * taps_ + e];
  }

 private:
  std::size_t frames_;
  std::size_t bins_;
  std::size_t taps_;
  std::vector<cplx> data_;
};

ContextTensor build_context(const Spectrogram& z, std::size_t channel, std::size_t past,
                            std::size_t future);

}  // namespace vmbss
