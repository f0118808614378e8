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

#include "vmbss/signal.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <numbers>
#include <sstream>

namespace vmbss {

namespace {

// FFTW planning is not thread safe; execution on distinct plans is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    real_ = fftw_alloc_real(n);
    spec_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(fftw_planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_, spec_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec_, real_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(forward_);
      fftw_destroy_plan(inverse_);
    }
    fftw_free(real_);
    fftw_free(spec_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* real() { return real_; }
  cplx* spectrum() { return reinterpret_cast<cplx*>(spec_); }
  void forward() { fftw_execute(forward_); }
  // Unnormalized: the result is scaled by n.
  void inverse() { fftw_execute(inverse_); }

 private:
  std::size_t n_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

}  // namespace

Waveform::Waveform(RealMatrix samples, int sample_rate)
    : samples_(std::move(samples)), sample_rate_(sample_rate) {}

Waveform::Waveform(std::size_t channels, std::size_t length, int sample_rate)
    : samples_(RealMatrix::Zero(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(length))),
      sample_rate_(sample_rate) {}

Waveform Waveform::select(std::size_t c) const {
  require_input(c < channels(), "Waveform::select: channel out of range");
  return Waveform(samples_.row(static_cast<Eigen::Index>(c)), sample_rate_);
}

void Waveform::validate() const {
  require_input(sample_rate_ > 0, "waveform sample rate must be positive");
  require_input(samples_.allFinite(), "waveform contains non-finite samples");
}

std::size_t StftConfig::num_frames(std::size_t signal_length) const {
  const std::size_t span = signal_length + window_length - 2 * hop_length;
  return (span + hop_length - 1) / hop_length + 1;
}

void StftConfig::validate() const {
  require_config(window_length > 0 && hop_length > 0, "STFT window and hop must be positive");
  require_config(window_length % hop_length == 0, "STFT hop must divide the window length");
  require_config(window_length / hop_length >= 2, "STFT hop must be at most half the window");
  require_config(fft_size >= window_length, "STFT fft_size must be >= window_length");
}

StftConfig StftConfig::from_ms(double window_ms, double hop_ms, int sample_rate) {
  StftConfig cfg;
  cfg.window_length = static_cast<std::size_t>(std::lround(window_ms * sample_rate / 1000.0));
  cfg.hop_length = static_cast<std::size_t>(std::lround(hop_ms * sample_rate / 1000.0));
  cfg.fft_size = cfg.window_length;
  cfg.validate();
  return cfg;
}

Spectrogram::Spectrogram(std::size_t channels, std::size_t frames, const StftConfig& cfg,
                         int sample_rate, std::size_t signal_length, std::vector<ChannelTag> tags)
    : channels_(channels),
      frames_(frames),
      bins_(cfg.num_bins()),
      config_(cfg),
      sample_rate_(sample_rate),
      signal_length_(signal_length),
      tags_(std::move(tags)),
      data_(channels * frames * cfg.num_bins()) {
  if (tags_.empty()) {
    for (std::size_t c = 0; c < channels; ++c) tags_.push_back(Physical{c});
  }
  require_input(tags_.size() == channels_, "Spectrogram: tag count must equal channel count");
}

Spectrogram Spectrogram::like(std::size_t channels, std::vector<ChannelTag> tags) const {
  return Spectrogram(channels, frames_, config_, sample_rate_, signal_length_, std::move(tags));
}

Spectrogram Spectrogram::select(std::span<const std::size_t> channels) const {
  std::vector<ChannelTag> tags;
  for (auto c : channels) {
    require_input(c < channels_, "Spectrogram::select: channel out of range");
    tags.push_back(tags_[c]);
  }
  Spectrogram out = like(channels.size(), std::move(tags));
  for (std::size_t i = 0; i < channels.size(); ++i) {
    auto src = channel(channels[i]);
    std::copy(src.begin(), src.end(), out.channel(i).begin());
  }
  return out;
}

Spectrogram Spectrogram::select(std::size_t c) const {
  const std::size_t idx[1] = {c};
  return select(std::span<const std::size_t>(idx, 1));
}

bool Spectrogram::same_grid(const Spectrogram& other) const {
  return config_ == other.config_ && frames_ == other.frames_ && bins_ == other.bins_ &&
         sample_rate_ == other.sample_rate_ && signal_length_ == other.signal_length_;
}

double Spectrogram::channel_energy(std::size_t c) const {
  double e = 0.0;
  for (const auto& v : channel(c)) e += std::norm(v);
  return e;
}

double Spectrogram::energy() const {
  double e = 0.0;
  for (const auto& v : data_) e += std::norm(v);
  return e;
}

void Spectrogram::validate() const {
  require_input(bins_ == config_.num_bins(), "Spectrogram: bins must equal fft_size/2+1");
  require_input(tags_.size() == channels_, "Spectrogram: tag count must equal channel count");
  require_input(data_.size() == channels_ * frames_ * bins_, "Spectrogram: data size mismatch");
  require_input(frames_ == config_.num_frames(signal_length_),
                "Spectrogram: frame count inconsistent with signal length");
  for (const auto& v : data_) {
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw InvalidInput("Spectrogram contains non-finite entries");
  }
}

std::vector<double> make_window(const StftConfig& cfg) {
  std::vector<double> w(cfg.window_length);
  const double n = static_cast<double>(cfg.window_length);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
    w[i] = std::sqrt(hann);
  }
  return w;
}

Spectrogram stft(const Waveform& w, const StftConfig& cfg) {
  cfg.validate();
  require_input(w.channels() > 0 && w.length() > 0, "stft: waveform is empty");
  w.validate();

  const std::size_t frames = cfg.num_frames(w.length());
  const std::size_t lead = cfg.lead_padding();
  const std::size_t win = cfg.window_length;
  const auto window = make_window(cfg);
  Spectrogram out(w.channels(), frames, cfg, w.sample_rate(), w.length());

  RealFft fft(cfg.fft_size);
  const std::size_t bins = cfg.num_bins();
  for (std::size_t c = 0; c < w.channels(); ++c) {
    const auto x = w.channel(c);
    for (std::size_t t = 0; t < frames; ++t) {
      double* buf = fft.real();
      std::fill(buf, buf + cfg.fft_size, 0.0);
      // padded index t*hop + i maps to sample t*hop + i - lead
      for (std::size_t i = 0; i < win; ++i) {
        const std::size_t padded = t * cfg.hop_length + i;
        if (padded < lead) continue;
        const std::size_t n = padded - lead;
        if (n >= x.size()) break;
        buf[i] = x[n] * window[i];
      }
      fft.forward();
      const cplx* spec = fft.spectrum();
      for (std::size_t f = 0; f < bins; ++f) out(c, t, f) = spec[f];
    }
  }
  return out;
}

Waveform istft(const Spectrogram& s) {
  const StftConfig& cfg = s.config();
  cfg.validate();
  require_input(s.bins() == cfg.num_bins(), "istft: bin count does not match config");
  require_input(s.frames() == cfg.num_frames(s.signal_length()),
                "istft: frame count does not match signal length");
  require_input(s.data().size() == s.channels() * s.frames() * s.bins(), "istft: data size mismatch");

  const std::size_t len = s.signal_length();
  const std::size_t lead = cfg.lead_padding();
  const std::size_t win = cfg.window_length;
  const auto window = make_window(cfg);

  std::vector<double> norm(len, 0.0);
  for (std::size_t t = 0; t < s.frames(); ++t) {
    for (std::size_t i = 0; i < win; ++i) {
      const std::size_t padded = t * cfg.hop_length + i;
      if (padded < lead || padded - lead >= len) continue;
      norm[padded - lead] += window[i] * window[i];
    }
  }

  Waveform out(s.channels(), len, s.sample_rate());
  RealFft fft(cfg.fft_size);
  const double scale = 1.0 / static_cast<double>(cfg.fft_size);
  for (std::size_t c = 0; c < s.channels(); ++c) {
    auto y = out.channel(c);
    for (std::size_t t = 0; t < s.frames(); ++t) {
      cplx* spec = fft.spectrum();
      for (std::size_t f = 0; f < s.bins(); ++f) spec[f] = s(c, t, f);
      // c2r ignores the imaginary part of DC and Nyquist implicitly
      fft.inverse();
      const double* buf = fft.real();
      for (std::size_t i = 0; i < win; ++i) {
        const std::size_t padded = t * cfg.hop_length + i;
        if (padded < lead || padded - lead >= len) continue;
        y[padded - lead] += buf[i] * scale * window[i];
      }
    }
    for (std::size_t n = 0; n < len; ++n) y[n] /= norm[n];
  }
  return out;
}

double stft_energy_gain(const StftConfig& cfg) {
  return static_cast<double>(cfg.fft_size) * static_cast<double>(cfg.window_length) /
         (2.0 * static_cast<double>(cfg.hop_length));
}

double stft_energy(const Spectrogram& s) {
  const std::size_t nyquist = s.config().fft_size % 2 == 0 ? s.bins() - 1 : s.bins();
  double e = 0.0;
  for (std::size_t c = 0; c < s.channels(); ++c)
    for (std::size_t t = 0; t < s.frames(); ++t)
      for (std::size_t f = 0; f < s.bins(); ++f) {
        const double weight = (f == 0 || f == nyquist) ? 1.0 : 2.0;
        e += weight * std::norm(s(c, t, f));
      }
  return e;
}

ContextTensor::ContextTensor(std::span<const cplx> channel, std::size_t frames, std::size_t bins,
                             std::size_t past, std::size_t future)
    : frames_(frames), bins_(bins), taps_(past + future + 1), data_(frames * bins * taps_) {
  require_input(channel.size() == frames * bins, "build_context: channel size mismatch");
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t e = 0; e < taps_; ++e) {
      // tap e holds frame t - past + e
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + e) - static_cast<std::ptrdiff_t>(past);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
      for (std::size_t f = 0; f < bins; ++f)
        data_[(t * bins + f) * taps_ + e] = channel[static_cast<std::size_t>(src) * bins + f];
    }
  }
}

ContextTensor build_context(const Spectrogram& z, std::size_t channel, std::size_t past,
                            std::size_t future) {
  require_input(channel < z.channels(), "build_context: channel out of range");
  return ContextTensor(z.channel(channel), z.frames(), z.bins(), past, future);
}

std::string to_string(const ChannelTag& tag) {
  std::ostringstream os;
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, Physical>) os << "P" << t.mic;
        else if constexpr (std::is_same_v<T, Virtual>) os << "V" << t.mic << "." << t.source;
        else os << "S" << t.index;
      },
      tag);
  return os.str();
}

ChannelTag parse_channel_tag(const std::string& text) {
  require_input(text.size() >= 2, "invalid channel tag '" + text + "'");
  try {
    const std::string body = text.substr(1);
    std::size_t used = 0;
    switch (text[0]) {
      case 'P': {
        const auto mic = std::stoul(body, &used);
        if (used == body.size()) return Physical{mic};
        break;
      }
      case 'S': {
        const auto idx = std::stoul(body, &used);
        if (used == body.size()) return Source{idx};
        break;
      }
      case 'V': {
        const auto dot = body.find('.');
        if (dot == std::string::npos) break;
        const auto mic = std::stoul(body.substr(0, dot));
        const auto src = std::stoul(body.substr(dot + 1), &used);
        if (dot + 1 + used == body.size()) return Virtual{mic, src};
        break;
      }
      default:
        break;
    }
  } catch (const std::logic_error&) {
  }
  throw InvalidInput("invalid channel tag '" + text + "'");
}

}  // namespace vmbss
