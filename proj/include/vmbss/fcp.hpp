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

#include <span>
#include <string>
#include <vector>

#include "vmbss/signal.hpp"
#include "vmbss/virtual_mic.hpp"

namespace vmbss {

/// Temporal context of the relative filters: `past_taps` earlier frames, the
/// current frame and `future_taps` later frames.
struct FcpConfig {
  std::size_t past_taps = 19;
  std::size_t future_taps = 0;
  /// Diagonal loading relative to the mean per-tap context energy.
  double tikhonov = 1e-4;

  std::size_t taps() const { return past_taps + future_taps + 1; }
  void validate() const;
};

struct LossWeights {
  double w_r = 1.0;
  double w_i = 1.0;
  double w_m = 1.0;
  double alpha = 1.0;  // physical channels
  double beta = 0.02;  // virtual channels

  void validate() const;
};

/// Relative filters g_k(c, f) in C^E, stored [K x C x F x E]. The image of
/// source c at channel k is g^H times the context of the estimate.
class RelativeFilterBank {
 public:
  RelativeFilterBank() = default;
  RelativeFilterBank(std::size_t channels, std::size_t sources, std::size_t bins, std::size_t taps)
      : channels_(channels), sources_(sources), bins_(bins), taps_(taps),
        data_(channels * sources * bins * taps) {}

  std::size_t channels() const { return channels_; }
  std::size_t sources() const { return sources_; }
  std::size_t bins() const { return bins_; }
  std::size_t taps() const { return taps_; }

  cplx& operator()(std::size_t k, std::size_t c, std::size_t f, std::size_t e) {
    return data_[((k * sources_ + c) * bins_ + f) * taps_ + e];
  }
  const cplx& operator()(std::size_t k, std::size_t c, std::size_t f, std::size_t e) const {
    return data_[((k * sources_ + c) * bins_ + f) * taps_ + e];
  }
  /// All F x E taps of one (channel, source) pair.
  std::span<cplx> filters(std::size_t k, std::size_t c) {
    return {data_.data() + (k * sources_ + c) * bins_ * taps_, bins_ * taps_};
  }
  std::span<const cplx> filters(std::size_t k, std::size_t c) const {
    return {data_.data() + (k * sources_ + c) * bins_ * taps_, bins_ * taps_};
  }
  const std::vector<cplx>& data() const { return data_; }

 private:
  std::size_t channels_ = 0;
  std::size_t sources_ = 0;
  std::size_t bins_ = 0;
  std::size_t taps_ = 0;
  std::vector<cplx> data_;
};

struct LossReport {
  std::vector<ChannelTag> tags;
  std::vector<double> per_channel_mc;
  std::vector<double> normalizers;
  double isms = 0.0;
  bool isms_enabled = false;
  double total = 0.0;
  LossWeights weights;
  std::vector<std::string> warnings;

  /// alpha * sum(physical) + beta * sum(virtual) (+ isms when enabled).
  double recompute_total() const;
  double physical_sum() const;
  double virtual_sum() const;
};

// --- single channel building blocks --------------------------------------

/// Closed-form least-squares filter from the context of `est` (channel c) to
/// `obs` (channel k), per frequency. Returns [F x E]. Bins where the estimate
/// has no energy get a zero filter.
std::vector<cplx> fcp_solve(const Spectrogram& obs, std::size_t k, const Spectrogram& est,
                            std::size_t c, const FcpConfig& cfg);

/// g^H * context(est channel c) for filters shaped [F x E]; returns [T x F].
std::vector<cplx> fcp_image(const Spectrogram& est, std::size_t c, std::span<const cplx> filters,
                            const FcpConfig& cfg);

struct McTerm {
  double loss = 0.0;
  double normalizer = 0.0;
  bool degenerate = false;  // all-zero observation
};

/// Mixture-consistency loss of one channel against the sum of images, divided
/// by sum |obs|.
McTerm mc_loss_channel(std::span<const cplx> obs, std::span<const cplx> image_sum, const LossWeights& w);
McTerm mc_loss_channel(std::span<const cplx> obs, const std::vector<std::vector<cplx>>& images,
                       const LossWeights& w);

struct IsmsTerm {
  double value = 0.0;
  bool degenerate = false;  // zero mixture log-magnitude variance
};

/// Intra-source magnitude scattering: per-frame variance over frequency of
/// log-magnitudes, averaged over sources, relative to the mixture's.
/// `images` are [T x F] each.
IsmsTerm isms_loss(const std::vector<std::vector<cplx>>& images, std::span<const cplx> obs,
                   std::size_t frames, std::size_t bins);

// --- whole-stack objective -----------------------------------------------

/// The weighted virtual-microphone loss over an augmented stack. Holds a
/// frequency-major copy of the observations so repeated evaluation with new
/// estimates or filters is cheap.
class McObjective {
 public:
  McObjective(const AugmentedStack& stack, const FcpConfig& fcp, const LossWeights& weights,
              bool isms_enabled);

  const FcpConfig& fcp() const { return fcp_; }
  const LossWeights& weights() const { return weights_; }
  bool isms_enabled() const { return isms_enabled_; }
  std::size_t channels() const { return K_; }
  /// Weight applied to channel k (alpha or beta).
  double channel_weight(std::size_t k) const { return channel_weight_[k]; }
  /// sum |O_k| with the 1e-12 floor.
  double normalizer(std::size_t k) const { return normalizer_[k]; }

  /// O_k minus the sum of source images at channel k, [T x F].
  void residual(const Spectrogram& est, const RelativeFilterBank& g, std::size_t k,
                std::vector<cplx>& out) const;

  /// FCP filters for every (channel, source) pair.
  RelativeFilterBank solve_filters(const Spectrogram& est) const;

  /// Exact loss (true absolute values) for fixed filters.
  LossReport evaluate(const Spectrogram& est, const RelativeFilterBank& g) const;

  /// Loss with |x| replaced by sqrt(x^2 + delta^2), the function the
  /// gradient differentiates.
  double smoothed(const Spectrogram& est, const RelativeFilterBank& g) const;

  /// d(smoothed)/d(Re est) + i d(smoothed)/d(Im est), filters held fixed.
  Spectrogram gradient(const Spectrogram& est, const RelativeFilterBank& g) const;

  static constexpr double kSmoothing = 1e-8;

 private:
  void check(const Spectrogram& est, const RelativeFilterBank* g) const;
  // sum over sources of the images at channel k, [T x F]
  void image_sum(const Spectrogram& est, const RelativeFilterBank& g, std::size_t k,
                 std::vector<cplx>& out) const;
  void source_image(const Spectrogram& est, const RelativeFilterBank& g, std::size_t k, std::size_t c,
                    std::vector<cplx>& out) const;
  double smoothed_impl(const Spectrogram& est, const RelativeFilterBank& g, Spectrogram* grad) const;

  FcpConfig fcp_;
  LossWeights weights_;
  bool isms_enabled_;
  std::size_t K_, T_, F_;
  std::vector<ChannelTag> tags_;
  StftConfig grid_;
  std::vector<double> normalizer_;
  std::vector<double> channel_weight_;
  std::vector<std::vector<cplx>> obs_by_freq_;  // [K][F x T]
  std::vector<cplx> obs_;                       // [K x T x F]
  std::vector<double> obs_abs_;                 // [K x T x F]
  double isms_denominator_ = 0.0;
};

/// Solves all FCP filters and evaluates the loss.
LossReport vm_loss(const AugmentedStack& stack, const Spectrogram& est, const FcpConfig& cfg,
                   const LossWeights& w, bool isms_enabled);

/// Gradient of the smoothed loss with the given filters held constant.
Spectrogram vm_loss_gradient(const AugmentedStack& stack, const Spectrogram& est, const FcpConfig& cfg,
                             const LossWeights& w, const RelativeFilterBank& filters,
                             bool isms_enabled);

}  // namespace vmbss
