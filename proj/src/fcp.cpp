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

#include "vmbss/fcp.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numeric>

#include "vmbss/log.hpp"

namespace vmbss {

using Eigen::Index;

void FcpConfig::validate() const {
  require_config(tikhonov >= 0.0 && std::isfinite(tikhonov), "fcp: tikhonov must be a non-negative number");
}

void LossWeights::validate() const {
  require_config(w_r >= 0.0 && w_i >= 0.0 && w_m >= 0.0, "loss: component weights must be non-negative");
  require_config(w_r + w_i + w_m > 0.0, "loss: at least one of w_r, w_i, w_m must be positive");
  require_config(alpha >= 0.0 && beta >= 0.0, "loss: alpha and beta must be non-negative");
}

double LossReport::physical_sum() const {
  double s = 0.0;
  for (std::size_t k = 0; k < tags.size(); ++k)
    if (is_physical(tags[k])) s += per_channel_mc[k];
  return s;
}

double LossReport::virtual_sum() const {
  double s = 0.0;
  for (std::size_t k = 0; k < tags.size(); ++k)
    if (is_virtual(tags[k])) s += per_channel_mc[k];
  return s;
}

double LossReport::recompute_total() const {
  double t = weights.alpha * physical_sum() + weights.beta * virtual_sum();
  if (isms_enabled) t += isms;
  return t;
}

namespace {

constexpr double kNormalizerFloor = 1e-12;
constexpr double kMagnitudeFloor = 1e-8;
constexpr double kIsmsDenominatorFloor = 1e-12;

// Least-squares filter for one bin from frequency-major series z (estimate)
// and o (observation), both length T.
class BinSolver {
 public:
  BinSolver(const cplx* z, std::size_t T, const FcpConfig& cfg)
      : z_(z), T_(T), A_(static_cast<std::ptrdiff_t>(cfg.past_taps)), E_(static_cast<Index>(cfg.taps())) {
    Eigen::MatrixXcd R = Eigen::MatrixXcd::Zero(E_, E_);
    for (Index i = 0; i < E_; ++i) {
      for (Index j = i; j < E_; ++j) {
        cplx acc{};
        for (std::size_t t = 0; t < T_; ++t) {
          const cplx* a = at(t, i);
          const cplx* b = at(t, j);
          if (a && b) acc += *a * std::conj(*b);
        }
        R(i, j) = acc;
        R(j, i) = std::conj(acc);
      }
    }
    const double trace = R.trace().real();
    zero_ = !(trace > 0.0);
    if (zero_) return;
    R.diagonal().array() += cfg.tikhonov * trace / static_cast<double>(E_);
    ldlt_.compute(R);
    if (ldlt_.info() != Eigen::Success || !ldlt_.isPositive()) {
      pinv_ = R.completeOrthogonalDecomposition().pseudoInverse();
      use_pinv_ = true;
    }
  }

  // Filter taps for observation series o, written to out[0..E).
  void solve(const cplx* o, cplx* out) const {
    if (zero_) {
      std::fill(out, out + E_, cplx{});
      return;
    }
    Eigen::VectorXcd r(E_);
    for (Index i = 0; i < E_; ++i) {
      cplx acc{};
      for (std::size_t t = 0; t < T_; ++t) {
        const cplx* a = at(t, i);
        if (a) acc += *a * std::conj(o[t]);
      }
      r(i) = acc;
    }
    const Eigen::VectorXcd g = use_pinv_ ? Eigen::VectorXcd(pinv_ * r) : Eigen::VectorXcd(ldlt_.solve(r));
    for (Index i = 0; i < E_; ++i) out[i] = g(i);
  }

 private:
  // context tap i of frame t, or null when outside the signal
  const cplx* at(std::size_t t, Index i) const {
    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - A_ + i;
    if (src < 0 || src >= static_cast<std::ptrdiff_t>(T_)) return nullptr;
    return z_ + src;
  }

  const cplx* z_;
  std::size_t T_;
  std::ptrdiff_t A_;
  Index E_;
  bool zero_ = false;
  bool use_pinv_ = false;
  Eigen::LDLT<Eigen::MatrixXcd> ldlt_;
  Eigen::MatrixXcd pinv_;
};

std::vector<cplx> to_freq_major(std::span<const cplx> ch, std::size_t T, std::size_t F) {
  std::vector<cplx> out(T * F);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f) out[f * T + t] = ch[t * F + f];
  return out;
}

// out[t][f] += sum_e conj(g[f][e]) * z[t - A + e][f]
void accumulate_image(std::span<const cplx> z, std::span<const cplx> g, std::size_t T, std::size_t F,
                      std::size_t A, std::size_t E, std::vector<cplx>& out) {
  std::vector<cplx> gc(E * F);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t e = 0; e < E; ++e) gc[e * F + f] = std::conj(g[f * E + e]);
  for (std::size_t e = 0; e < E; ++e) {
    const cplx* ge = gc.data() + e * F;
    for (std::size_t t = 0; t < T; ++t) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + e) - static_cast<std::ptrdiff_t>(A);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      const cplx* zs = z.data() + static_cast<std::size_t>(src) * F;
      cplx* o = out.data() + t * F;
      for (std::size_t f = 0; f < F; ++f) o[f] += ge[f] * zs[f];
    }
  }
}

// grad[t'][f] += sum_e g[f][e] * G[t' + A - e][f]  (adjoint of accumulate_image)
void accumulate_adjoint(std::span<const cplx> G, std::span<const cplx> g, std::size_t T, std::size_t F,
                        std::size_t A, std::size_t E, std::span<cplx> grad) {
  std::vector<cplx> gt(E * F);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t e = 0; e < E; ++e) gt[e * F + f] = g[f * E + e];
  for (std::size_t e = 0; e < E; ++e) {
    const cplx* ge = gt.data() + e * F;
    for (std::size_t t = 0; t < T; ++t) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + e) - static_cast<std::ptrdiff_t>(A);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      const cplx* Gt = G.data() + t * F;
      cplx* d = grad.data() + static_cast<std::size_t>(src) * F;
      for (std::size_t f = 0; f < F; ++f) d[f] += ge[f] * Gt[f];
    }
  }
}

inline double smooth_abs(double x, double d) { return std::sqrt(x * x + d * d); }

double log_variance_sum(std::span<const cplx> x, std::size_t T, std::size_t F) {
  double total = 0.0;
  std::vector<double> l(F);
  for (std::size_t t = 0; t < T; ++t) {
    double mean = 0.0;
    for (std::size_t f = 0; f < F; ++f) {
      l[f] = std::log(std::max(std::abs(x[t * F + f]), kMagnitudeFloor));
      mean += l[f];
    }
    mean /= static_cast<double>(F);
    double var = 0.0;
    for (std::size_t f = 0; f < F; ++f) var += (l[f] - mean) * (l[f] - mean);
    total += var / static_cast<double>(F);
  }
  return total;
}

}  // namespace

std::vector<cplx> fcp_solve(const Spectrogram& obs, std::size_t k, const Spectrogram& est, std::size_t c,
                            const FcpConfig& cfg) {
  cfg.validate();
  require_input(obs.frames() == est.frames() && obs.bins() == est.bins(), "fcp_solve: obs/est grid mismatch");
  require_input(k < obs.channels() && c < est.channels(), "fcp_solve: channel out of range");
  const std::size_t T = est.frames(), F = est.bins(), E = cfg.taps();
  const auto z = to_freq_major(est.channel(c), T, F);
  const auto o = to_freq_major(obs.channel(k), T, F);
  std::vector<cplx> out(F * E);
  for (std::size_t f = 0; f < F; ++f) {
    BinSolver solver(z.data() + f * T, T, cfg);
    solver.solve(o.data() + f * T, out.data() + f * E);
  }
  return out;
}

std::vector<cplx> fcp_image(const Spectrogram& est, std::size_t c, std::span<const cplx> filters,
                            const FcpConfig& cfg) {
  require_input(c < est.channels(), "fcp_image: channel out of range");
  require_input(filters.size() == est.bins() * cfg.taps(), "fcp_image: filter shape mismatch");
  std::vector<cplx> out(est.channel_size());
  accumulate_image(est.channel(c), filters, est.frames(), est.bins(), cfg.past_taps, cfg.taps(), out);
  return out;
}

McTerm mc_loss_channel(std::span<const cplx> obs, std::span<const cplx> image_sum, const LossWeights& w) {
  require_input(obs.size() == image_sum.size(), "mc_loss_channel: shape mismatch");
  McTerm term;
  double raw = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const cplx r = obs[i] - image_sum[i];
    const double mag_o = std::abs(obs[i]);
    raw += w.w_r * std::abs(r.real()) + w.w_i * std::abs(r.imag()) + w.w_m * std::abs(mag_o - std::abs(image_sum[i]));
    norm += mag_o;
  }
  term.degenerate = norm < kNormalizerFloor;
  term.normalizer = std::max(norm, kNormalizerFloor);
  term.loss = raw / term.normalizer;
  return term;
}

McTerm mc_loss_channel(std::span<const cplx> obs, const std::vector<std::vector<cplx>>& images,
                       const LossWeights& w) {
  std::vector<cplx> sum(obs.size());
  for (const auto& img : images) {
    require_input(img.size() == obs.size(), "mc_loss_channel: image shape mismatch");
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += img[i];
  }
  return mc_loss_channel(obs, sum, w);
}

IsmsTerm isms_loss(const std::vector<std::vector<cplx>>& images, std::span<const cplx> obs, std::size_t frames,
                   std::size_t bins) {
  require_input(obs.size() == frames * bins, "isms_loss: observation shape mismatch");
  require_input(!images.empty(), "isms_loss: no source images");
  double numerator = 0.0;
  for (const auto& img : images) {
    require_input(img.size() == frames * bins, "isms_loss: image shape mismatch");
    numerator += log_variance_sum(img, frames, bins);
  }
  numerator /= static_cast<double>(images.size());
  const double denominator = log_variance_sum(obs, frames, bins);
  IsmsTerm term;
  term.degenerate = denominator < kIsmsDenominatorFloor;
  term.value = numerator / std::max(denominator, kIsmsDenominatorFloor);
  return term;
}

McObjective::McObjective(const AugmentedStack& stack, const FcpConfig& fcp, const LossWeights& weights,
                         bool isms_enabled)
    : fcp_(fcp),
      weights_(weights),
      isms_enabled_(isms_enabled),
      K_(stack.observations.channels()),
      T_(stack.observations.frames()),
      F_(stack.observations.bins()),
      tags_(stack.observations.tags()),
      grid_(stack.observations.config()) {
  fcp_.validate();
  weights_.validate();
  stack.validate();
  require_input(stack.num_physical >= 1, "loss: the stack needs at least one physical channel");
  const auto& obs = stack.observations;
  obs_abs_.resize(K_ * T_ * F_);
  for (std::size_t k = 0; k < K_; ++k) {
    const auto ch = obs.channel(k);
    double norm = 0.0;
    for (std::size_t i = 0; i < ch.size(); ++i) {
      obs_abs_[k * T_ * F_ + i] = std::abs(ch[i]);
      norm += obs_abs_[k * T_ * F_ + i];
    }
    normalizer_.push_back(std::max(norm, kNormalizerFloor));
    channel_weight_.push_back(is_physical(tags_[k]) ? weights_.alpha : weights_.beta);
    obs_by_freq_.push_back(to_freq_major(ch, T_, F_));
  }
  obs_ = obs.data();
  isms_denominator_ = log_variance_sum(obs.channel(0), T_, F_);
}

void McObjective::check(const Spectrogram& est, const RelativeFilterBank* g) const {
  require_input(est.frames() == T_ && est.bins() == F_, "loss: estimate grid differs from the stack");
  require_input(est.channels() >= 1, "loss: need at least one source estimate");
  if (g) {
    require_input(g->channels() == K_ && g->sources() == est.channels() && g->bins() == F_ &&
                      g->taps() == fcp_.taps(),
                  "loss: filter bank shape differs from stack/estimates");
  }
}

RelativeFilterBank McObjective::solve_filters(const Spectrogram& est) const {
  check(est, nullptr);
  const std::size_t C = est.channels(), E = fcp_.taps();
  RelativeFilterBank bank(K_, C, F_, E);
  for (std::size_t c = 0; c < C; ++c) {
    const auto z = to_freq_major(est.channel(c), T_, F_);
    for (std::size_t f = 0; f < F_; ++f) {
      BinSolver solver(z.data() + f * T_, T_, fcp_);
      for (std::size_t k = 0; k < K_; ++k) solver.solve(obs_by_freq_[k].data() + f * T_, &bank(k, c, f, 0));
    }
  }
  return bank;
}

void McObjective::image_sum(const Spectrogram& est, const RelativeFilterBank& g, std::size_t k,
                            std::vector<cplx>& out) const {
  out.assign(T_ * F_, cplx{});
  for (std::size_t c = 0; c < est.channels(); ++c)
    accumulate_image(est.channel(c), g.filters(k, c), T_, F_, fcp_.past_taps, fcp_.taps(), out);
}

void McObjective::source_image(const Spectrogram& est, const RelativeFilterBank& g, std::size_t k,
                               std::size_t c, std::vector<cplx>& out) const {
  out.assign(T_ * F_, cplx{});
  accumulate_image(est.channel(c), g.filters(k, c), T_, F_, fcp_.past_taps, fcp_.taps(), out);
}

void McObjective::residual(const Spectrogram& est, const RelativeFilterBank& g, std::size_t k,
                           std::vector<cplx>& out) const {
  check(est, &g);
  image_sum(est, g, k, out);
  const cplx* obs = obs_.data() + k * T_ * F_;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = obs[i] - out[i];
}

LossReport McObjective::evaluate(const Spectrogram& est, const RelativeFilterBank& g) const {
  check(est, &g);
  LossReport rep;
  rep.tags = tags_;
  rep.weights = weights_;
  rep.isms_enabled = isms_enabled_;
  std::vector<cplx> sum;
  for (std::size_t k = 0; k < K_; ++k) {
    image_sum(est, g, k, sum);
    const std::span<const cplx> obs(obs_.data() + k * T_ * F_, T_ * F_);
    const McTerm term = mc_loss_channel(obs, sum, weights_);
    rep.per_channel_mc.push_back(term.loss);
    rep.normalizers.push_back(term.normalizer);
    if (term.degenerate) rep.warnings.push_back("channel " + to_string(tags_[k]) + " is all zero");
  }
  if (isms_enabled_) {
    std::vector<std::vector<cplx>> images(est.channels());
    for (std::size_t c = 0; c < est.channels(); ++c) source_image(est, g, 0, c, images[c]);
    const IsmsTerm term = isms_loss(images, std::span<const cplx>(obs_.data(), T_ * F_), T_, F_);
    rep.isms = term.value;
    if (term.degenerate) rep.warnings.push_back("isms: reference mixture has constant log-magnitude");
  }
  rep.total = rep.recompute_total();
  return rep;
}

double McObjective::smoothed_impl(const Spectrogram& est, const RelativeFilterBank& g, Spectrogram* grad) const {
  check(est, &g);
  const double d = kSmoothing;
  const std::size_t N = T_ * F_;
  const std::size_t A = fcp_.past_taps, E = fcp_.taps();
  double total = 0.0;
  std::vector<cplx> sum, G(N);
  for (std::size_t k = 0; k < K_; ++k) {
    const double scale = channel_weight_[k] / normalizer_[k];
    if (scale == 0.0) continue;
    image_sum(est, g, k, sum);
    const cplx* obs = obs_.data() + k * N;
    const double* mag_o = obs_abs_.data() + k * N;
    double raw = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const cplx r = obs[i] - sum[i];
      const double m = std::sqrt(std::norm(sum[i]) + d * d);
      const double u = mag_o[i] - m;
      const double sr = smooth_abs(r.real(), d), si = smooth_abs(r.imag(), d), su = smooth_abs(u, d);
      raw += weights_.w_r * sr + weights_.w_i * si + weights_.w_m * su;
      if (grad) {
        const double du = weights_.w_m * (u / su) / m;
        G[i] = scale * cplx(-weights_.w_r * r.real() / sr - du * sum[i].real(),
                            -weights_.w_i * r.imag() / si - du * sum[i].imag());
      }
    }
    total += scale * raw;
    if (grad) {
      for (std::size_t c = 0; c < est.channels(); ++c)
        accumulate_adjoint(G, g.filters(k, c), T_, F_, A, E, grad->channel(c));
    }
  }

  if (isms_enabled_) {
    const double denom = std::max(isms_denominator_, kIsmsDenominatorFloor);
    const double C = static_cast<double>(est.channels());
    std::vector<cplx> img;
    std::vector<double> l(F_);
    for (std::size_t c = 0; c < est.channels(); ++c) {
      source_image(est, g, 0, c, img);
      double numer = 0.0;
      for (std::size_t t = 0; t < T_; ++t) {
        double mean = 0.0;
        for (std::size_t f = 0; f < F_; ++f) {
          l[f] = 0.5 * std::log(std::norm(img[t * F_ + f]) + d * d);
          mean += l[f];
        }
        mean /= static_cast<double>(F_);
        double var = 0.0;
        for (std::size_t f = 0; f < F_; ++f) var += (l[f] - mean) * (l[f] - mean);
        numer += var / static_cast<double>(F_);
        if (grad) {
          for (std::size_t f = 0; f < F_; ++f) {
            const cplx x = img[t * F_ + f];
            const double dl = 2.0 * (l[f] - mean) / static_cast<double>(F_) / C / denom;
            G[t * F_ + f] = dl * x / (std::norm(x) + d * d);
          }
        }
      }
      total += numer / C / denom;
      if (grad) accumulate_adjoint(G, g.filters(0, c), T_, F_, A, E, grad->channel(c));
    }
  }
  return total;
}

double McObjective::smoothed(const Spectrogram& est, const RelativeFilterBank& g) const {
  return smoothed_impl(est, g, nullptr);
}

Spectrogram McObjective::gradient(const Spectrogram& est, const RelativeFilterBank& g) const {
  Spectrogram grad = est.like(est.channels(), est.tags());
  smoothed_impl(est, g, &grad);
  return grad;
}

LossReport vm_loss(const AugmentedStack& stack, const Spectrogram& est, const FcpConfig& cfg,
                   const LossWeights& w, bool isms_enabled) {
  const McObjective objective(stack, cfg, w, isms_enabled);
  return objective.evaluate(est, objective.solve_filters(est));
}

Spectrogram vm_loss_gradient(const AugmentedStack& stack, const Spectrogram& est, const FcpConfig& cfg,
                             const LossWeights& w, const RelativeFilterBank& filters, bool isms_enabled) {
  const McObjective objective(stack, cfg, w, isms_enabled);
  return objective.gradient(est, filters);
}

}  // namespace vmbss
