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

#include "vmbss/separator.hpp"

#include <cmath>
#include <random>
#include <string>

#include "vmbss/log.hpp"

namespace vmbss {

namespace {

constexpr std::uint64_t kSplitStream = 4000;
constexpr std::size_t kMaxHalvings = 10;
constexpr std::size_t kEarlyStopWindow = 20;

double rms(std::span<const cplx> x) {
  if (x.empty()) return 0.0;
  double e = 0.0;
  for (const cplx& v : x) e += std::norm(v);
  return std::sqrt(e / static_cast<double>(x.size()));
}

void require_finite(const Spectrogram& s, const std::string& what) {
  for (std::size_t c = 0; c < s.channels(); ++c)
    for (std::size_t t = 0; t < s.frames(); ++t)
      for (std::size_t f = 0; f < s.bins(); ++f)
        if (!std::isfinite(s(c, t, f).real()) || !std::isfinite(s(c, t, f).imag()))
          throw NumericalError("separate: non-finite " + what + " for source " + std::to_string(c) + " at frame " +
                               std::to_string(t) + ", frequency bin " + std::to_string(f));
}

// Scales the gradient by the inverse of an iteratively reweighted
// least-squares normal matrix, per (t, f): sum_k w_k g_k g_k^H with g_k the
// current-frame taps of channel k and w_k = weight_k / (N_k max(|R_k|, floor)).
// The matrix is Hermitian positive definite, so the result is still a descent
// direction, and a unit step moves the L1 residual towards zero.
void precondition(const McObjective& objective, const Spectrogram& z, const RelativeFilterBank& g,
                  Spectrogram& grad) {
  const std::size_t K = objective.channels(), C = z.channels(), T = z.frames(), F = z.bins();
  const std::size_t N = T * F, tap = objective.fcp().past_taps;
  const LossWeights& w = objective.weights();
  const double unit = w.w_r + w.w_i + w.w_m;

  std::vector<std::vector<double>> weight(K);
  std::vector<cplx> r;
  for (std::size_t k = 0; k < K; ++k) {
    const double scale = objective.channel_weight(k) * unit / objective.normalizer(k);
    if (scale == 0.0) continue;
    objective.residual(z, g, k, r);
    const double floor = std::max(1e-3 * objective.normalizer(k) / static_cast<double>(N), 1e-300);
    weight[k].resize(N);
    for (std::size_t i = 0; i < N; ++i) weight[k][i] = scale / std::max(std::abs(r[i]), floor);
  }

  const auto C_ = static_cast<Eigen::Index>(C);
  Eigen::MatrixXcd H(C_, C_);
  Eigen::VectorXcd v(C_);
  Eigen::VectorXcd h(C_);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t i = t * F + f;
      H.setZero();
      for (std::size_t k = 0; k < K; ++k) {
        if (weight[k].empty()) continue;
        for (std::size_t c = 0; c < C; ++c) h(static_cast<Eigen::Index>(c)) = g(k, c, f, tap);
        H.noalias() += weight[k][i] * h * h.adjoint();
      }
      const double load = 1e-6 * H.trace().real() / static_cast<double>(C) + 1e-300;
      H.diagonal().array() += load;
      for (std::size_t c = 0; c < C; ++c) v(static_cast<Eigen::Index>(c)) = grad(c, t, f);
      const Eigen::VectorXcd d = H.llt().solve(v);
      for (std::size_t c = 0; c < C; ++c) grad(c, t, f) = d(static_cast<Eigen::Index>(c));
    }
  }
}

}  // namespace

std::string to_string(InitMode m) { return m == InitMode::IvaEstimates ? "iva_estimates" : "mixture_split"; }

InitMode parse_init_mode(const std::string& s) {
  if (s == "iva_estimates") return InitMode::IvaEstimates;
  if (s == "mixture_split") return InitMode::MixtureSplit;
  throw ConfigError("unknown separator init mode '" + s + "' (iva_estimates, mixture_split)");
}

void SeparatorConfig::validate() const {
  require_config(fcp_refresh_every >= 1, "separator: fcp_refresh_every must be at least 1");
  require_config(step_size > 0.0 && std::isfinite(step_size), "separator: step_size must be positive");
  require_config(early_stop_rel_tol >= 0.0, "separator: early_stop_rel_tol must be non-negative");
  require_config(num_sources >= 1, "separator: num_sources must be at least 1");
  loss_weights.validate();
  fcp.validate();
}

Spectrogram init_estimates(const AugmentedStack& stack, const DemixingSolution* sol, const SeparatorConfig& cfg) {
  cfg.validate();
  stack.validate();
  const Spectrogram& obs = stack.observations;
  if (cfg.init == InitMode::IvaEstimates) {
    require_config(sol != nullptr, "separator: init iva_estimates needs a demixing solution");
    sol->validate();
    const Spectrogram& s = sol->separated;
    const std::size_t C = s.channels();
    std::vector<ChannelTag> tags;
    for (std::size_t c = 0; c < C; ++c) tags.push_back(Source{c});
    Spectrogram z = s.like(C, tags);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < s.frames(); ++t)
        for (std::size_t f = 0; f < s.bins(); ++f)
          z(c, t, f) = sol->A[f](0, static_cast<Eigen::Index>(c)) * s(c, t, f);
    z = regrid(z, obs.config());
    require_input(z.frames() == obs.frames() && z.bins() == obs.bins(),
                  "separator: demixer output does not fit the stack grid");
    return z;
  }

  const std::size_t C = cfg.num_sources;
  std::vector<ChannelTag> tags;
  for (std::size_t c = 0; c < C; ++c) tags.push_back(Source{c});
  Spectrogram z = obs.like(C, tags);
  const auto y = obs.channel(0);
  const double share = 1.0 / static_cast<double>(C);
  // -40 dB relative to each share, split evenly between real and imaginary parts
  const double sigma = 1e-2 * share * rms(y) / std::sqrt(2.0);
  auto rng = make_rng(cfg.seed, kSplitStream);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t c = 0; c < C; ++c) {
    auto zc = z.channel(c);
    for (std::size_t i = 0; i < zc.size(); ++i) {
      const double re = gauss(rng);
      const double im = gauss(rng);
      zc[i] = share * y[i] + sigma * cplx(re, im);
    }
  }
  return z;
}

Spectrogram reference_fcp_images(const AugmentedStack& stack, const Spectrogram& est, const FcpConfig& cfg) {
  stack.validate();
  Spectrogram out = est;
  for (std::size_t c = 0; c < est.channels(); ++c) {
    const auto g = fcp_solve(stack.observations, 0, est, c, cfg);
    const auto img = fcp_image(est, c, g, cfg);
    std::copy(img.begin(), img.end(), out.channel(c).begin());
  }
  return out;
}

SeparationResult separate(const AugmentedStack& stack, const SeparatorConfig& cfg, const DemixingSolution* sol) {
  return separate_from(stack, cfg, init_estimates(stack, sol, cfg));
}

SeparationResult separate_from(const AugmentedStack& stack, const SeparatorConfig& cfg, Spectrogram init) {
  cfg.validate();
  const McObjective objective(stack, cfg.fcp, cfg.loss_weights, cfg.isms_enabled);

  SeparationResult res;
  Spectrogram z = std::move(init);
  require_finite(z, "estimate");
  RelativeFilterBank filters = objective.solve_filters(z);
  LossReport report = objective.evaluate(z, filters);
  if (!std::isfinite(report.total)) throw NumericalError("separate: initial loss is not finite");
  res.init_report = report;
  res.loss_history.push_back(report.total);

  const double scale_ref = rms(stack.observations.channel(0));
  double step = 1.0;  // fraction of the preconditioned step
  std::size_t since_refresh = 0;
  bool stalled = false;

  for (std::size_t it = 0; it < cfg.max_steps; ++it) {
    if (since_refresh >= cfg.fcp_refresh_every || stalled) {
      since_refresh = 0;
      RelativeFilterBank fresh = objective.solve_filters(z);
      LossReport fresh_report = objective.evaluate(z, fresh);
      if (fresh_report.total <= report.total) {
        filters = std::move(fresh);
        report = std::move(fresh_report);
        res.loss_history.back() = report.total;
        ++res.refreshes_accepted;
      } else {
        ++res.refreshes_rejected;
        if (stalled) break;  // neither a step nor new filters help
      }
      stalled = false;
    }

    Spectrogram grad = objective.gradient(z, filters);
    require_finite(grad, "gradient");
    precondition(objective, z, filters, grad);
    const double grad_rms = rms(grad.data());
    ++since_refresh;
    if (!(grad_rms > 0.0)) {
      stalled = true;
      continue;
    }

    bool accepted = false;
    double trial = step;
    for (std::size_t h = 0; h <= kMaxHalvings; ++h, trial *= 0.5) {
      Spectrogram candidate = z;
      const double k = trial * std::min(1.0, cfg.step_size * scale_ref / grad_rms);
      auto& cd = candidate.data();
      const auto& gd = grad.data();
      for (std::size_t i = 0; i < cd.size(); ++i) cd[i] -= k * gd[i];
      LossReport r = objective.evaluate(candidate, filters);
      if (std::isfinite(r.total) && r.total < report.total) {
        z = std::move(candidate);
        report = std::move(r);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      stalled = true;
      log().debug("separate: step {} rejected after {} halvings", it, kMaxHalvings);
      continue;
    }
    step = std::min(2.0 * trial, 1.0);
    res.loss_history.push_back(report.total);
    ++res.steps_taken;

    const std::size_t n = res.loss_history.size();
    if (n > kEarlyStopWindow) {
      const double old = res.loss_history[n - 1 - kEarlyStopWindow];
      const double rel = (old - report.total) / std::max(std::abs(old), 1e-300);
      if (rel < cfg.early_stop_rel_tol) break;
    }
  }

  res.final_report = report;
  res.final_fresh_total = objective.evaluate(z, objective.solve_filters(z)).total;
  res.reference_images = reference_fcp_images(stack, z, cfg.fcp);
  res.estimates = std::move(z);
  log().info("separate: {} steps, loss {:.6g} -> {:.6g}", res.steps_taken, res.loss_history.front(),
             res.loss_history.back());
  return res;
}

}  // namespace vmbss
