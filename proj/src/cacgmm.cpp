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

#include "vmbss/cacgmm.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "vmbss/log.hpp"

namespace vmbss {

using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;

void ScConfig::validate() const {
  require_config(n_classes >= 1, "sc: n_classes must be >= 1");
  require_config(n_iter >= 1, "sc: n_iter must be >= 1");
  require_config(eps > 0.0, "sc: eps must be positive");
  require_config(!drop_lowest_energy || n_classes >= 2, "sc: dropping needs at least two classes");
  stft.validate();
}

std::vector<double> CacgmmState::total_loglik() const {
  std::vector<double> out;
  for (const auto& it : loglik_history) out.push_back(std::accumulate(it.begin(), it.end(), 0.0));
  return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (n == 0 || b.size() != n) return 0.0;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 1e-300 || sbb <= 1e-300) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

namespace {

// Unit-normalized observations of one bin, P x T, plus validity flags.
struct BinData {
  MatrixXcd z;
  std::vector<std::uint8_t> valid;
  std::size_t num_valid = 0;
};

BinData normalized_bin(const Spectrogram& mix, std::size_t f) {
  const Index P = static_cast<Index>(mix.channels());
  const Index T = static_cast<Index>(mix.frames());
  BinData d{MatrixXcd::Zero(P, T), std::vector<std::uint8_t>(static_cast<std::size_t>(T), 0), 0};
  double mean_power = 0.0;
  for (Index t = 0; t < T; ++t)
    for (Index p = 0; p < P; ++p) mean_power += std::norm(mix(static_cast<std::size_t>(p), static_cast<std::size_t>(t), f));
  mean_power /= static_cast<double>(T);
  const double threshold = std::max(1e-20 * mean_power, 1e-300);
  for (Index t = 0; t < T; ++t) {
    double power = 0.0;
    for (Index p = 0; p < P; ++p) {
      d.z(p, t) = mix(static_cast<std::size_t>(p), static_cast<std::size_t>(t), f);
      power += std::norm(d.z(p, t));
    }
    if (power > threshold) {
      d.z.col(t) /= std::sqrt(power);
      d.valid[static_cast<std::size_t>(t)] = 1;
      ++d.num_valid;
    } else {
      d.z.col(t).setZero();
    }
  }
  return d;
}

// Seeded k-means on (cos, sin) of phase differences to channel 0.
std::vector<std::size_t> kmeans_labels(const BinData& d, std::size_t K, std::uint64_t seed, std::size_t f) {
  const Index P = d.z.rows();
  const std::size_t T = static_cast<std::size_t>(d.z.cols());
  const std::size_t D = static_cast<std::size_t>(2 * (P - 1));
  std::vector<std::size_t> idx;
  for (std::size_t t = 0; t < T; ++t)
    if (d.valid[t]) idx.push_back(t);
  std::vector<std::size_t> labels(T, 0);
  if (idx.empty() || K == 1) return labels;

  std::vector<double> feat(idx.size() * D);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Index t = static_cast<Index>(idx[i]);
    for (Index p = 1; p < P; ++p) {
      const double phase = std::arg(d.z(p, t) * std::conj(d.z(0, t)));
      feat[i * D + 2 * static_cast<std::size_t>(p - 1)] = std::cos(phase);
      feat[i * D + 2 * static_cast<std::size_t>(p - 1) + 1] = std::sin(phase);
    }
  }
  auto dist2 = [&](std::size_t i, const double* c) {
    double s = 0.0;
    for (std::size_t j = 0; j < D; ++j) s += (feat[i * D + j] - c[j]) * (feat[i * D + j] - c[j]);
    return s;
  };

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(f), 0xacc6u};
  std::mt19937_64 rng(seq);
  std::vector<double> centres(K * D);
  // k-means++ seeding
  std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
  std::size_t first = pick(rng);
  std::copy_n(feat.begin() + static_cast<std::ptrdiff_t>(first * D), D, centres.begin());
  std::vector<double> best(idx.size(), std::numeric_limits<double>::max());
  for (std::size_t k = 1; k < K; ++k) {
    double total = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      best[i] = std::min(best[i], dist2(i, &centres[(k - 1) * D]));
      total += best[i];
    }
    std::size_t chosen = pick(rng);
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        u -= best[i];
        if (u <= 0.0) {
          chosen = i;
          break;
        }
      }
    }
    std::copy_n(feat.begin() + static_cast<std::ptrdiff_t>(chosen * D), D, centres.begin() + static_cast<std::ptrdiff_t>(k * D));
  }

  std::vector<std::size_t> assign(idx.size(), 0);
  for (int iter = 0; iter < 20; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::size_t arg = 0;
      double bd = dist2(i, &centres[0]);
      for (std::size_t k = 1; k < K; ++k) {
        const double dk = dist2(i, &centres[k * D]);
        if (dk < bd) {
          bd = dk;
          arg = k;
        }
      }
      changed |= assign[i] != arg;
      assign[i] = arg;
    }
    std::vector<double> sum(K * D, 0.0);
    std::vector<std::size_t> count(K, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      ++count[assign[i]];
      for (std::size_t j = 0; j < D; ++j) sum[assign[i] * D + j] += feat[i * D + j];
    }
    for (std::size_t k = 0; k < K; ++k)
      if (count[k] > 0)
        for (std::size_t j = 0; j < D; ++j) centres[k * D + j] = sum[k * D + j] / static_cast<double>(count[k]);
    if (!changed && iter > 0) break;
  }
  for (std::size_t i = 0; i < idx.size(); ++i) labels[idx[i]] = assign[i];
  return labels;
}

// Hermitian, loaded if near singular, trace normalized to P.
MatrixXcd condition_shape(MatrixXcd b, double eps) {
  const Index P = b.rows();
  b = 0.5 * (b + b.adjoint()).eval();
  double trace = b.trace().real();
  if (!(trace > 0.0) || !std::isfinite(trace)) {
    return MatrixXcd::Identity(P, P);
  }
  Eigen::SelfAdjointEigenSolver<MatrixXcd> eig(b, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues()(0) < eps * trace) {
    b += MatrixXcd::Identity(P, P) * (eps * trace);
    trace = b.trace().real();
  }
  return b * (static_cast<double>(P) / trace);
}

class BinModel {
 public:
  BinModel(const BinData& d, std::size_t K, double eps) : d_(d), K_(K), eps_(eps) {}

  // M-step: weights from posteriors, shapes by one minorize-maximize step
  // from the previous shapes.
  void m_step(const std::vector<double>& gamma, std::vector<double>& weights,
              std::vector<MatrixXcd>& shapes) const {
    const Index P = d_.z.rows();
    const std::size_t T = static_cast<std::size_t>(d_.z.cols());
    if (d_.num_valid == 0) {
      std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(K_));
      for (auto& s : shapes) s = MatrixXcd::Identity(P, P);
      return;
    }
    for (std::size_t k = 0; k < K_; ++k) {
      const MatrixXcd inv = shapes[k].inverse();
      MatrixXcd acc = MatrixXcd::Zero(P, P);
      double mass = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        if (!d_.valid[t]) continue;
        const double g = gamma[k * T + t];
        if (g <= 0.0) continue;
        const auto zt = d_.z.col(static_cast<Index>(t));
        const double q = std::max((zt.adjoint() * inv * zt)(0, 0).real(), 1e-300);
        acc.noalias() += (g / q) * (zt * zt.adjoint());
        mass += g;
      }
      weights[k] = mass / static_cast<double>(d_.num_valid);
      shapes[k] = mass > 1e-12 ? condition_shape(acc * (static_cast<double>(P) / mass), eps_)
                               : MatrixXcd::Identity(P, P);
    }
    double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (auto& w : weights) w = std::max(w / total, 1e-12);
    total = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (auto& w : weights) w /= total;
  }

  // E-step: posteriors and the bin log-likelihood over valid frames.
  double e_step(const std::vector<double>& weights, const std::vector<MatrixXcd>& shapes,
                std::vector<double>& gamma) const {
    const Index P = d_.z.rows();
    const std::size_t T = static_cast<std::size_t>(d_.z.cols());
    const double log_norm = std::lgamma(static_cast<double>(P)) - static_cast<double>(P) * std::log(std::numbers::pi);
    std::vector<MatrixXcd> inv(K_);
    std::vector<double> log_det(K_);
    for (std::size_t k = 0; k < K_; ++k) {
      Eigen::LLT<MatrixXcd> llt(shapes[k]);
      inv[k] = llt.solve(MatrixXcd::Identity(P, P));
      log_det[k] = 0.0;
      for (Index i = 0; i < P; ++i) log_det[k] += 2.0 * std::log(llt.matrixLLT()(i, i).real());
    }
    double loglik = 0.0;
    std::vector<double> lp(K_);
    for (std::size_t t = 0; t < T; ++t) {
      if (!d_.valid[t]) {
        for (std::size_t k = 0; k < K_; ++k) gamma[k * T + t] = weights[k];
        continue;
      }
      const auto zt = d_.z.col(static_cast<Index>(t));
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K_; ++k) {
        const double q = std::max((zt.adjoint() * inv[k] * zt)(0, 0).real(), 1e-300);
        lp[k] = std::log(weights[k]) + log_norm - log_det[k] - static_cast<double>(P) * std::log(q);
        mx = std::max(mx, lp[k]);
      }
      double s = 0.0;
      for (std::size_t k = 0; k < K_; ++k) s += std::exp(lp[k] - mx);
      const double lse = mx + std::log(s);
      loglik += lse;
      for (std::size_t k = 0; k < K_; ++k) gamma[k * T + t] = std::exp(lp[k] - lse);
    }
    return loglik;
  }

 private:
  const BinData& d_;
  std::size_t K_;
  double eps_;
};

}  // namespace

CacgmmState cacgmm_em(const Spectrogram& mix, const ScConfig& cfg) {
  cfg.validate();
  require_input(mix.channels() >= 2, "cacgmm: needs at least two channels");
  const std::size_t K = cfg.n_classes;
  const std::size_t T = mix.frames();
  const std::size_t F = mix.bins();
  const Index P = static_cast<Index>(mix.channels());

  CacgmmState st;
  st.classes = K;
  st.frames = T;
  st.bins = F;
  st.mics = mix.channels();
  st.weights.assign(F * K, 1.0 / static_cast<double>(K));
  st.shape_mats.assign(F * K, MatrixXcd::Identity(P, P));
  st.posteriors.assign(K * T * F, 0.0);
  st.masked.assign(T * F, 0);
  st.loglik_history.assign(cfg.n_iter + 1, std::vector<double>(F, 0.0));
  st.alignment.assign(F, {});
  for (auto& a : st.alignment) {
    a.resize(K);
    std::iota(a.begin(), a.end(), 0);
  }

  std::vector<double> gamma(K * T), weights(K);
  std::vector<MatrixXcd> shapes(K);
  for (std::size_t f = 0; f < F; ++f) {
    const BinData d = normalized_bin(mix, f);
    for (std::size_t t = 0; t < T; ++t) st.masked[t * F + f] = d.valid[t] ? 0 : 1;
    const auto labels = kmeans_labels(d, K, cfg.seed, f);
    // softened one-hot start so no class begins empty
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t t = 0; t < T; ++t)
        gamma[k * T + t] = (labels[t] == k ? 0.9 : 0.0) + 0.1 / static_cast<double>(K);

    std::fill(shapes.begin(), shapes.end(), MatrixXcd::Identity(P, P));
    BinModel model(d, K, cfg.eps);
    model.m_step(gamma, weights, shapes);
    st.loglik_history[0][f] = model.e_step(weights, shapes, gamma);
    for (std::size_t it = 1; it <= cfg.n_iter; ++it) {
      model.m_step(gamma, weights, shapes);
      st.loglik_history[it][f] = model.e_step(weights, shapes, gamma);
    }
    for (std::size_t k = 0; k < K; ++k) {
      st.weight(f, k) = weights[k];
      st.shape(f, k) = shapes[k];
      for (std::size_t t = 0; t < T; ++t) st.posterior(k, t, f) = gamma[k * T + t];
    }
  }
  const auto total = st.total_loglik();
  log().debug("cacgmm: log-likelihood {} -> {}", total.front(), total.back());
  return st;
}

CacgmmState align_permutations(CacgmmState st) {
  const std::size_t K = st.classes;
  const std::size_t T = st.frames;
  const std::size_t F = st.bins;
  if (K <= 1 || F == 0) return st;

  auto profile = [&](std::size_t k, std::size_t f) {
    std::vector<double> p(T);
    for (std::size_t t = 0; t < T; ++t) p[t] = st.posterior(k, t, f);
    return p;
  };
  auto variance = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
  };

  std::size_t seed = 0;
  double best_var = -1.0;
  for (std::size_t f = 0; f < F; ++f) {
    double v = 0.0;
    for (std::size_t k = 0; k < K; ++k) v += variance(profile(k, f));
    if (v > best_var) {
      best_var = v;
      seed = f;
    }
  }

  std::vector<std::vector<double>> centroid(K);
  for (std::size_t k = 0; k < K; ++k) centroid[k] = profile(k, seed);

  std::vector<std::size_t> order(F);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto da = a > seed ? a - seed : seed - a;
    const auto db = b > seed ? b - seed : seed - b;
    return da < db;
  });

  for (std::size_t f : order) {
    if (f == seed) continue;
    std::vector<std::vector<double>> prof(K);
    for (std::size_t k = 0; k < K; ++k) prof[k] = profile(k, f);
    // corr[a][b]: centroid class a vs. class b at f
    std::vector<double> corr(K * K);
    for (std::size_t a = 0; a < K; ++a)
      for (std::size_t b = 0; b < K; ++b) corr[a * K + b] = pearson(centroid[a], prof[b]);

    std::vector<std::size_t> perm(K), best;
    std::iota(perm.begin(), perm.end(), 0);
    double best_score = -std::numeric_limits<double>::infinity();
    do {
      double score = 0.0;
      for (std::size_t k = 0; k < K; ++k) score += corr[k * K + perm[k]];
      if (score > best_score + 1e-12) {
        best_score = score;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));

    std::vector<double> w(K);
    std::vector<MatrixXcd> shapes(K);
    for (std::size_t k = 0; k < K; ++k) {
      w[k] = st.weight(f, best[k]);
      shapes[k] = st.shape(f, best[k]);
    }
    for (std::size_t k = 0; k < K; ++k) {
      st.weight(f, k) = w[k];
      st.shape(f, k) = std::move(shapes[k]);
      for (std::size_t t = 0; t < T; ++t) st.posterior(k, t, f) = prof[best[k]][t];
      for (std::size_t t = 0; t < T; ++t) centroid[k][t] += prof[best[k]][t];
    }
    std::vector<std::size_t> composed(K);
    for (std::size_t k = 0; k < K; ++k) composed[k] = st.alignment[f][best[k]];
    st.alignment[f] = std::move(composed);
  }
  return st;
}

std::vector<std::size_t> sc_kept_classes(const Spectrogram& mix, const CacgmmState& st,
                                         std::size_t target_count) {
  require_input(mix.frames() == st.frames && mix.bins() == st.bins, "sc: mixture/state grid mismatch");
  require_config(target_count >= 1 && target_count <= st.classes, "sc: invalid number of kept classes");
  std::vector<double> energy(st.classes, 0.0);
  for (std::size_t k = 0; k < st.classes; ++k)
    for (std::size_t t = 0; t < st.frames; ++t)
      for (std::size_t f = 0; f < st.bins; ++f) energy[k] += std::norm(st.posterior(k, t, f) * mix(0, t, f));
  std::vector<std::size_t> order(st.classes);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return energy[a] > energy[b]; });
  std::vector<std::size_t> keep(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(target_count));
  std::sort(keep.begin(), keep.end());
  return keep;
}

Spectrogram sc_virtual_channels(const Spectrogram& mix, const CacgmmState& st,
                                std::span<const std::size_t> kept) {
  require_input(mix.frames() == st.frames && mix.bins() == st.bins && mix.channels() == st.mics,
                "sc_virtual_channels: mixture/state shape mismatch");
  std::vector<ChannelTag> tags;
  for (std::size_t p = 0; p < mix.channels(); ++p)
    for (std::size_t i = 0; i < kept.size(); ++i) tags.push_back(Virtual{p, i});
  const std::size_t total = tags.size();
  Spectrogram out = mix.like(total, std::move(tags));
  for (std::size_t p = 0; p < mix.channels(); ++p) {
    for (std::size_t i = 0; i < kept.size(); ++i) {
      require_input(kept[i] < st.classes, "sc_virtual_channels: class index out of range");
      const std::size_t ch = p * kept.size() + i;
      for (std::size_t t = 0; t < mix.frames(); ++t)
        for (std::size_t f = 0; f < mix.bins(); ++f) out(ch, t, f) = st.posterior(kept[i], t, f) * mix(p, t, f);
    }
  }
  return out;
}

}  // namespace vmbss
