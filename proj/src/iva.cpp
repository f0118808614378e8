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

#include "vmbss/iva.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "vmbss/log.hpp"

namespace vmbss {

using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;

void IvaConfig::validate(std::size_t num_channels) const {
  require_config(n_src >= 2, "iva: n_src must be >= 2");
  require_config(n_src <= num_channels, "iva: n_src exceeds the number of input channels");
  require_config(n_iter >= 1, "iva: n_iter must be >= 1");
  require_config(eps > 0.0, "iva: eps must be positive");
  stft.validate();
}

void DemixingSolution::validate() const {
  require_input(W.size() == A.size(), "demixing: W and A frequency counts differ");
  require_input(separated.channels() == kept_indices.size(), "demixing: separated/kept size mismatch");
  require_input(source_energies.size() == kept_indices.size(), "demixing: energies/kept size mismatch");
  for (std::size_t f = 0; f < W.size(); ++f) {
    require_input(W[f].rows() == A[f].cols() && W[f].cols() == A[f].rows(),
                  "demixing: A is not shaped like the transpose of W");
    require_input(static_cast<std::size_t>(W[f].rows()) == kept_indices.size(),
                  "demixing: W row count differs from kept sources");
  }
}

MatrixXcd pseudo_inverse(const MatrixXcd& m) {
  return m.completeOrthogonalDecomposition().pseudoInverse();
}

Spectrogram apply_demixing(const std::vector<MatrixXcd>& W, const Spectrogram& mix) {
  require_input(W.size() == mix.bins(), "apply_demixing: W frequency count differs from mixture bins");
  require_input(!W.empty() && static_cast<std::size_t>(W.front().cols()) == mix.channels(),
                "apply_demixing: W column count differs from mixture channels");
  const std::size_t C = static_cast<std::size_t>(W.front().rows());
  std::vector<ChannelTag> tags;
  for (std::size_t c = 0; c < C; ++c) tags.push_back(Source{c});
  Spectrogram out = mix.like(C, std::move(tags));
  for (std::size_t t = 0; t < mix.frames(); ++t) {
    for (std::size_t f = 0; f < mix.bins(); ++f) {
      for (std::size_t c = 0; c < C; ++c) {
        cplx acc{};
        for (std::size_t p = 0; p < mix.channels(); ++p)
          acc += W[f](static_cast<Index>(c), static_cast<Index>(p)) * mix(p, t, f);
        out(c, t, f) = acc;
      }
    }
  }
  return out;
}

namespace {

// Whitened observations of one frequency, n_src x T.
struct Whitened {
  MatrixXcd z;
  MatrixXcd reduce;  // n_src x P
};

Whitened whiten(const Spectrogram& mix, std::size_t f, std::size_t n_src, double eps,
                std::vector<std::string>& warnings) {
  const Index P = static_cast<Index>(mix.channels());
  const Index T = static_cast<Index>(mix.frames());
  MatrixXcd x(P, T);
  for (Index p = 0; p < P; ++p)
    for (Index t = 0; t < T; ++t) x(p, t) = mix(static_cast<std::size_t>(p), static_cast<std::size_t>(t), f);

  MatrixXcd cov = (x * x.adjoint()) / static_cast<double>(T);
  const double trace = cov.trace().real();
  Eigen::SelfAdjointEigenSolver<MatrixXcd> eig(cov);
  const auto& values = eig.eigenvalues();  // ascending
  const double floor = eps * std::max(trace, 1e-300);
  if (values(P - static_cast<Index>(n_src)) < floor) {
    warnings.push_back("rank-deficient spatial covariance at bin " + std::to_string(f));
    cov += MatrixXcd::Identity(P, P) * floor;
    eig.compute(cov);
  }
  const Index n = static_cast<Index>(n_src);
  MatrixXcd reduce(n, P);
  for (Index i = 0; i < n; ++i) {
    const Index col = P - 1 - i;  // largest first
    reduce.row(i) = eig.eigenvectors().col(col).adjoint() / std::sqrt(eig.eigenvalues()(col));
  }
  if (n == P) {
    // symmetric whitening keeps already separated channels in place
    reduce = eig.eigenvectors().rowwise().reverse() * reduce;
  }
  return {reduce * x, reduce};
}

// Per-frame source powers averaged over frequency, floored.
Eigen::MatrixXd frame_powers(const std::vector<MatrixXcd>& y, double floor) {
  const Index C = y.front().rows();
  const Index T = y.front().cols();
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(C, T);
  for (const auto& yf : y) r += yf.cwiseAbs2();
  r /= static_cast<double>(y.size());
  return r.cwiseMax(floor);
}

// Negative log-likelihood of the time-varying Gaussian model, with the
// per-frame variances at their (floored) minimizer.
double auxiva_objective(const std::vector<MatrixXcd>& Wz, const std::vector<MatrixXcd>& z,
                        double floor) {
  std::vector<MatrixXcd> y(z.size());
  for (std::size_t f = 0; f < z.size(); ++f) y[f] = Wz[f] * z[f];
  const Eigen::MatrixXd r = frame_powers(y, floor);
  const double F = static_cast<double>(z.size());
  const double T = static_cast<double>(z.front().cols());
  double j = F * r.array().log().sum();
  for (const auto& yf : y) j += (yf.cwiseAbs2().array() / r.array()).sum();
  for (const auto& w : Wz) j -= 2.0 * T * std::log(std::abs(w.determinant()));
  return j;
}

}  // namespace

DemixingSolution auxiva_run(const Spectrogram& mix, const IvaConfig& cfg) {
  cfg.validate(mix.channels());
  require_input(mix.frames() >= 2 * cfg.n_src, "iva: too few frames for the requested sources");

  const std::size_t F = mix.bins();
  const Index n = static_cast<Index>(cfg.n_src);
  const Index T = static_cast<Index>(mix.frames());

  DemixingSolution sol;
  std::vector<MatrixXcd> z(F), reduce(F), Wz(F, MatrixXcd::Identity(n, n));
  for (std::size_t f = 0; f < F; ++f) {
    auto w = whiten(mix, f, cfg.n_src, cfg.eps, sol.warnings);
    z[f] = std::move(w.z);
    reduce[f] = std::move(w.reduce);
  }
  if (!sol.warnings.empty()) {
    log().warn("auxiva: {} bins needed covariance loading ({})", sol.warnings.size(), sol.warnings.front());
  }

  const double floor = cfg.eps;
  sol.objective_history.push_back(auxiva_objective(Wz, z, floor));
  std::vector<MatrixXcd> y(F);
  for (std::size_t it = 0; it < cfg.n_iter; ++it) {
    for (std::size_t f = 0; f < F; ++f) y[f] = Wz[f] * z[f];
    const Eigen::MatrixXd r = frame_powers(y, floor);
    const Eigen::MatrixXd inv_r = r.cwiseInverse();
    for (std::size_t f = 0; f < F; ++f) {
      for (Index c = 0; c < n; ++c) {
        const MatrixXcd weighted = z[f] * inv_r.row(c).transpose().asDiagonal();
        const MatrixXcd V = (weighted * z[f].adjoint()) / static_cast<double>(T);
        VectorXcd w = (Wz[f] * V).partialPivLu().solve(VectorXcd::Unit(n, c));
        const double norm = std::sqrt(std::max((w.adjoint() * V * w)(0, 0).real(), 1e-300));
        w /= norm;
        Wz[f].row(c) = w.adjoint();
      }
    }
    sol.objective_history.push_back(auxiva_objective(Wz, z, floor));
  }

  sol.W.resize(F);
  sol.A.resize(F);
  for (std::size_t f = 0; f < F; ++f) {
    MatrixXcd W = Wz[f] * reduce[f];
    const MatrixXcd A = pseudo_inverse(W);
    // Minimal distortion: rescale each source to its image at microphone 0.
    for (Index c = 0; c < n; ++c) {
      const cplx a = A(0, c);
      if (std::abs(a) > 1e-12) W.row(c) *= a;
    }
    sol.A[f] = pseudo_inverse(W);
    sol.W[f] = std::move(W);
  }
  sol.separated = apply_demixing(sol.W, mix);
  for (std::size_t c = 0; c < cfg.n_src; ++c) {
    sol.source_energies.push_back(sol.separated.channel_energy(c));
    sol.kept_indices.push_back(c);
  }
  log().debug("auxiva: objective {} -> {} after {} iterations", sol.objective_history.front(),
              sol.objective_history.back(), cfg.n_iter);

  if (cfg.drop_lowest_energy) return drop_lowest_energy(sol, cfg.n_src - 1);
  return sol;
}

DemixingSolution drop_lowest_energy(const DemixingSolution& sol, std::size_t target_count) {
  const std::size_t C = sol.num_sources();
  require_config(target_count >= 1 && target_count < C, "drop_lowest_energy: target_count must be in [1, C')");
  std::vector<std::size_t> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sol.source_energies[a] > sol.source_energies[b];
  });
  std::vector<std::size_t> keep(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(target_count));
  std::sort(keep.begin(), keep.end());

  DemixingSolution out;
  out.objective_history = sol.objective_history;
  out.warnings = sol.warnings;
  out.W.resize(sol.W.size());
  out.A.resize(sol.A.size());
  const Index k = static_cast<Index>(target_count);
  for (std::size_t f = 0; f < sol.W.size(); ++f) {
    out.W[f].resize(k, sol.W[f].cols());
    out.A[f].resize(sol.A[f].rows(), k);
    for (Index i = 0; i < k; ++i) {
      out.W[f].row(i) = sol.W[f].row(static_cast<Index>(keep[static_cast<std::size_t>(i)]));
      out.A[f].col(i) = sol.A[f].col(static_cast<Index>(keep[static_cast<std::size_t>(i)]));
    }
  }
  std::vector<ChannelTag> tags;
  for (std::size_t i = 0; i < target_count; ++i) tags.push_back(Source{i});
  out.separated = sol.separated.select(keep);
  out.separated.tags() = std::move(tags);
  for (auto i : keep) {
    out.source_energies.push_back(sol.source_energies[i]);
    out.kept_indices.push_back(sol.kept_indices[i]);
  }
  return out;
}

}  // namespace vmbss
