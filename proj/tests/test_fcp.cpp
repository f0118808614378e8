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

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "support.hpp"
#include "vmbss/fcp.hpp"
#include "vmbss/iva.hpp"
#include "vmbss/scene.hpp"
#include "vmbss/virtual_mic.hpp"

using namespace vmbss;
using namespace vmbss::testing;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;


TEST_CASE("FCP config and weight validation", "[fcp][config]") {
  CHECK(taps(1, 1).taps() == 3);
  CHECK(FcpConfig{}.taps() == 20);
  CHECK_THROWS_AS(taps(1, 1, -1.0).validate(), ConfigError);
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.w_r = w.w_i = w.w_m = 0.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = LossWeights{};
  w.beta = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("Scalar FCP recovers a gain of two", "[fcp][solve]") {
  const auto grid = tiny_grid(8);
  const auto est = random_spectrogram(1, 40, grid, 1);
  auto obs = est;
  for (auto& v : obs.data()) v *= 2.0;
  for (double tik : {0.0, 1e-4, 1e-2}) {
    const auto g = fcp_solve(obs, 0, est, 0, taps(0, 0, tik));
    REQUIRE(g.size() == 8);
    for (const auto& v : g) {
      CHECK(std::abs(v.imag()) <= 1e-12);
      CHECK(std::abs(v.real() - 2.0) <= std::max(2.0 * tik, 1e-12));
    }
  }
}

TEST_CASE("FCP recovers planted filters", "[fcp][solve]") {
  const auto cfg = taps(1, 1);
  std::mt19937_64 rng(7);
  for (std::uint64_t inst = 0; inst < 50; ++inst) {
    const auto est = random_spectrogram(1, 32, tiny_grid(8), 100 + inst);
    auto obs = est.like(1);
    const auto planted = random_filters(8 * 3, rng);
    apply_filters(obs, 0, est, 0, planted, cfg);
    const auto g = fcp_solve(obs, 0, est, 0, cfg);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(g[i] - planted[i]) / std::abs(planted[i]));
    REQUIRE(worst <= 1e-8);
  }
}

TEST_CASE("FCP matches an independent least-squares solve", "[fcp][solve]") {
  for (const auto& cfg : {taps(1, 1, 0.0), taps(2, 0, 1e-4), taps(0, 2, 0.3), taps(3, 1, 1e-2)}) {
    const auto est = random_spectrogram(2, 30, tiny_grid(6), 11);
    const auto obs = random_spectrogram(3, 30, tiny_grid(6), 12);
    const auto g = fcp_solve(obs, 2, est, 1, cfg);
    const auto ref = oracle_filters(obs, 2, est, 1, cfg);
    REQUIRE(rel_l2(std::span<const cplx>(g), std::span<const cplx>(ref)) <= 1e-10);
  }
}

TEST_CASE("Closed-form filters beat perturbed ones", "[fcp][solve]") {
  const auto cfg = taps(1, 1);
  std::mt19937_64 rng(3);
  for (std::uint64_t inst = 0; inst < 50; ++inst) {
    const auto est = random_spectrogram(1, 32, tiny_grid(8), 200 + inst);
    const auto obs = random_spectrogram(1, 32, tiny_grid(8), 300 + inst);
    const auto g = fcp_solve(obs, 0, est, 0, cfg);
    for (std::size_t f = 0; f < 8; ++f) {
      const double best = residual_energy(obs, 0, est, 0, g, f, cfg);
      for (int trial = 0; trial < 100; ++trial) {
        auto pert = g;
        const auto eta = random_filters(g.size(), rng, 1e-3);
        for (std::size_t i = 0; i < g.size(); ++i) pert[i] += eta[i];
        REQUIRE(best <= residual_energy(obs, 0, est, 0, pert, f, cfg));
      }
    }
  }
}

TEST_CASE("A silent estimate gets zero filters", "[fcp][solve]") {
  const auto obs = random_spectrogram(1, 20, tiny_grid(5), 4);
  const auto est = obs.like(1);
  const auto cfg = taps(1, 1);
  const auto g = fcp_solve(obs, 0, est, 0, cfg);
  for (const auto& v : g) REQUIRE(v == cplx{});
  const auto img = fcp_image(est, 0, g, cfg);
  double res = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) res += std::norm(obs.data()[i] - img[i]);
  CHECK(res == Catch::Approx(obs.energy()).epsilon(1e-14));
}

TEST_CASE("FCP images", "[fcp][image]") {
  const auto est = random_spectrogram(2, 25, tiny_grid(6), 5);

  SECTION("unit filter is the identity") {
    const std::vector<cplx> one(6, cplx(1.0, 0.0));
    const auto img = fcp_image(est, 1, one, taps(0, 0));
    const auto ch = est.channel(1);
    REQUIRE(std::equal(img.begin(), img.end(), ch.begin()));
  }

  SECTION("self-prediction reproduces the estimate") {
    const auto cfg = taps(1, 1);
    const auto g = fcp_solve(est, 0, est, 0, cfg);
    const auto img = fcp_image(est, 0, g, cfg);
    CHECK(rel_l2(std::span<const cplx>(img), est.channel(0)) <= 1e-8);
  }

  SECTION("images are linear in the filters") {
    const auto cfg = taps(2, 1);
    std::mt19937_64 rng(9);
    const auto g1 = random_filters(6 * 4, rng);
    const auto g2 = random_filters(6 * 4, rng);
    std::vector<cplx> g12(g1.size());
    for (std::size_t i = 0; i < g1.size(); ++i) g12[i] = g1[i] + g2[i];
    const auto a = fcp_image(est, 0, g1, cfg), b = fcp_image(est, 0, g2, cfg), ab = fcp_image(est, 0, g12, cfg);
    for (std::size_t i = 0; i < ab.size(); ++i) REQUIRE(std::abs(ab[i] - a[i] - b[i]) <= 1e-12 * (1.0 + std::abs(ab[i])));
  }

  SECTION("shape checks") {
    CHECK_THROWS_AS(fcp_image(est, 0, std::vector<cplx>(5), taps(0, 0)), InvalidInput);
    CHECK_THROWS_AS(fcp_image(est, 2, std::vector<cplx>(6), taps(0, 0)), InvalidInput);
    CHECK_THROWS_AS(fcp_solve(random_spectrogram(1, 24, tiny_grid(6), 1), 0, est, 0, taps(0, 0)), InvalidInput);
  }
}

TEST_CASE("FCP equivariance under estimate scaling", "[fcp][solve]") {
  const auto cfg = taps(1, 1);
  const auto est = random_spectrogram(1, 32, tiny_grid(8), 21);
  const auto obs = random_spectrogram(1, 32, tiny_grid(8), 22);
  const cplx a(0.3, -1.7);
  auto scaled = est;
  for (auto& v : scaled.data()) v *= a;
  const auto g = fcp_solve(obs, 0, est, 0, cfg);
  const auto gs = fcp_solve(obs, 0, scaled, 0, cfg);
  for (std::size_t i = 0; i < g.size(); ++i) REQUIRE(std::abs(gs[i] - g[i] / std::conj(a)) <= 1e-8 * std::abs(g[i]));
  const auto img = fcp_image(est, 0, g, cfg), imgs = fcp_image(scaled, 0, gs, cfg);
  CHECK(rel_l2(std::span<const cplx>(imgs), std::span<const cplx>(img)) <= 1e-8);
}

TEST_CASE("Mixture-consistency loss of one channel", "[fcp][mc]") {
  const auto obs = random_spectrogram(1, 10, tiny_grid(5), 31);
  const auto o = obs.channel(0);
  LossWeights w;
  w.w_r = 0.7;
  w.w_i = 1.3;
  w.w_m = 0.4;

  SECTION("consistent images give zero") {
    std::vector<cplx> a(o.begin(), o.end()), b(o.size());
    for (std::size_t i = 0; i < o.size(); ++i) {
      b[i] = cplx(0.25, -0.5) * o[i];
      a[i] -= b[i];
    }
    CHECK(mc_loss_channel(o, {a, b}, w).loss <= 1e-15);
  }

  SECTION("zero images give the closed form") {
    double re = 0.0, im = 0.0, mag = 0.0;
    for (const auto& v : o) {
      re += std::abs(v.real());
      im += std::abs(v.imag());
      mag += std::abs(v);
    }
    const auto term = mc_loss_channel(o, std::vector<std::vector<cplx>>{std::vector<cplx>(o.size())}, w);
    CHECK(term.normalizer == Catch::Approx(mag).epsilon(1e-14));
    CHECK(term.loss == Catch::Approx((0.7 * re + 1.3 * im + 0.4 * mag) / mag).epsilon(1e-14));
  }

  SECTION("joint scaling leaves the loss unchanged") {
    const auto img = random_spectrogram(1, 10, tiny_grid(5), 32);
    std::vector<cplx> o10(o.begin(), o.end()), i10(img.channel(0).begin(), img.channel(0).end());
    for (auto& v : o10) v *= 10.0;
    for (auto& v : i10) v *= 10.0;
    const double base = mc_loss_channel(o, img.channel(0), w).loss;
    CHECK(std::abs(mc_loss_channel(o10, i10, w).loss - base) <= 1e-12 * base);
  }

  SECTION("all-zero channel stays finite") {
    const std::vector<cplx> zero(o.size());
    const auto term = mc_loss_channel(zero, std::span<const cplx>(zero), w);
    CHECK(term.degenerate);
    CHECK(term.normalizer == 1e-12);
    CHECK(std::isfinite(term.loss));
  }
}

TEST_CASE("ISMS loss", "[fcp][isms]") {
  const std::size_t T = 6, F = 5;
  const auto mix = random_spectrogram(1, T, tiny_grid(F), 41);
  const auto y = mix.channel(0);
  std::vector<cplx> yv(y.begin(), y.end());

  SECTION("flat source spectra give zero") {
    std::vector<cplx> flat(T * F);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f) flat[t * F + f] = std::polar(1.0 + static_cast<double>(t), 0.3 * static_cast<double>(f));
    CHECK(isms_loss({flat, flat}, y, T, F).value <= 1e-12);
  }

  SECTION("sources shaped like the mixture give one") {
    CHECK(isms_loss({yv, yv}, y, T, F).value == Catch::Approx(1.0).epsilon(1e-14));
  }

  SECTION("doubling magnitudes changes nothing") {
    const auto img = random_spectrogram(2, T, tiny_grid(F), 42);
    std::vector<cplx> a(img.channel(0).begin(), img.channel(0).end()), b(img.channel(1).begin(), img.channel(1).end());
    const double base = isms_loss({a, b}, y, T, F).value;
    for (auto& v : a) v *= 2.0;
    for (auto& v : b) v *= 2.0;
    CHECK(isms_loss({a, b}, y, T, F).value == Catch::Approx(base).epsilon(1e-12));
  }

  SECTION("matches the variance ratio computed directly") {
    const auto img = random_spectrogram(2, T, tiny_grid(F), 43);
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> ly(F), l0(F), l1(F);
      for (std::size_t f = 0; f < F; ++f) {
        ly[f] = std::log(std::abs(mix(0, t, f)));
        l0[f] = std::log(std::abs(img(0, t, f)));
        l1[f] = std::log(std::abs(img(1, t, f)));
      }
      num += 0.5 * (variance(l0) + variance(l1));
      den += variance(ly);
    }
    std::vector<cplx> a(img.channel(0).begin(), img.channel(0).end()), b(img.channel(1).begin(), img.channel(1).end());
    CHECK(isms_loss({a, b}, y, T, F).value == Catch::Approx(num / den).epsilon(1e-12));
  }

  SECTION("zero images are floored, not infinite") {
    const std::vector<cplx> zero(T * F);
    CHECK(std::isfinite(isms_loss({zero}, y, T, F).value));
    CHECK(isms_loss({zero}, y, T, F).value == 0.0);
  }

  SECTION("a flat mixture is flagged") {
    std::vector<cplx> flat(T * F, cplx(1.0, 0.0));
    const auto term = isms_loss({yv}, flat, T, F);
    CHECK(term.degenerate);
    CHECK(std::isfinite(term.value));
  }
}

namespace {

Scene delay_scene(std::size_t mics, std::uint64_t seed) {
  SceneSpec s;
  s.num_mics = mics;
  s.tail_gain = 0.0;
  s.noise_level = 0.0;
  s.delay_max = 8;
  s.seed = seed;
  return render_scene(s);
}

AugmentedStack iva_stack(const Scene& scene, const StftConfig& grid) {
  const auto mix = stft(scene.mixtures, grid);
  IvaConfig iva;
  iva.stft = grid;
  iva.n_iter = 30;
  iva.n_src = scene.spec.num_sources;
  const auto sol = auxiva_run(mix, iva);
  return build_stack(mix, backproject(sol));
}

}  // namespace

TEST_CASE("vm_loss with only physical channels is the plain MC loss", "[fcp][vmloss]") {
  const auto stack = random_stack(3, 2, 12, 6, 51);
  const auto phys = build_stack(stack.observations.select(std::vector<std::size_t>{0, 1, 2}));
  const auto est = random_spectrogram(2, 12, tiny_grid(6), 53);
  const auto cfg = taps(1, 0, 1e-4);
  LossWeights w;
  w.w_m = 0.5;
  const auto rep = vm_loss(phys, est, cfg, w, false);
  REQUIRE(rep.per_channel_mc.size() == 3);
  double sum = 0.0;
  for (std::size_t p = 0; p < 3; ++p) {
    std::vector<cplx> image_sum(est.channel_size());
    for (std::size_t c = 0; c < 2; ++c) {
      const auto g = oracle_filters(phys.observations, p, est, c, cfg);
      const auto img = fcp_image(est, c, g, cfg);
      for (std::size_t i = 0; i < img.size(); ++i) image_sum[i] += img[i];
    }
    const double expected = l1_terms(phys.observations.channel(p), image_sum, w);
    CHECK(std::abs(rep.per_channel_mc[p] - expected) <= 1e-12 * expected);
    sum += expected;
  }
  CHECK(std::abs(rep.total - sum) <= 1e-12 * sum);
  CHECK(rep.virtual_sum() == 0.0);
}

TEST_CASE("Loss report bookkeeping", "[fcp][vmloss]") {
  const auto stack = random_stack(2, 2, 10, 5, 61);
  const auto est = random_spectrogram(2, 10, tiny_grid(5), 63);
  LossWeights w;
  w.alpha = 1.0;
  w.beta = 0.02;

  SECTION("total recomputes from its parts") {
    for (bool isms : {false, true}) {
      const auto rep = vm_loss(stack, est, taps(1, 1, 1e-4), w, isms);
      REQUIRE(rep.per_channel_mc.size() == 6);
      REQUIRE(rep.tags == stack.observations.tags());
      double phys = 0.0, virt = 0.0;
      for (std::size_t k = 0; k < 6; ++k) (k < 2 ? phys : virt) += rep.per_channel_mc[k];
      const double expected = phys + 0.02 * virt + (isms ? rep.isms : 0.0);
      CHECK(std::abs(rep.total - expected) <= 1e-12 * expected);
      CHECK(std::abs(rep.recompute_total() - rep.total) <= 1e-12 * rep.total);
      CHECK(rep.isms_enabled == isms);
    }
  }

  SECTION("beta zero drops the virtual channels") {
    w.beta = 0.0;
    const auto rep = vm_loss(stack, est, taps(1, 1, 1e-4), w, false);
    CHECK(rep.total == Catch::Approx(rep.physical_sum()).epsilon(1e-14));
    CHECK(rep.virtual_sum() > 0.0);
  }

  SECTION("normalizers are the channel magnitudes") {
    const auto rep = vm_loss(stack, est, taps(1, 1), w, false);
    for (std::size_t k = 0; k < 6; ++k) {
      double n = 0.0;
      for (const auto& v : stack.observations.channel(k)) n += std::abs(v);
      CHECK(rep.normalizers[k] == Catch::Approx(n).epsilon(1e-14));
    }
  }

  SECTION("estimates on another grid are rejected") {
    CHECK_THROWS_AS(vm_loss(stack, random_spectrogram(2, 9, tiny_grid(5), 64), taps(1, 1), w, false), InvalidInput);
  }
}

TEST_CASE("Six physical microphones and two sources give eighteen terms", "[fcp][vmloss]") {
  const auto scene = delay_scene(6, 71);
  const auto stack = iva_stack(scene, StftConfig{256, 64, 256});
  REQUIRE(stack.num_total() == 18);
  const auto est = stft(scene.reference_images(), StftConfig{256, 64, 256});
  const auto rep = vm_loss(stack, est, taps(1, 1, 1e-4), LossWeights{}, false);
  CHECK(rep.per_channel_mc.size() == 18);
  std::size_t physical = 0;
  for (const auto& t : rep.tags) physical += is_physical(t);
  CHECK(physical == 6);
}

TEST_CASE("Perfect consistency gives zero MC loss", "[fcp][vmloss]") {
  // one physical channel equal to the single estimate
  const auto est = random_spectrogram(1, 16, tiny_grid(6), 81);
  const auto stack = build_stack(est);
  const auto rep = vm_loss(stack, est, taps(0, 0, 0.0), LossWeights{}, false);
  CHECK(rep.total <= 1e-10);
}

TEST_CASE("Oracle images of a delay-only scene are nearly consistent", "[fcp][vmloss]") {
  const StftConfig grid{512, 128, 512};
  const auto scene = delay_scene(2, 91);
  const auto stack = iva_stack(scene, grid);
  const auto est = stft(scene.reference_images(), grid);
  LossWeights w;
  const auto rep = vm_loss(stack, est, taps(1, 1, 0.0), w, false);
  INFO("physical " << rep.physical_sum() << " virtual " << rep.virtual_sum());
  CHECK(rep.total <= 1e-3);
}

TEST_CASE("Gradient of the smoothed loss", "[fcp][gradient]") {
  SECTION("matches central differences") {
    for (std::uint64_t inst = 0; inst < 20; ++inst) {
      const auto stack = random_stack(2, 2, 8, 4, 1000 + 10 * inst);
      const auto est = random_spectrogram(2, 8, tiny_grid(4), 1005 + 10 * inst);
      LossWeights w;
      w.w_m = 0.5 + 0.1 * static_cast<double>(inst % 3);
      const bool isms = inst % 2 == 1;
      const McObjective obj(stack, taps(1, 0, 1e-4), w, isms);
      const auto g = obj.solve_filters(est);
      const auto grad = vm_loss_gradient(stack, est, taps(1, 0, 1e-4), w, g, isms);
      REQUIRE(grad.same_grid(est));
      REQUIRE(grad.channels() == 2);
      const double h = 1e-6;
      double worst = 0.0, scale = 0.0;
      for (std::size_t i = 0; i < est.data().size(); ++i) {
        for (const cplx dir : {cplx(1.0, 0.0), cplx(0.0, 1.0)}) {
          auto plus = est, minus = est;
          plus.data()[i] += h * dir;
          minus.data()[i] -= h * dir;
          const double fd = (obj.smoothed(plus, g) - obj.smoothed(minus, g)) / (2.0 * h);
          const double an = dir.real() != 0.0 ? grad.data()[i].real() : grad.data()[i].imag();
          worst = std::max(worst, std::abs(an - fd));
          scale = std::max(scale, std::abs(fd));
        }
      }
      INFO("instance " << inst);
      REQUIRE(worst / scale <= 1e-5);
    }
  }

  SECTION("vanishes at zero residual") {
    const auto est = random_spectrogram(1, 8, tiny_grid(4), 1201);
    const auto stack = build_stack(est);
    RelativeFilterBank g(1, 1, 4, 1);
    for (std::size_t f = 0; f < 4; ++f) g(0, 0, f, 0) = 1.0;
    const auto grad = vm_loss_gradient(stack, est, taps(0, 0), LossWeights{}, g, false);
    CHECK(max_abs(grad.data()) <= 1e-6);
  }

  SECTION("scalar case by hand") {
    // a single nonzero bin, real-part term only
    auto obs = random_spectrogram(1, 4, tiny_grid(3), 1301).like(1);
    auto est = obs.like(1);
    const cplx o(0.8, -0.3), z(0.5, 1.1), gv(1.4, 0.6);
    obs(0, 2, 1) = o;
    est(0, 2, 1) = z;
    RelativeFilterBank g(1, 1, 3, 1);
    g(0, 0, 1, 0) = gv;
    LossWeights w;
    w.w_r = 1.0;
    w.w_i = 0.0;
    w.w_m = 0.0;
    const auto grad = vm_loss_gradient(build_stack(obs), est, taps(0, 0), w, g, false);
    const double d = McObjective::kSmoothing;
    const double r = (o - std::conj(gv) * z).real();
    const double scale = r / std::sqrt(r * r + d * d) / std::abs(o);
    const cplx expected(-gv.real() * scale, -gv.imag() * scale);
    CHECK(std::abs(grad(0, 2, 1) - expected) <= 1e-14);
    for (std::size_t i = 0; i < grad.data().size(); ++i)
      if (&grad.data()[i] != &grad(0, 2, 1)) REQUIRE(grad.data()[i] == cplx{});
  }
}
