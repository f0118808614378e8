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

#include <filesystem>

#include "support.hpp"
#include "vmbss/io.hpp"
#include "vmbss/scene.hpp"
#include "vmbss/virtual_mic.hpp"

using namespace vmbss;
using namespace vmbss::testing;
using Eigen::MatrixXcd;

namespace {

struct Demixed {
  Spectrogram mix;
  DemixingSolution sol;
};

Demixed demix_scene(std::size_t mics, std::size_t n_src, bool drop, std::uint64_t seed) {
  SceneSpec s;
  s.num_mics = mics;
  s.duration_s = 2.0;
  s.seed = seed;
  IvaConfig cfg;
  cfg.n_src = n_src;
  cfg.n_iter = 10;
  cfg.drop_lowest_energy = drop;
  const auto scene = render_scene(s);
  Demixed d{stft(scene.mixtures, cfg.stft), {}};
  d.sol = auxiva_run(d.mix, cfg);
  return d;
}

}  // namespace

TEST_CASE("Back-projected channels sum to the mixture in the determined case", "[vm]") {
  const auto d = demix_scene(2, 2, false, 1);
  const auto V = backproject(d.sol);
  REQUIRE(V.channels() == 4);
  for (std::size_t p = 0; p < 2; ++p) {
    std::vector<cplx> sum(V.channel_size(), cplx{});
    for (std::size_t c = 0; c < 2; ++c) {
      REQUIRE(V.tags()[p * 2 + c] == ChannelTag{Virtual{p, c}});
      const auto v = V.channel(p * 2 + c);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += v[i];
    }
    CHECK(rel_l2(std::span<const cplx>(sum), d.mix.channel(p)) <= 1e-8);
  }
}

TEST_CASE("Back-projection matches A times the separated source", "[vm]") {
  const auto d = demix_scene(3, 2, false, 2);
  const auto V = backproject(d.sol);
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t t = 0; t < V.frames(); t += 5)
        for (std::size_t f = 0; f < V.bins(); ++f)
          REQUIRE(V(p * 2 + c, t, f) == d.sol.A[f](static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) *
                                            d.sol.separated(c, t, f));
}

TEST_CASE("Identity demixer copies each channel to its own source", "[vm]") {
  const auto mix = random_spectrogram(2, 8, tiny_grid(5), 3);
  DemixingSolution sol;
  sol.W.assign(5, MatrixXcd::Identity(2, 2));
  sol.A.assign(5, MatrixXcd::Identity(2, 2));
  sol.separated = apply_demixing(sol.W, mix);
  sol.kept_indices = {0, 1};
  sol.source_energies = {1.0, 1.0};
  const auto V = backproject(sol);
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < mix.channel_size(); ++i)
        REQUIRE(V.channel(p * 2 + c)[i] == (p == c ? mix.channel(p)[i] : cplx{}));
}

TEST_CASE("Virtual channels lie in the span of the physical channels", "[vm]") {
  const auto d = demix_scene(3, 3, true, 4);
  REQUIRE(d.sol.num_sources() == 2);
  const auto V = backproject(d.sol);
  const std::size_t T = d.mix.frames();
  double worst = 0.0;
  for (std::size_t f = 1; f + 1 < d.mix.bins(); ++f) {
    MatrixXcd Y(static_cast<Eigen::Index>(T), 3);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t p = 0; p < 3; ++p) Y(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(p)) = d.mix(p, t, f);
    const auto qr = Y.colPivHouseholderQr();
    for (std::size_t k = 0; k < V.channels(); ++k) {
      Eigen::VectorXcd v(static_cast<Eigen::Index>(T));
      for (std::size_t t = 0; t < T; ++t) v(static_cast<Eigen::Index>(t)) = V(k, t, f);
      const Eigen::VectorXcd coef = qr.solve(v);
      worst = std::max(worst, (Y * coef - v).norm() / v.norm());
    }
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("Stack counts", "[vm][stack]") {
  SECTION("six mics, two sources") {
    const auto d = demix_scene(6, 2, false, 5);
    const auto stack = build_stack(d.mix, backproject(d.sol));
    CHECK(stack.num_physical == 6);
    CHECK(stack.num_virtual == 12);
    CHECK(stack.num_total() == 18);
    CHECK(stack.observations.channels() == 18);
  }
  SECTION("two mics, two sources") {
    const auto d = demix_scene(2, 2, false, 6);
    const auto stack = build_stack(d.mix, backproject(d.sol));
    CHECK(stack.num_total() == 6);
    const auto& tags = stack.observations.tags();
    const std::vector<ChannelTag> expected = {Physical{0},   Physical{1},   Virtual{0, 0},
                                              Virtual{0, 1}, Virtual{1, 0}, Virtual{1, 1}};
    CHECK(tags == expected);
    for (std::size_t p = 0; p < 2; ++p) {
      const auto a = stack.observations.channel(p), b = d.mix.channel(p);
      REQUIRE(std::equal(a.begin(), a.end(), b.begin()));
    }
  }
  SECTION("no virtual channels") {
    const auto mix = random_spectrogram(3, 8, tiny_grid(5), 7);
    const auto stack = build_stack(mix);
    CHECK(stack.num_virtual == 0);
    CHECK(stack.num_total() == 3);
    REQUIRE(stack.observations.data() == mix.data());
    const auto empty = build_stack(mix, Spectrogram{});
    REQUIRE(empty.observations.data() == mix.data());
  }
}

TEST_CASE("Stack validation", "[vm][stack][errors]") {
  const auto mix = random_spectrogram(2, 8, tiny_grid(5), 8);
  auto virt = random_spectrogram(2, 8, tiny_grid(5), 9, {Virtual{1, 0}, Virtual{0, 0}});
  CHECK_THROWS_AS(build_stack(mix, virt), InvalidInput);
  virt.tags() = {Virtual{0, 0}, Virtual{3, 0}};
  CHECK_THROWS_AS(build_stack(mix, virt), InvalidInput);
  virt.tags() = {Physical{0}, Virtual{0, 0}};
  CHECK_THROWS_AS(build_stack(mix, virt), InvalidInput);
  const auto other_grid = random_spectrogram(2, 9, tiny_grid(5), 10, {Virtual{0, 0}, Virtual{0, 1}});
  CHECK_THROWS_AS(build_stack(mix, other_grid), InvalidInput);

  DemixingSolution sol;
  sol.A.assign(5, MatrixXcd::Identity(2, 3));
  sol.separated = random_spectrogram(2, 8, tiny_grid(5), 11);
  CHECK_THROWS_AS(backproject(sol), InvalidInput);
}

TEST_CASE("Stack tags survive a file round trip", "[vm][stack]") {
  const auto d = demix_scene(2, 2, false, 12);
  const auto stack = build_stack(d.mix, backproject(d.sol));
  const auto base = std::filesystem::temp_directory_path() / "vmbss_test_vm_stack";
  write_spectrogram(base, stack.observations);
  const auto back = read_spectrogram(base);
  REQUIRE(back.tags() == stack.observations.tags());
}

TEST_CASE("Regridding is linear and keeps tags", "[vm][regrid]") {
  const auto w = random_waveform(2, 4000, 13);
  const StftConfig from{256, 64, 256}, to{128, 32, 128};
  auto a = stft(w, from);
  a.tags() = {Virtual{0, 0}, Virtual{0, 1}};
  REQUIRE(regrid(a, from).data() == a.data());
  const auto r = regrid(a, to);
  CHECK(r.tags() == a.tags());
  CHECK(r.config() == to);
  const auto direct = stft(w, to);
  CHECK(rel_l2(std::span<const cplx>(r.data()), std::span<const cplx>(direct.data())) <= 1e-10);

  auto b = a;
  for (auto& v : b.data()) v *= 2.5;
  const auto rb = regrid(b, to);
  for (std::size_t i = 0; i < r.data().size(); ++i) REQUIRE(std::abs(rb.data()[i] - 2.5 * r.data()[i]) <= 1e-9);
}
