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
#include <fstream>

#include "support.hpp"
#include "vmbss/io.hpp"

using namespace vmbss;
using namespace vmbss::testing;

namespace {

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "vmbss_test_io";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("Float32 WAV round trip", "[io][wav]") {
  auto w = random_waveform(3, 1234, 5, 16000);
  for (std::size_t c = 0; c < 3; ++c)
    for (auto& v : w.channel(c)) v = static_cast<float>(v * 0.1);  // exactly representable
  const auto path = temp_dir() / "f32.wav";
  write_wav(path, w);
  const auto r = read_wav(path);
  REQUIRE(r.channels() == 3);
  REQUIRE(r.length() == 1234);
  REQUIRE(r.sample_rate() == 16000);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 1234; ++i) REQUIRE(r.channel(c)[i] == w.channel(c)[i]);
}

TEST_CASE("PCM16 WAV round trip within quantization", "[io][wav]") {
  Waveform w(1, 100, 8000);
  for (std::size_t i = 0; i < 100; ++i) w.channel(0)[i] = -1.0 + 0.02 * static_cast<double>(i);
  const auto path = temp_dir() / "pcm.wav";
  write_wav(path, w, WavFormat::Pcm16);
  CHECK(std::filesystem::file_size(path) == 44 + 200);
  const auto r = read_wav(path);
  for (std::size_t i = 0; i < 100; ++i) REQUIRE(std::abs(r.channel(0)[i] - w.channel(0)[i]) <= 1.0 / 32768.0);
}

TEST_CASE("WAV reader rejects garbage", "[io][wav][errors]") {
  const auto path = temp_dir() / "bad.wav";
  {
    std::ofstream os(path, std::ios::binary);
    os << "definitely not a riff file";
  }
  CHECK_THROWS_AS(read_wav(path), InvalidInput);
  CHECK_THROWS_AS(read_wav(temp_dir() / "missing.wav"), InvalidInput);
}

TEST_CASE("Spectrogram files keep shape, grid and tags", "[io][spectrogram]") {
  const StftConfig cfg{16, 8, 16};
  auto s = random_spectrogram(4, 6, cfg, 3, {Physical{0}, Physical{1}, Virtual{0, 1}, Virtual{1, 0}});
  for (auto& v : s.data()) v = {static_cast<float>(v.real()), static_cast<float>(v.imag())};
  const auto base = temp_dir() / "spec";
  write_spectrogram(base, s);
  CHECK(std::filesystem::file_size(base.string() + ".bin") == s.data().size() * 8);
  const auto r = read_spectrogram(base);
  REQUIRE(r.same_grid(s));
  REQUIRE(r.tags() == s.tags());
  REQUIRE(r.data() == s.data());
}

TEST_CASE("Raw float32 dumps", "[io][raw]") {
  const std::vector<double> v = {0.5, -1.25, 3.0};
  const auto path = temp_dir() / "raw.f32";
  write_f32(path, v);
  CHECK(read_f32(path) == v);
}
