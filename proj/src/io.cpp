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

#include "vmbss/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "vmbss/serialize.hpp"

namespace vmbss {

static_assert(std::endian::native == std::endian::little, "vmbss file formats assume a little-endian host");

namespace {

using json = nlohmann::json;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw InvalidInput("unexpected end of file");
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InvalidInput("cannot open '" + path.string() + "' for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open '" + path.string() + "'");
  return is;
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  auto is = open_in(path);
  char tag[4];
  is.read(tag, 4);
  require_input(is && std::memcmp(tag, "RIFF", 4) == 0, path.string() + ": not a RIFF file");
  get<std::uint32_t>(is);
  is.read(tag, 4);
  require_input(is && std::memcmp(tag, "WAVE", 4) == 0, path.string() + ": not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    is.read(tag, 4);
    require_input(static_cast<bool>(is), path.string() + ": missing data chunk");
    const auto size = get<std::uint32_t>(is);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      require_input(size >= 16, path.string() + ": short fmt chunk");
      format = get<std::uint16_t>(is);
      channels = get<std::uint16_t>(is);
      rate = get<std::uint32_t>(is);
      get<std::uint32_t>(is);
      get<std::uint16_t>(is);
      bits = get<std::uint16_t>(is);
      std::uint32_t consumed = 16;
      if (format == kFormatExtensible && size >= 26) {
        get<std::uint16_t>(is);
        get<std::uint16_t>(is);
        get<std::uint32_t>(is);
        format = get<std::uint16_t>(is);
        consumed = 26;
      }
      is.seekg(size - consumed + (size & 1u), std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      require_input(have_fmt, path.string() + ": data chunk before fmt chunk");
      require_input(channels > 0, path.string() + ": zero channels");
      const bool pcm16 = format == kFormatPcm && bits == 16;
      const bool f32 = format == kFormatFloat && bits == 32;
      require_input(pcm16 || f32, path.string() + ": only PCM16 and float32 are supported");
      const std::size_t frame_bytes = channels * (bits / 8u);
      const std::size_t n = size / frame_bytes;
      Waveform w(channels, n, static_cast<int>(rate));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < channels; ++c) {
          w.channel(c)[i] = pcm16 ? get<std::int16_t>(is) / 32768.0 : static_cast<double>(get<float>(is));
        }
      }
      w.validate();
      return w;
    } else {
      is.seekg(size + (size & 1u), std::ios::cur);
    }
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& w, WavFormat format) {
  w.validate();
  const std::uint16_t channels = static_cast<std::uint16_t>(w.channels());
  const std::uint16_t bits = format == WavFormat::Pcm16 ? 16 : 32;
  const std::uint32_t block = channels * (bits / 8u);
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.length() * block);

  auto os = open_out(path);
  os.write("RIFF", 4);
  put<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  put<std::uint32_t>(os, 16);
  put<std::uint16_t>(os, format == WavFormat::Pcm16 ? kFormatPcm : kFormatFloat);
  put<std::uint16_t>(os, channels);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate()) * block);
  put<std::uint16_t>(os, static_cast<std::uint16_t>(block));
  put<std::uint16_t>(os, bits);
  os.write("data", 4);
  put<std::uint32_t>(os, data_bytes);
  for (std::size_t i = 0; i < w.length(); ++i) {
    for (std::size_t c = 0; c < w.channels(); ++c) {
      const double v = w.channel(c)[i];
      if (format == WavFormat::Pcm16) {
        const double scaled = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
        put<std::int16_t>(os, static_cast<std::int16_t>(scaled));
      } else {
        put<float>(os, static_cast<float>(v));
      }
    }
  }
  if (!os) throw InvalidInput("failed writing '" + path.string() + "'");
}

void write_spectrogram(const std::filesystem::path& base, const Spectrogram& s) {
  auto bin_path = base;
  bin_path += ".bin";
  auto json_path = base;
  json_path += ".json";
  {
    auto os = open_out(bin_path);
    for (const auto& v : s.data()) {
      put<float>(os, static_cast<float>(v.real()));
      put<float>(os, static_cast<float>(v.imag()));
    }
  }
  json meta;
  meta["channels"] = s.channels();
  meta["frames"] = s.frames();
  meta["bins"] = s.bins();
  meta["sample_rate"] = s.sample_rate();
  meta["signal_length"] = s.signal_length();
  meta["stft"] = to_json(s.config());
  meta["tags"] = json::array();
  for (const auto& t : s.tags()) meta["tags"].push_back(to_string(t));
  meta["dtype"] = "complex64-le";
  meta["order"] = "channel,frame,bin";
  auto os = open_out(json_path);
  os << meta.dump(2) << "\n";
}

Spectrogram read_spectrogram(const std::filesystem::path& base) {
  auto bin_path = base;
  bin_path += ".bin";
  auto json_path = base;
  json_path += ".json";
  json meta;
  {
    auto is = open_in(json_path);
    try {
      is >> meta;
    } catch (const json::exception& e) {
      throw InvalidInput(json_path.string() + ": " + e.what());
    }
  }
  const StftConfig cfg = stft_config_from_json(meta.at("stft"));
  std::vector<ChannelTag> tags;
  for (const auto& t : meta.at("tags")) tags.push_back(parse_channel_tag(t.get<std::string>()));
  Spectrogram s(meta.at("channels").get<std::size_t>(), meta.at("frames").get<std::size_t>(), cfg,
                meta.at("sample_rate").get<int>(), meta.at("signal_length").get<std::size_t>(),
                std::move(tags));
  require_input(s.bins() == meta.at("bins").get<std::size_t>(), json_path.string() + ": bin count mismatch");
  auto is = open_in(bin_path);
  for (auto& v : s.data()) {
    const float re = get<float>(is);
    const float im = get<float>(is);
    v = {re, im};
  }
  s.validate();
  return s;
}

void write_f32(const std::filesystem::path& path, std::span<const double> values) {
  auto os = open_out(path);
  for (double v : values) put<float>(os, static_cast<float>(v));
}

std::vector<double> read_f32(const std::filesystem::path& path) {
  auto is = open_in(path);
  std::vector<double> out;
  float v;
  while (is.read(reinterpret_cast<char*>(&v), sizeof(v))) out.push_back(v);
  return out;
}

void write_c64(std::ostream& os, std::span<const cplx> values) {
  for (const auto& v : values) {
    put<double>(os, v.real());
    put<double>(os, v.imag());
  }
}

std::vector<cplx> read_c64(std::istream& is, std::size_t count) {
  std::vector<cplx> out(count);
  for (auto& v : out) {
    const double re = get<double>(is);
    const double im = get<double>(is);
    v = {re, im};
  }
  return out;
}

}  // namespace vmbss
