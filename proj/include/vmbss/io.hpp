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

#include <filesystem>
#include <span>
#include <vector>

#include "vmbss/signal.hpp"

namespace vmbss {

enum class WavFormat { Pcm16, Float32 };

/// Reads PCM 16-bit or IEEE float32 little-endian RIFF/WAVE files.
Waveform read_wav(const std::filesystem::path& path);

/// PCM16 output is clipped to [-1, 1).
void write_wav(const std::filesystem::path& path, const Waveform& w,
               WavFormat format = WavFormat::Float32);

/// Writes `<base>.bin` (float32 real/imag pairs, channel-major, frame-major,
/// bin-minor) and `<base>.json` (shape, STFT config, tags).
void write_spectrogram(const std::filesystem::path& base, const Spectrogram& s);
Spectrogram read_spectrogram(const std::filesystem::path& base);

/// Raw little-endian scalar dumps used by the sidecar formats.
void write_f32(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f32(const std::filesystem::path& path);
void write_c64(std::ostream& os, std::span<const cplx> values);
std::vector<cplx> read_c64(std::istream& is, std::size_t count);

}  // namespace vmbss
