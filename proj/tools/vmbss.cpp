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

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "vmbss/cacgmm.hpp"
#include "vmbss/io.hpp"
#include "vmbss/iva.hpp"
#include "vmbss/log.hpp"
#include "vmbss/metrics.hpp"
#include "vmbss/pipeline.hpp"
#include "vmbss/scene.hpp"
#include "vmbss/serialize.hpp"
#include "vmbss/virtual_mic.hpp"

namespace fs = std::filesystem;
using namespace vmbss;

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t jobs = 0;
  std::string output;
  bool verbose = false;
};

PipelineConfig resolve(const Globals& g) {
  PipelineConfig cfg;
  KeyValues kv;
  if (!g.config.empty()) kv = read_key_values(g.config);
  for (const auto& o : g.overrides) {
    const auto eq = o.find('=');
    require_config(eq != std::string::npos, "--set expects key=value, got '" + o + "'");
    std::string key = o.substr(0, eq), value = o.substr(eq + 1);
    key.erase(key.find_last_not_of(' ') + 1);
    value.erase(0, value.find_first_not_of(' '));
    kv[key] = value;
  }
  apply_key_values(cfg, kv);
  if (g.seed_set) cfg.base_seed = g.seed;
  if (g.jobs > 0) cfg.jobs = g.jobs;
  if (!g.output.empty()) cfg.output_dir = g.output;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  require_input(static_cast<bool>(os), "cannot open '" + p.string() + "' for writing");
  os << text;
}

std::string indexed(const std::string& stem, std::size_t i) { return stem + std::to_string(i) + ".wav"; }

void write_channels(const fs::path& dir, const std::string& stem, const Waveform& w) {
  for (std::size_t c = 0; c < w.channels(); ++c) write_wav(dir / indexed(stem, c), w.select(c));
}

/// Concatenates the channels of several WAV files; lengths are cut to the shortest.
Waveform read_stack(const std::vector<std::string>& paths) {
  std::vector<Waveform> parts;
  std::size_t channels = 0, length = SIZE_MAX;
  for (const auto& p : paths) {
    parts.push_back(read_wav(p));
    channels += parts.back().channels();
    length = std::min(length, parts.back().length());
    require_input(parts.back().sample_rate() == parts.front().sample_rate(), p + ": sample rate differs");
  }
  Waveform out(channels, length, parts.front().sample_rate());
  std::size_t c = 0;
  for (const auto& w : parts)
    for (std::size_t k = 0; k < w.channels(); ++k, ++c)
      std::copy_n(w.channel(k).begin(), length, out.channel(c).begin());
  return out;
}

/// Virtual channels on the separator grid from a saved demixer or masks.
Spectrogram virtual_channels(const PipelineConfig& cfg, const Waveform& mix, const std::string& demix,
                             const std::string& masks, DemixingSolution* sol_out) {
  if (!demix.empty()) {
    StftConfig grid = cfg.iva.stft;
    DemixingSolution sol = read_demixing(demix, &grid);
    sol.separated = apply_demixing(sol.W, stft(mix, grid));
    Spectrogram v = regrid(backproject(sol), cfg.stft);
    if (sol_out) *sol_out = std::move(sol);
    return v;
  }
  StftConfig grid = cfg.sc.stft;
  const CacgmmState state = read_masks(masks, &grid);
  const Spectrogram sc_mix = stft(mix, grid);
  const auto kept = sc_kept_classes(sc_mix, state, cfg.sc.output_sources());
  return regrid(sc_virtual_channels(sc_mix, state, kept), cfg.stft);
}

/// Splits a saved stack back into its physical and virtual parts.
AugmentedStack load_stack(const std::string& base) {
  const Spectrogram s = read_spectrogram(base);
  std::vector<std::size_t> phys, virt;
  for (std::size_t k = 0; k < s.channels(); ++k) (is_physical(s.tags()[k]) ? phys : virt).push_back(k);
  require_input(!phys.empty(), base + ": no physical channels");
  if (virt.empty()) return build_stack(s.select(phys));
  return build_stack(s.select(phys), s.select(virt));
}

int cmd_simulate(const PipelineConfig& cfg, std::size_t count) {
  for (std::size_t id = 0; id < count; ++id) {
    SceneSpec spec = cfg.scene;
    spec.seed = cfg.base_seed + id;
    const Scene scene = render_scene(spec);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04zu", id);
    const fs::path dir = cfg.output_dir / name;
    fs::create_directories(dir);
    write_wav(dir / "mix.wav", scene.mixtures);
    for (std::size_t p = 0; p < spec.num_mics; ++p)
      write_channels(dir, "image_p" + std::to_string(p) + "_c", scene.images[p]);
    write_channels(dir, "source_c", scene.sources);
    write_text(dir / "spec.json", to_json(spec).dump(2) + "\n");
    log().info("simulate: wrote {}", dir.string());
  }
  return 0;
}

int cmd_iva(const PipelineConfig& cfg, const std::string& mix_path) {
  const Waveform mix = read_wav(mix_path);
  const Spectrogram Y = stft(mix, cfg.iva.stft);
  const DemixingSolution sol = auxiva_run(Y, cfg.iva);
  fs::create_directories(cfg.output_dir);
  write_demixing(cfg.output_dir / "demix", sol);
  SeparatorConfig init;
  write_channels(cfg.output_dir, "separated_c", istft(init_estimates(build_stack(Y), &sol, init)));
  return 0;
}

int cmd_sc(const PipelineConfig& cfg, const std::string& mix_path) {
  const Waveform mix = read_wav(mix_path);
  const Spectrogram Y = stft(mix, cfg.sc.stft);
  const CacgmmState state = align_permutations(cacgmm_em(Y, cfg.sc));
  const auto kept = sc_kept_classes(Y, state, cfg.sc.output_sources());
  fs::create_directories(cfg.output_dir);
  write_masks(cfg.output_dir / "masks", state, cfg.sc.stft);
  const Waveform v = istft(sc_virtual_channels(Y, state, kept));
  for (std::size_t p = 0; p < mix.channels(); ++p)
    for (std::size_t i = 0; i < kept.size(); ++i)
      write_wav(cfg.output_dir / ("vm_p" + std::to_string(p) + "_c" + std::to_string(i) + ".wav"),
                v.select(p * kept.size() + i));
  return 0;
}

int cmd_vm(const PipelineConfig& cfg, const std::string& mix_path, const std::string& demix,
           const std::string& masks) {
  const Waveform mix = read_wav(mix_path);
  const Spectrogram v = virtual_channels(cfg, mix, demix, masks, nullptr);
  const AugmentedStack stack = build_stack(stft(mix, cfg.stft), v);
  fs::create_directories(cfg.output_dir);
  write_spectrogram(cfg.output_dir / "stack", stack.observations);
  const Waveform vt = istft(v);
  for (std::size_t k = 0; k < v.channels(); ++k) {
    const auto& tag = std::get<Virtual>(v.tags()[k]);
    write_wav(cfg.output_dir / ("vm_p" + std::to_string(tag.mic) + "_c" + std::to_string(tag.source) + ".wav"),
              vt.select(k));
  }
  std::printf("%zu physical + %zu virtual = %zu channels\n", stack.num_physical, stack.num_virtual,
              stack.num_total());
  return 0;
}

int cmd_loss(const PipelineConfig& cfg, const std::string& stack_path, const std::string& est_path) {
  const AugmentedStack stack = load_stack(stack_path);
  const LossReport r =
      vm_loss(stack, read_spectrogram(est_path), cfg.separator.fcp, cfg.separator.loss_weights, cfg.separator.isms_enabled);
  const std::string text = to_json(r).dump(2) + "\n";
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "loss_report.json", text);
  std::cout << text;
  return 0;
}

int cmd_separate(PipelineConfig cfg, const std::string& mix_path, const std::string& demix) {
  const Waveform mix = read_wav(mix_path);
  fs::create_directories(cfg.output_dir);
  DemixingSolution sol;
  if (!demix.empty()) virtual_channels(cfg, mix, demix, "", &sol);
  const MixtureSeparation sep = separate_mixture(cfg, mix, cfg.output_dir, demix.empty() ? nullptr : &sol);
  write_spectrogram(cfg.output_dir / "estimates", sep.result.estimates);
  write_channels(cfg.output_dir, "estimate_c", istft(sep.result.estimates));
  std::printf("loss %.6f -> %.6f after %zu steps\n", sep.result.loss_history.front(), sep.result.loss_history.back(),
              sep.result.steps_taken);
  return 0;
}

int cmd_eval(const PipelineConfig& cfg, const std::vector<std::string>& ests, const std::vector<std::string>& refs,
             const std::string& mixture, const std::string& corpus) {
  fs::create_directories(cfg.output_dir);
  if (!corpus.empty()) {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(corpus))
      if (e.is_directory() && fs::exists(e.path() / "estimate_c0.wav")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    std::string csv = "scene,mean_si_sdr,improvement_over_mixture\n";
    for (const auto& d : dirs) {
      std::vector<std::string> e, r;
      for (std::size_t c = 0; fs::exists(d / indexed("estimate_c", c)); ++c) {
        e.push_back((d / indexed("estimate_c", c)).string());
        r.push_back((d / indexed("image_p0_c", c)).string());
      }
      const Waveform mix0 = read_wav(d / "mix.wav").select(0);
      const ScoreCard card = pit_score(read_stack(e), read_stack(r), &mix0);
      char row[256];
      std::snprintf(row, sizeof(row), "%s,%.6f,%.6f\n", d.filename().string().c_str(), card.mean_si_sdr,
                    card.improvement_over_mixture);
      csv += row;
    }
    write_text(cfg.output_dir / "eval.csv", csv);
    std::cout << csv;
    return 0;
  }
  require_input(!ests.empty() && !refs.empty(), "eval: give --estimates and --references, or --corpus");
  Waveform mix0;
  if (!mixture.empty()) mix0 = read_wav(mixture).select(0);
  const Waveform e = read_stack(ests), r = read_stack(refs);
  const ScoreCard card = pit_score(e, r, mixture.empty() ? nullptr : &mix0);
  const std::string text = to_json(card).dump(2) + "\n";
  write_text(cfg.output_dir / "score.json", text);
  std::cout << text;
  return 0;
}

int cmd_pipeline(const PipelineConfig& cfg) {
  const PipelineReport r = run_pipeline(cfg);
  std::printf("%zu scenes, %zu failed; results in %s\n", r.scenes.size(), r.failures, r.csv_path.string().c_str());
  return r.failed() ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blind source separation with virtual microphones"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Key-value config file or pipeline manifest.json");
  app.add_option("--set", g.overrides, "Config override key=value (repeatable)");
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "Base scene seed");
  app.add_option("--jobs", g.jobs, "Scenes run in parallel");
  app.add_option("--output", g.output, "Output directory");
  app.add_flag("--verbose", g.verbose, "Log at info level");

  std::size_t num_scenes = 1;
  auto* simulate = app.add_subcommand("simulate", "Render scenes: mixture, images and sources");
  simulate->add_option("--num-scenes", num_scenes, "Scenes to render");

  std::string mix, demix, masks, stack, estimates, mixture, corpus;
  std::vector<std::string> est_files, ref_files;
  auto* iva = app.add_subcommand("iva", "AuxIVA demixing of a multichannel WAV");
  iva->add_option("mix", mix, "Mixture WAV")->required()->check(CLI::ExistingFile);
  auto* sc = app.add_subcommand("sc", "CACGMM spatial clustering of a multichannel WAV");
  sc->add_option("mix", mix, "Mixture WAV")->required()->check(CLI::ExistingFile);
  auto* vm = app.add_subcommand("vm", "Build the augmented stack from a demixer or masks");
  vm->add_option("mix", mix, "Mixture WAV")->required()->check(CLI::ExistingFile);
  auto* vm_src = vm->add_option("--demix", demix, "Demixer base path (demix.bin + demix.json)");
  vm->add_option("--masks", masks, "Mask base path (masks.bin + masks.json)")->excludes(vm_src);
  auto* loss = app.add_subcommand("loss", "Evaluate the loss of estimates against a stack");
  loss->add_option("stack", stack, "Stack spectrogram base path")->required();
  loss->add_option("estimates", estimates, "Estimate spectrogram base path")->required();
  auto* separate = app.add_subcommand("separate", "Separate a multichannel WAV");
  separate->add_option("mix", mix, "Mixture WAV")->required()->check(CLI::ExistingFile);
  separate->add_option("--demix", demix, "Use a saved demixer instead of running one");
  auto* eval = app.add_subcommand("eval", "Score estimates against references");
  eval->add_option("--estimates", est_files, "Estimate WAVs");
  eval->add_option("--references", ref_files, "Reference WAVs, in source order");
  eval->add_option("--mixture", mixture, "Mixture WAV for the improvement baseline");
  eval->add_option("--corpus", corpus, "Score every scene directory below this path");
  auto* pipeline = app.add_subcommand("pipeline", "Simulate, demix, separate and evaluate a corpus");

  CLI11_PARSE(app, argc, argv);
  if (g.verbose) set_log_level("info");

  try {
    const PipelineConfig cfg = resolve(g);
    if (simulate->parsed()) return cmd_simulate(cfg, num_scenes);
    if (iva->parsed()) return cmd_iva(cfg, mix);
    if (sc->parsed()) return cmd_sc(cfg, mix);
    if (vm->parsed()) {
      require_config(!demix.empty() || !masks.empty(), "vm: give --demix or --masks");
      return cmd_vm(cfg, mix, demix, masks);
    }
    if (loss->parsed()) return cmd_loss(cfg, stack, estimates);
    if (separate->parsed()) return cmd_separate(cfg, mix, demix);
    if (eval->parsed()) return cmd_eval(cfg, est_files, ref_files, mixture, corpus);
    if (pipeline->parsed()) return cmd_pipeline(cfg);
  } catch (const ConfigError& e) {
    log().error("configuration: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    log().error("{}", e.what());
    return 1;
  }
  return 0;
}
