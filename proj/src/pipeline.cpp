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

#include "vmbss/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <optional>
#include <thread>

#include "vmbss/io.hpp"
#include "vmbss/log.hpp"
#include "vmbss/metrics.hpp"
#include "vmbss/serialize.hpp"
#include "vmbss/virtual_mic.hpp"

namespace vmbss {

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw InvalidInput("cannot open '" + p.string() + "' for writing");
  os << text;
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Demixer output mapped onto the separator grid: virtual channels and, when
// the separator starts from them, reference-microphone source estimates.
struct DemixStage {
  Spectrogram virtual_channels;
  Spectrogram estimates;
};

Spectrogram reference_virtuals(const Spectrogram& v, std::size_t num_sources) {
  std::vector<std::size_t> idx(num_sources);
  for (std::size_t c = 0; c < num_sources; ++c) idx[c] = c;  // mic 0 comes first
  Spectrogram out = v.select(idx);
  for (std::size_t c = 0; c < num_sources; ++c) out.tags()[c] = Source{c};
  return out;
}

}  // namespace

std::string to_string(DemixerKind d) {
  switch (d) {
    case DemixerKind::Iva: return "iva";
    case DemixerKind::Sc: return "sc";
    case DemixerKind::None: return "none";
  }
  return "none";
}

DemixerKind parse_demixer(const std::string& s) {
  if (s == "iva") return DemixerKind::Iva;
  if (s == "sc") return DemixerKind::Sc;
  if (s == "none") return DemixerKind::None;
  throw ConfigError("unknown demixer '" + s + "' (iva, sc, none)");
}

void PipelineConfig::validate() const {
  scene.validate();
  stft.validate();
  separator.validate();
  require_config(num_scenes >= 1, "pipeline: num_scenes must be at least 1");
  require_config(jobs >= 1, "pipeline: jobs must be at least 1");
  switch (demixer) {
    case DemixerKind::Iva: iva.validate(scene.num_mics); break;
    case DemixerKind::Sc: sc.validate(); break;
    case DemixerKind::None:
      require_config(separator.init == InitMode::MixtureSplit,
                     "pipeline: demixer none requires separator.init = mixture_split");
      break;
  }
}

MixtureSeparation separate_mixture(const PipelineConfig& cfg, const Waveform& mixtures,
                                   const std::filesystem::path& dir, const DemixingSolution* demixed) {
  const Spectrogram mix = stft(mixtures, cfg.stft);

  std::optional<DemixStage> demix;
  if (cfg.demixer == DemixerKind::Iva || demixed) {
    const DemixingSolution sol = demixed ? *demixed : auxiva_run(stft(mixtures, cfg.iva.stft), cfg.iva);
    SeparatorConfig init_cfg = cfg.separator;
    init_cfg.init = InitMode::IvaEstimates;
    const AugmentedStack physical_only = build_stack(mix);
    demix = DemixStage{regrid(backproject(sol), cfg.stft), init_estimates(physical_only, &sol, init_cfg)};
    if (!dir.empty()) write_demixing(dir / "demix", sol);
  } else if (cfg.demixer == DemixerKind::Sc) {
    const Spectrogram sc_mix = stft(mixtures, cfg.sc.stft);
    const CacgmmState state = align_permutations(cacgmm_em(sc_mix, cfg.sc));
    const auto kept = sc_kept_classes(sc_mix, state, cfg.sc.output_sources());
    const Spectrogram v = regrid(sc_virtual_channels(sc_mix, state, kept), cfg.stft);
    demix = DemixStage{v, reference_virtuals(v, kept.size())};
    if (!dir.empty()) write_masks(dir / "masks", state, cfg.sc.stft);
  }

  MixtureSeparation out;
  out.stack = demix ? build_stack(mix, demix->virtual_channels) : build_stack(mix);
  if (cfg.separator.init == InitMode::IvaEstimates) {
    require_config(demix.has_value(), "pipeline: iva_estimates init needs a demixer");
    out.init = demix->estimates;
  } else {
    out.init = init_estimates(out.stack, nullptr, cfg.separator);
  }
  out.result = separate_from(out.stack, cfg.separator, out.init);

  if (!dir.empty()) {
    std::string hist = "step,loss\n";
    for (std::size_t i = 0; i < out.result.loss_history.size(); ++i)
      hist += std::to_string(i) + "," + fmt6(out.result.loss_history[i]) + "\n";
    write_text(dir / "loss_history.csv", hist);
    write_text(dir / "report_init.json", to_json(out.result.init_report).dump(2) + "\n");
    write_text(dir / "report_final.json", to_json(out.result.final_report).dump(2) + "\n");
  }
  return out;
}

SceneOutcome run_scene(const PipelineConfig& cfg, std::size_t scene_id, const std::filesystem::path& dir) {
  SceneOutcome out;
  out.scene_id = scene_id;
  out.seed = cfg.base_seed + scene_id;

  SceneSpec spec = cfg.scene;
  spec.seed = out.seed;
  const Scene scene = render_scene(spec);
  const MixtureSeparation sep = separate_mixture(cfg, scene.mixtures, dir);
  const Spectrogram& init = sep.init;
  const SeparationResult& res = sep.result;

  const Waveform& refs = scene.reference_images();
  const Waveform est_init = istft(init);
  const Waveform est_final = istft(res.estimates);
  require_input(est_final.channels() == refs.channels(),
                "pipeline: estimate count " + std::to_string(est_final.channels()) + " differs from source count " +
                    std::to_string(refs.channels()));
  const Waveform mixture_ref = scene.mixtures.select(0);
  const ScoreCard score_init = pit_score(est_init, refs, &mixture_ref);
  const ScoreCard score_final = pit_score(est_final, refs, &mixture_ref);

  out.si_sdr_mixture = score_final.mean_si_sdr - score_final.improvement_over_mixture;
  out.si_sdr_init = score_init.mean_si_sdr;
  out.si_sdr_final = score_final.mean_si_sdr;
  out.loss_init = res.loss_history.front();
  out.loss_final = res.loss_history.back();
  out.steps = res.steps_taken;
  out.loss_history = res.loss_history;
  out.ok = true;

  if (!dir.empty()) {
    write_text(dir / "spec.json", to_json(spec).dump(2) + "\n");
    write_wav(dir / "mix.wav", scene.mixtures);
    for (std::size_t c = 0; c < est_final.channels(); ++c) {
      write_wav(dir / ("estimate_c" + std::to_string(c) + ".wav"), est_final.select(c));
      write_wav(dir / ("image_p0_c" + std::to_string(c) + ".wav"), refs.select(c));
    }
    json score = {{"init", to_json(score_init)}, {"final", to_json(score_final)}};
    write_text(dir / "score.json", score.dump(2) + "\n");
  }
  return out;
}

std::string format_results_csv(const std::vector<SceneOutcome>& scenes) {
  std::string csv = "scene_id,si_sdr_init,si_sdr_final,loss_init,loss_final,steps\n";
  std::vector<double> cols[5];
  for (const auto& s : scenes) {
    if (!s.ok) {
      csv += std::to_string(s.scene_id) + ",nan,nan,nan,nan,0\n";
      continue;
    }
    csv += std::to_string(s.scene_id) + "," + fmt6(s.si_sdr_init) + "," + fmt6(s.si_sdr_final) + "," +
           fmt6(s.loss_init) + "," + fmt6(s.loss_final) + "," + std::to_string(s.steps) + "\n";
    cols[0].push_back(s.si_sdr_init);
    cols[1].push_back(s.si_sdr_final);
    cols[2].push_back(s.loss_init);
    cols[3].push_back(s.loss_final);
    cols[4].push_back(static_cast<double>(s.steps));
  }
  csv += "median";
  for (const auto& c : cols) csv += "," + fmt6(median(c));
  csv += "\nmean";
  for (const auto& c : cols) csv += "," + fmt6(mean(c));
  csv += "\n";
  return csv;
}

PipelineReport run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);

  PipelineReport report;
  report.scenes.resize(cfg.num_scenes);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t id = next++; id < cfg.num_scenes; id = next++) {
      SceneOutcome& slot = report.scenes[id];
      try {
        std::filesystem::path dir;
        if (cfg.write_artifacts) {
          char name[32];
          std::snprintf(name, sizeof(name), "scene_%04zu", id);
          dir = cfg.output_dir / name;
          std::filesystem::create_directories(dir);
        }
        slot = run_scene(cfg, id, dir);
        log().info("scene {}: SI-SDR {:.2f} -> {:.2f} dB", id, slot.si_sdr_init, slot.si_sdr_final);
      } catch (const std::exception& e) {
        slot = SceneOutcome{};
        slot.scene_id = id;
        slot.seed = cfg.base_seed + id;
        slot.error = e.what();
        log().error("scene {} failed: {}", id, e.what());
      }
    }
  };
  const std::size_t n_threads = std::min(cfg.jobs, cfg.num_scenes);
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  json failures = json::array();
  for (const auto& s : report.scenes) {
    if (s.ok) continue;
    ++report.failures;
    failures.push_back({{"scene_id", s.scene_id}, {"seed", s.seed}, {"error", s.error}});
  }
  report.csv_path = cfg.output_dir / "results.csv";
  report.manifest_path = cfg.output_dir / "manifest.json";
  write_text(report.csv_path, format_results_csv(report.scenes));

  json scenes = json::array();
  for (const auto& s : report.scenes)
    scenes.push_back({{"scene_id", s.scene_id}, {"seed", s.seed}, {"ok", s.ok}});
  const json manifest = {{"pipeline", to_json(cfg)},
                         {"config", to_json(cfg)["config"]},
                         {"scenes", scenes},
                         {"failures", failures},
                         {"results_csv", "results.csv"}};
  write_text(report.manifest_path, manifest.dump(2) + "\n");
  return report;
}

}  // namespace vmbss
