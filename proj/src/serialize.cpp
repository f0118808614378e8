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

#include "vmbss/serialize.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "vmbss/io.hpp"

namespace vmbss {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  require_config(res.ec == std::errc{} && res.ptr == v.data() + v.size(), key + ": '" + v + "' is not a number");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  require_config(res.ec == std::errc{} && res.ptr == v.data() + v.size(),
                 key + ": '" + v + "' is not a non-negative integer");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(key, item));
  }
  return out;
}

std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

struct Field {
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
Field uint_field(T PipelineConfig::*outer) {
  return {[outer](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*outer = static_cast<T>(parse_uint(k, v));
          },
          [outer](const PipelineConfig& c) { return std::to_string(c.*outer); }};
}

// Accessor-based fields for nested members.
template <typename Get>
Field size_field(Get get) {
  return {[get](PipelineConfig& c, const std::string& k, const std::string& v) {
            auto& ref = get(c);
            ref = static_cast<std::remove_reference_t<decltype(ref)>>(parse_uint(k, v));
          },
          [get](const PipelineConfig& c) { return std::to_string(get(const_cast<PipelineConfig&>(c))); }};
}

template <typename Get>
Field double_field(Get get) {
  return {[get](PipelineConfig& c, const std::string& k, const std::string& v) { get(c) = parse_double(k, v); },
          [get](const PipelineConfig& c) { return format_double(get(const_cast<PipelineConfig&>(c))); }};
}

template <typename Get>
Field bool_field(Get get) {
  return {[get](PipelineConfig& c, const std::string& k, const std::string& v) { get(c) = parse_bool(k, v); },
          [get](const PipelineConfig& c) { return std::string(get(const_cast<PipelineConfig&>(c)) ? "true" : "false"); }};
}

#define VMBSS_REF(expr) [](PipelineConfig & c) -> auto& { return expr; }

void add_stft_fields(std::map<std::string, Field>& fields, const std::string& prefix,
                     StftConfig& (*get)(PipelineConfig&)) {
  fields[prefix + "window_length"] = size_field([get](PipelineConfig& c) -> auto& { return get(c).window_length; });
  fields[prefix + "hop_length"] = size_field([get](PipelineConfig& c) -> auto& { return get(c).hop_length; });
  fields[prefix + "fft_size"] = size_field([get](PipelineConfig& c) -> auto& { return get(c).fft_size; });
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["scene.num_sources"] = size_field(VMBSS_REF(c.scene.num_sources));
    f["scene.num_mics"] = size_field(VMBSS_REF(c.scene.num_mics));
    f["scene.duration_s"] = double_field(VMBSS_REF(c.scene.duration_s));
    f["scene.sample_rate"] = size_field(VMBSS_REF(c.scene.sample_rate));
    f["scene.rir_length"] = size_field(VMBSS_REF(c.scene.rir_length));
    f["scene.delay_min"] = size_field(VMBSS_REF(c.scene.delay_min));
    f["scene.delay_max"] = size_field(VMBSS_REF(c.scene.delay_max));
    f["scene.decay_rate"] = double_field(VMBSS_REF(c.scene.decay_rate));
    f["scene.tail_gain"] = double_field(VMBSS_REF(c.scene.tail_gain));
    f["scene.noise_level"] = double_field(VMBSS_REF(c.scene.noise_level));
    f["scene.instantaneous_gains"] = {
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          c.scene.instantaneous_gains = parse_list(k, v);
        },
        [](const PipelineConfig& c) { return format_list(c.scene.instantaneous_gains); }};

    f["demixer"] = {[](PipelineConfig& c, const std::string&, const std::string& v) { c.demixer = parse_demixer(v); },
                    [](const PipelineConfig& c) { return to_string(c.demixer); }};

    f["iva.n_src"] = size_field(VMBSS_REF(c.iva.n_src));
    f["iva.n_iter"] = size_field(VMBSS_REF(c.iva.n_iter));
    f["iva.eps"] = double_field(VMBSS_REF(c.iva.eps));
    f["iva.drop_lowest_energy"] = bool_field(VMBSS_REF(c.iva.drop_lowest_energy));
    add_stft_fields(f, "iva.stft.", [](PipelineConfig& c) -> StftConfig& { return c.iva.stft; });

    f["sc.n_classes"] = size_field(VMBSS_REF(c.sc.n_classes));
    f["sc.n_iter"] = size_field(VMBSS_REF(c.sc.n_iter));
    f["sc.eps"] = double_field(VMBSS_REF(c.sc.eps));
    f["sc.drop_lowest_energy"] = bool_field(VMBSS_REF(c.sc.drop_lowest_energy));
    f["sc.seed"] = size_field(VMBSS_REF(c.sc.seed));
    add_stft_fields(f, "sc.stft.", [](PipelineConfig& c) -> StftConfig& { return c.sc.stft; });

    add_stft_fields(f, "stft.", [](PipelineConfig& c) -> StftConfig& { return c.stft; });

    f["fcp.past_taps"] = size_field(VMBSS_REF(c.separator.fcp.past_taps));
    f["fcp.future_taps"] = size_field(VMBSS_REF(c.separator.fcp.future_taps));
    f["fcp.tikhonov"] = double_field(VMBSS_REF(c.separator.fcp.tikhonov));

    f["loss.w_r"] = double_field(VMBSS_REF(c.separator.loss_weights.w_r));
    f["loss.w_i"] = double_field(VMBSS_REF(c.separator.loss_weights.w_i));
    f["loss.w_m"] = double_field(VMBSS_REF(c.separator.loss_weights.w_m));
    f["loss.alpha"] = double_field(VMBSS_REF(c.separator.loss_weights.alpha));
    f["loss.beta"] = double_field(VMBSS_REF(c.separator.loss_weights.beta));
    f["loss.isms_enabled"] = bool_field(VMBSS_REF(c.separator.isms_enabled));

    f["separator.init"] = {
        [](PipelineConfig& c, const std::string&, const std::string& v) { c.separator.init = parse_init_mode(v); },
        [](const PipelineConfig& c) { return to_string(c.separator.init); }};
    f["separator.max_steps"] = size_field(VMBSS_REF(c.separator.max_steps));
    f["separator.step_size"] = double_field(VMBSS_REF(c.separator.step_size));
    f["separator.fcp_refresh_every"] = size_field(VMBSS_REF(c.separator.fcp_refresh_every));
    f["separator.early_stop_rel_tol"] = double_field(VMBSS_REF(c.separator.early_stop_rel_tol));
    f["separator.num_sources"] = size_field(VMBSS_REF(c.separator.num_sources));
    f["separator.seed"] = size_field(VMBSS_REF(c.separator.seed));

    f["pipeline.output_dir"] = {
        [](PipelineConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
        [](const PipelineConfig& c) { return c.output_dir.string(); }};
    f["pipeline.num_scenes"] = size_field(VMBSS_REF(c.num_scenes));
    f["pipeline.base_seed"] = size_field(VMBSS_REF(c.base_seed));
    f["pipeline.jobs"] = size_field(VMBSS_REF(c.jobs));
    f["pipeline.write_artifacts"] = bool_field(VMBSS_REF(c.write_artifacts));
    return f;
  }();
  return table;
}

#undef VMBSS_REF

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw InvalidInput("cannot open '" + p.string() + "' for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw InvalidInput("cannot open '" + p.string() + "'");
  return is;
}

json read_json(const std::filesystem::path& p) {
  auto is = open_in(p);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw InvalidInput(p.string() + ": " + e.what());
  }
}

std::filesystem::path with_ext(std::filesystem::path base, const char* ext) {
  base += ext;
  return base;
}

void put_matrix(std::ostream& os, const Eigen::MatrixXcd& m) {
  const Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  write_c64(os, std::span<const cplx>(rm.data(), static_cast<std::size_t>(rm.size())));
}

Eigen::MatrixXcd get_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  const auto v = read_c64(is, static_cast<std::size_t>(rows * cols));
  Eigen::MatrixXcd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  return m;
}

}  // namespace

json to_json(const StftConfig& c) {
  return {{"window", "sqrt_hann"},
          {"window_length", c.window_length},
          {"hop_length", c.hop_length},
          {"fft_size", c.fft_size}};
}

StftConfig stft_config_from_json(const json& j) {
  StftConfig c;
  try {
    c.window_length = j.at("window_length").get<std::size_t>();
    c.hop_length = j.at("hop_length").get<std::size_t>();
    c.fft_size = j.at("fft_size").get<std::size_t>();
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("stft config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const SceneSpec& s) {
  return {{"num_sources", s.num_sources}, {"num_mics", s.num_mics},       {"duration_s", s.duration_s},
          {"sample_rate", s.sample_rate}, {"rir_length", s.rir_length},   {"delay_min", s.delay_min},
          {"delay_max", s.delay_max},     {"decay_rate", s.decay_rate},   {"tail_gain", s.tail_gain},
          {"noise_level", s.noise_level}, {"seed", s.seed},               {"instantaneous_gains", s.instantaneous_gains}};
}

SceneSpec scene_spec_from_json(const json& j) {
  SceneSpec s;
  try {
    s.num_sources = j.at("num_sources").get<std::size_t>();
    s.num_mics = j.at("num_mics").get<std::size_t>();
    s.duration_s = j.at("duration_s").get<double>();
    s.sample_rate = j.at("sample_rate").get<int>();
    s.rir_length = j.at("rir_length").get<std::size_t>();
    s.delay_min = j.at("delay_min").get<std::size_t>();
    s.delay_max = j.at("delay_max").get<std::size_t>();
    s.decay_rate = j.at("decay_rate").get<double>();
    s.tail_gain = j.at("tail_gain").get<double>();
    s.noise_level = j.at("noise_level").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.instantaneous_gains = j.value("instantaneous_gains", std::vector<double>{});
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("scene spec: ") + e.what());
  }
  s.validate();
  return s;
}

json to_json(const IvaConfig& c) {
  return {{"n_src", c.n_src},
          {"n_iter", c.n_iter},
          {"eps", c.eps},
          {"drop_lowest_energy", c.drop_lowest_energy},
          {"stft", to_json(c.stft)}};
}

json to_json(const ScConfig& c) {
  return {{"n_classes", c.n_classes}, {"n_iter", c.n_iter}, {"eps", c.eps},
          {"drop_lowest_energy", c.drop_lowest_energy}, {"seed", c.seed}, {"stft", to_json(c.stft)}};
}

json to_json(const FcpConfig& c) {
  return {{"past_taps", c.past_taps}, {"future_taps", c.future_taps}, {"tikhonov", c.tikhonov}};
}

json to_json(const LossWeights& w) {
  return {{"w_r", w.w_r}, {"w_i", w.w_i}, {"w_m", w.w_m}, {"alpha", w.alpha}, {"beta", w.beta}};
}

json to_json(const SeparatorConfig& c) {
  return {{"init", to_string(c.init)},
          {"max_steps", c.max_steps},
          {"step_size", c.step_size},
          {"fcp_refresh_every", c.fcp_refresh_every},
          {"loss_weights", to_json(c.loss_weights)},
          {"fcp", to_json(c.fcp)},
          {"isms_enabled", c.isms_enabled},
          {"early_stop_rel_tol", c.early_stop_rel_tol},
          {"num_sources", c.num_sources},
          {"seed", c.seed}};
}

json to_json(const PipelineConfig& c) {
  json kv = json::object();
  for (const auto& [key, value] : parse_key_values(to_key_values(c))) kv[key] = value;
  return {{"scene", to_json(c.scene)},
          {"demixer", to_string(c.demixer)},
          {"iva", to_json(c.iva)},
          {"sc", to_json(c.sc)},
          {"stft", to_json(c.stft)},
          {"separator", to_json(c.separator)},
          {"output_dir", c.output_dir.string()},
          {"num_scenes", c.num_scenes},
          {"base_seed", c.base_seed},
          {"jobs", c.jobs},
          {"write_artifacts", c.write_artifacts},
          {"config", kv}};
}

json to_json(const LossReport& r) {
  json channels = json::array();
  for (std::size_t k = 0; k < r.tags.size(); ++k)
    channels.push_back({{"tag", to_string(r.tags[k])},
                        {"mc_loss", r.per_channel_mc[k]},
                        {"normalizer", r.normalizers[k]}});
  return {{"channels", channels},
          {"physical_sum", r.physical_sum()},
          {"virtual_sum", r.virtual_sum()},
          {"isms_enabled", r.isms_enabled},
          {"isms", r.isms},
          {"total", r.total},
          {"weights", to_json(r.weights)},
          {"warnings", r.warnings}};
}

json to_json(const ScoreCard& s) {
  return {{"per_source_si_sdr", s.per_source_si_sdr},
          {"permutation", s.permutation},
          {"mean_si_sdr", s.mean_si_sdr},
          {"improvement_over_mixture", s.improvement_over_mixture}};
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require_config(eq != std::string::npos, "config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    require_config(!key.empty(), "config line " + std::to_string(lineno) + ": empty key");
    require_config(!kv.contains(key), "config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  if (path.extension() == ".json") {
    // a pipeline manifest
    const json j = read_json(path);
    require_config(j.contains("config") && j["config"].is_object(), path.string() + ": no 'config' object");
    KeyValues kv;
    for (const auto& [key, value] : j["config"].items()) kv[key] = value.get<std::string>();
    return kv;
  }
  auto is = open_in(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_key_values(ss.str());
}

void apply_key_values(PipelineConfig& cfg, const KeyValues& kv) {
  const auto& table = fields();
  for (const auto& [key, value] : kv) {
    const auto it = table.find(key);
    require_config(it != table.end(), "unknown config key '" + key + "'");
    it->second.set(cfg, key, value);
  }
  cfg.validate();
}

std::string to_key_values(const PipelineConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

void write_demixing(const std::filesystem::path& base, const DemixingSolution& sol) {
  require_input(!sol.W.empty() && sol.W.size() == sol.A.size(), "write_demixing: empty or inconsistent solution");
  {
    auto os = open_out(with_ext(base, ".bin"));
    for (const auto& w : sol.W) put_matrix(os, w);
    for (const auto& a : sol.A) put_matrix(os, a);
    if (!os) throw InvalidInput("failed writing demixing matrices");
  }
  json meta = {{"bins", sol.W.size()},
               {"sources", sol.W.front().rows()},
               {"mics", sol.W.front().cols()},
               {"kept_indices", sol.kept_indices},
               {"source_energies", sol.source_energies},
               {"objective_history", sol.objective_history},
               {"dtype", "complex128-le"},
               {"order", "W[f] row-major for every f, then A[f] row-major for every f"}};
  if (sol.separated.channels() > 0) meta["stft"] = to_json(sol.separated.config());
  auto os = open_out(with_ext(base, ".json"));
  os << meta.dump(2) << "\n";
}

DemixingSolution read_demixing(const std::filesystem::path& base, StftConfig* grid) {
  const json meta = read_json(with_ext(base, ".json"));
  DemixingSolution sol;
  std::size_t F = 0;
  Eigen::Index C = 0, P = 0;
  try {
    F = meta.at("bins").get<std::size_t>();
    C = meta.at("sources").get<Eigen::Index>();
    P = meta.at("mics").get<Eigen::Index>();
    sol.kept_indices = meta.at("kept_indices").get<std::vector<std::size_t>>();
    sol.source_energies = meta.at("source_energies").get<std::vector<double>>();
    sol.objective_history = meta.value("objective_history", std::vector<double>{});
    if (grid && meta.contains("stft")) *grid = stft_config_from_json(meta["stft"]);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("demix sidecar: ") + e.what());
  }
  require_input(static_cast<Eigen::Index>(sol.kept_indices.size()) == C, "demix sidecar: kept_indices size");
  auto is = open_in(with_ext(base, ".bin"));
  for (std::size_t f = 0; f < F; ++f) sol.W.push_back(get_matrix(is, C, P));
  for (std::size_t f = 0; f < F; ++f) sol.A.push_back(get_matrix(is, P, C));
  return sol;
}

void write_masks(const std::filesystem::path& base, const CacgmmState& state, const StftConfig& grid) {
  {
    auto os = open_out(with_ext(base, ".bin"));
    for (double v : state.posteriors) {
      const float x = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&x), sizeof(x));
    }
  }
  const json meta = {{"classes", state.classes},
                     {"mics", state.mics},
                     {"frames", state.frames},
                     {"bins", state.bins},
                     {"stft", to_json(grid)},
                     {"dtype", "float32-le"},
                     {"order", "class,frame,bin"}};
  auto os = open_out(with_ext(base, ".json"));
  os << meta.dump(2) << "\n";
}

CacgmmState read_masks(const std::filesystem::path& base, StftConfig* grid) {
  const json meta = read_json(with_ext(base, ".json"));
  CacgmmState st;
  try {
    st.classes = meta.at("classes").get<std::size_t>();
    st.mics = meta.at("mics").get<std::size_t>();
    st.frames = meta.at("frames").get<std::size_t>();
    st.bins = meta.at("bins").get<std::size_t>();
    if (grid) *grid = stft_config_from_json(meta.at("stft"));
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("mask sidecar: ") + e.what());
  }
  const auto values = read_f32(with_ext(base, ".bin"));
  require_input(values.size() == st.classes * st.frames * st.bins, "mask file size does not match its sidecar");
  st.posteriors = values;
  return st;
}

}  // namespace vmbss
