/* Copyright 2026 The stb-asv Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "stbasv/sim.hpp"

#include <cmath>
#include <stdexcept>

#include "stbasv/errors.hpp"
#include "stbasv/json_util.hpp"
#include "stbasv/ops.hpp"
#include "stbasv/tensor_io.hpp"

namespace stbasv {
namespace {

// Spread of speaker latent means; large against unit-scale AR noise so
// speakers are separable, small enough that distances stay O(10).
constexpr double kSpeakerSpread = 2.0;

double dist3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void check_pair(double lo, double hi, const char* what) {
  if (!(lo > 0.0) && std::string(what) != "t60") {
    throw ConfigError(std::string("scene ranges: ") + what + " must be positive");
  }
  if (lo < 0.0) {
    throw ConfigError(std::string("scene ranges: ") + what + " must be >= 0");
  }
  if (!(lo <= hi)) {
    throw ConfigError(std::string("scene ranges: ") + what + " range is empty");
  }
}

std::pair<double, double> pair_from_json(const nlohmann::json& j, const char* key,
                                         std::pair<double, double> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw ConfigError(std::string("scene ranges: '") + key +
                      "' must be a [lo, hi] number pair");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

std::array<double, 3> vec3_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigError(std::string(what) + ": expected a 3-vector");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void validate_profile(const SpeakerProfile& p) {
  if (p.mean.rank() != 1 || p.mean.numel() < 1) {
    throw ConfigError("speaker profile: mean must be a nonempty vector");
  }
  if (p.scale.shape() != p.mean.shape()) {
    throw ConfigError("speaker profile: scale shape " + shape_str(p.scale.shape()) +
                      " does not match mean shape " + shape_str(p.mean.shape()));
  }
  for (int64_t i = 0; i < p.scale.numel(); ++i) {
    if (!(p.scale[i] > 0.0)) {
      throw ConfigError("speaker profile: scale must be strictly positive");
    }
  }
  if (!(p.ar > 0.0 && p.ar < 1.0)) {
    throw ConfigError("speaker profile: AR coefficient must lie in (0, 1)");
  }
}

}  // namespace

void SceneRanges::validate() const {
  check_pair(length_lo, length_hi, "length");
  check_pair(width_lo, width_hi, "width");
  check_pair(height_lo, height_hi, "height");
  check_pair(t60_lo, t60_hi, "t60");
}

SceneRanges ranges_from_json(const nlohmann::json& j) {
  jsonu::check_keys(j, {"length", "width", "height", "t60"}, "scene ranges");
  SceneRanges r;
  std::tie(r.length_lo, r.length_hi) =
      pair_from_json(j, "length", {r.length_lo, r.length_hi});
  std::tie(r.width_lo, r.width_hi) =
      pair_from_json(j, "width", {r.width_lo, r.width_hi});
  std::tie(r.height_lo, r.height_hi) =
      pair_from_json(j, "height", {r.height_lo, r.height_hi});
  std::tie(r.t60_lo, r.t60_hi) = pair_from_json(j, "t60", {r.t60_lo, r.t60_hi});
  return r;
}

nlohmann::json to_json(const SceneRanges& r) {
  return {{"length", {r.length_lo, r.length_hi}},
          {"width", {r.width_lo, r.width_hi}},
          {"height", {r.height_lo, r.height_hi}},
          {"t60", {r.t60_lo, r.t60_hi}}};
}

void RenderParams::validate() const {
  if (!(gain0 > 0.0)) throw ConfigError("render params: gain0 must be positive");
  if (tilt_max < 0.0) throw ConfigError("render params: tilt_max must be >= 0");
  if (snr_jitter_db < 0.0) {
    throw ConfigError("render params: snr_jitter_db must be >= 0");
  }
  if (!std::isfinite(snr0_db)) {
    throw ConfigError("render params: snr0_db must be finite");
  }
}

RenderParams render_params_from_json(const nlohmann::json& j) {
  jsonu::check_keys(j, {"snr0_db", "gain0", "tilt_max", "snr_jitter_db"},
                    "render params");
  RenderParams p;
  p.snr0_db = jsonu::get_or(j, "snr0_db", p.snr0_db);
  p.gain0 = jsonu::get_or(j, "gain0", p.gain0);
  p.tilt_max = jsonu::get_or(j, "tilt_max", p.tilt_max);
  p.snr_jitter_db = jsonu::get_or(j, "snr_jitter_db", p.snr_jitter_db);
  return p;
}

nlohmann::json to_json(const RenderParams& p) {
  return {{"snr0_db", p.snr0_db},
          {"gain0", p.gain0},
          {"tilt_max", p.tilt_max},
          {"snr_jitter_db", p.snr_jitter_db}};
}

nlohmann::json to_json(const Scene& s) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const Node& n : s.nodes) {
    nodes.push_back({{"pos", n.pos},
                     {"gain", n.gain},
                     {"tilt", n.tilt.data()},
                     {"smear_t60", n.smear_t60},
                     {"snr_db", n.snr_db}});
  }
  return {{"room", s.room}, {"source_pos", s.source_pos}, {"nodes", nodes}};
}

Scene scene_from_json(const nlohmann::json& j) {
  jsonu::check_keys(j, {"room", "source_pos", "nodes"}, "scene");
  Scene s;
  s.room = vec3_from_json(jsonu::require_key(j, "room", "scene"), "scene room");
  s.source_pos =
      vec3_from_json(jsonu::require_key(j, "source_pos", "scene"), "scene source_pos");
  for (const auto& nj : jsonu::require_key(j, "nodes", "scene")) {
    jsonu::check_keys(nj, {"pos", "gain", "tilt", "smear_t60", "snr_db"},
                      "scene node");
    Node n;
    n.pos = vec3_from_json(jsonu::require_key(nj, "pos", "scene node"), "node pos");
    n.gain = jsonu::get_required<double>(nj, "gain", "scene node");
    auto tilt = jsonu::get_required<std::vector<double>>(nj, "tilt", "scene node");
    const int64_t tilt_len = static_cast<int64_t>(tilt.size());
    n.tilt = Tensor::from({tilt_len}, std::move(tilt));
    n.smear_t60 = jsonu::get_required<double>(nj, "smear_t60", "scene node");
    n.snr_db = jsonu::get_required<double>(nj, "snr_db", "scene node");
    s.nodes.push_back(std::move(n));
  }
  return s;
}

double node_distance(const Scene& scene, size_t node) {
  return dist3(scene.source_pos, scene.nodes.at(node).pos);
}

int oracle_channel(const Scene& scene) {
  if (scene.nodes.empty()) throw ConfigError("oracle_channel: scene has no nodes");
  int best = 0;
  double best_d = node_distance(scene, 0);
  for (size_t i = 1; i < scene.nodes.size(); ++i) {
    const double d = node_distance(scene, i);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

double smear_coefficient(double t60) {
  if (t60 <= 0.0) return 0.0;
  return std::pow(10.0, -3.0 / (t60 * kFramesPerSecond));
}

Scene sample_scene(Rng& rng, int channels, int64_t input_dim,
                   const SceneRanges& ranges, const RenderParams& params) {
  if (channels < 1) throw ConfigError("sample_scene: need at least one node");
  if (input_dim < 1) throw ConfigError("sample_scene: input_dim must be >= 1");
  ranges.validate();
  params.validate();

  Scene s;
  s.room = {rng.uniform(ranges.length_lo, ranges.length_hi),
            rng.uniform(ranges.width_lo, ranges.width_hi),
            rng.uniform(ranges.height_lo, ranges.height_hi)};
  const double t60 = rng.uniform(ranges.t60_lo, ranges.t60_hi);

  // 5% inset keeps every placement strictly inside the walls.
  auto place = [&] {
    std::array<double, 3> p;
    for (int i = 0; i < 3; ++i) {
      p[static_cast<size_t>(i)] =
          rng.uniform(0.05 * s.room[static_cast<size_t>(i)],
                      0.95 * s.room[static_cast<size_t>(i)]);
    }
    return p;
  };
  s.source_pos = place();

  for (int c = 0; c < channels; ++c) {
    Node n;
    int attempts = 0;
    do {
      n.pos = place();
      if (++attempts > 10000) {
        throw std::runtime_error("sample_scene: cannot place node off the source");
      }
    } while (dist3(n.pos, s.source_pos) < 1e-6);
    const double d = dist3(n.pos, s.source_pos);
    n.gain = params.gain0 / (1.0 + d);
    const double slope = rng.uniform(-params.tilt_max, params.tilt_max);
    std::vector<double> tilt(static_cast<size_t>(input_dim));
    for (int64_t f = 0; f < input_dim; ++f) {
      const double frac =
          input_dim > 1
              ? static_cast<double>(f) / static_cast<double>(input_dim - 1) - 0.5
              : 0.0;
      tilt[static_cast<size_t>(f)] = std::exp(slope * frac);
    }
    n.tilt = Tensor::from({input_dim}, std::move(tilt));
    n.smear_t60 = t60;
    n.snr_db = params.snr0_db - 20.0 * std::log10(1.0 + d) +
               rng.normal() * params.snr_jitter_db;
    s.nodes.push_back(std::move(n));
  }
  return s;
}

std::vector<SpeakerProfile> sample_profiles(int count, int64_t input_dim,
                                            double min_distance, Rng& rng) {
  if (count < 0) throw ConfigError("sample_profiles: negative count");
  if (input_dim < 1) throw ConfigError("sample_profiles: input_dim must be >= 1");
  std::vector<SpeakerProfile> out;
  for (int id = 0; id < count; ++id) {
    SpeakerProfile p;
    p.id = id;
    int attempts = 0;
    for (;;) {
      std::vector<double> mean(static_cast<size_t>(input_dim));
      for (double& v : mean) v = rng.normal() * kSpeakerSpread;
      p.mean = Tensor::from({input_dim}, std::move(mean));
      bool ok = true;
      for (const SpeakerProfile& q : out) {
        double d2 = 0.0;
        for (int64_t i = 0; i < input_dim; ++i) {
          const double d = p.mean[i] - q.mean[i];
          d2 += d * d;
        }
        if (std::sqrt(d2) < min_distance) {
          ok = false;
          break;
        }
      }
      if (ok) break;
      if (++attempts > 1000) {
        throw ConfigError(
            "sample_profiles: cannot keep speaker latents min_distance apart; "
            "lower min_speaker_distance or the speaker count");
      }
    }
    std::vector<double> scale(static_cast<size_t>(input_dim));
    for (double& v : scale) v = rng.uniform(0.6, 1.4);
    p.scale = Tensor::from({input_dim}, std::move(scale));
    p.ar = rng.uniform(0.5, 0.9);
    out.push_back(std::move(p));
  }
  return out;
}

Tensor clean_frames(const SpeakerProfile& profile, int64_t frames, Rng& rng) {
  validate_profile(profile);
  if (frames < 1) throw ConfigError("clean_frames: need at least one frame");
  const int64_t f = profile.mean.dim(0);
  const double rho = profile.ar;
  const double fac = std::sqrt(1.0 - rho * rho);
  std::vector<double> x(static_cast<size_t>(frames * f));
  for (int64_t t = 0; t < frames; ++t) {
    for (int64_t d = 0; d < f; ++d) {
      const double eps = rng.normal();
      const size_t i = static_cast<size_t>(t * f + d);
      if (t == 0) {
        x[i] = profile.mean[d] + profile.scale[d] * eps;
      } else {
        // Stationary AR(1): marginal variance stays scale^2 for every t.
        x[i] = profile.mean[d] +
               rho * (x[i - static_cast<size_t>(f)] - profile.mean[d]) +
               fac * profile.scale[d] * eps;
      }
    }
  }
  return Tensor::from({frames, f}, std::move(x));
}

Utterance render_utterance(const SpeakerProfile& profile, const Scene& scene,
                           int64_t frames, Rng& rng) {
  if (scene.nodes.empty()) {
    throw ConfigError("render_utterance: scene has no nodes");
  }
  const Tensor clean = clean_frames(profile, frames, rng);
  const int64_t f = profile.mean.dim(0);
  const int64_t c = static_cast<int64_t>(scene.nodes.size());
  std::vector<double> out(static_cast<size_t>(c * frames * f));

  Utterance u;
  u.speaker = profile.id;
  for (int64_t ci = 0; ci < c; ++ci) {
    const Node& node = scene.nodes[static_cast<size_t>(ci)];
    if (node.tilt.shape() != Shape{f}) {
      throw ConfigError("render_utterance: node tilt shape " +
                        shape_str(node.tilt.shape()) + " does not match input_dim " +
                        std::to_string(f));
    }
    const double lambda = smear_coefficient(node.smear_t60);
    double* sig = &out[static_cast<size_t>(ci * frames * f)];
    // Causal EMA smear, then fixed per-channel gain and tilt.
    for (int64_t t = 0; t < frames; ++t) {
      for (int64_t d = 0; d < f; ++d) {
        const double xv = clean[t * f + d];
        sig[t * f + d] =
            t == 0 ? xv : (1.0 - lambda) * xv + lambda * sig[(t - 1) * f + d];
      }
    }
    double power = 0.0;
    for (int64_t t = 0; t < frames; ++t) {
      for (int64_t d = 0; d < f; ++d) {
        sig[t * f + d] *= node.gain * node.tilt[d];
        power += sig[t * f + d] * sig[t * f + d];
      }
    }
    power /= static_cast<double>(frames * f);
    // Noise sized against this render's own signal power; snr_db -> +inf
    // cleanly degrades to exactly zero noise.
    const double sigma = std::sqrt(power / std::pow(10.0, node.snr_db / 10.0));
    for (int64_t i = 0; i < frames * f; ++i) {
      sig[i] += sigma * rng.normal();
    }
    u.distances.push_back(node_distance(scene, static_cast<size_t>(ci)));
  }
  u.features = Tensor::from({c, frames, f}, std::move(out));
  u.oracle_channel = oracle_channel(scene);
  if (!u.features.all_finite()) {
    throw std::runtime_error("render_utterance: non-finite features rendered");
  }
  return u;
}

void SimConfig::validate() const {
  if (channels < 1) throw ConfigError("sim: channels must be >= 1");
  if (frames < 1) throw ConfigError("sim: frames must be >= 1");
  if (input_dim < 1) throw ConfigError("sim: input_dim must be >= 1");
  if (train_speakers < 1) throw ConfigError("sim: train_speakers must be >= 1");
  if (dev_speakers < 0 || test_speakers < 0) {
    throw ConfigError("sim: speaker counts must be >= 0");
  }
  if (scenes_per_speaker < 1) {
    throw ConfigError("sim: scenes_per_speaker must be >= 1");
  }
  if (utterances_per_scene < 1) {
    throw ConfigError("sim: utterances_per_scene must be >= 1");
  }
  if (min_speaker_distance < 0.0) {
    throw ConfigError("sim: min_speaker_distance must be >= 0");
  }
  ranges.validate();
  render.validate();
}

SimConfig sim_config_from_json(const nlohmann::json& j) {
  jsonu::check_keys(j,
                    {"channels", "frames", "input_dim", "train_speakers",
                     "dev_speakers", "test_speakers", "scenes_per_speaker",
                     "utterances_per_scene", "min_speaker_distance", "ranges",
                     "render"},
                    "sim config");
  SimConfig c;
  c.channels = jsonu::get_or(j, "channels", c.channels);
  c.frames = jsonu::get_or(j, "frames", c.frames);
  c.input_dim = jsonu::get_or(j, "input_dim", c.input_dim);
  c.train_speakers = jsonu::get_or(j, "train_speakers", c.train_speakers);
  c.dev_speakers = jsonu::get_or(j, "dev_speakers", c.dev_speakers);
  c.test_speakers = jsonu::get_or(j, "test_speakers", c.test_speakers);
  c.scenes_per_speaker = jsonu::get_or(j, "scenes_per_speaker", c.scenes_per_speaker);
  c.utterances_per_scene =
      jsonu::get_or(j, "utterances_per_scene", c.utterances_per_scene);
  c.min_speaker_distance =
      jsonu::get_or(j, "min_speaker_distance", c.min_speaker_distance);
  if (j.contains("ranges")) c.ranges = ranges_from_json(j.at("ranges"));
  if (j.contains("render")) c.render = render_params_from_json(j.at("render"));
  return c;
}

nlohmann::json to_json(const SimConfig& c) {
  return {{"channels", c.channels},
          {"frames", c.frames},
          {"input_dim", c.input_dim},
          {"train_speakers", c.train_speakers},
          {"dev_speakers", c.dev_speakers},
          {"test_speakers", c.test_speakers},
          {"scenes_per_speaker", c.scenes_per_speaker},
          {"utterances_per_scene", c.utterances_per_scene},
          {"min_speaker_distance", c.min_speaker_distance},
          {"ranges", to_json(c.ranges)},
          {"render", to_json(c.render)}};
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json scenes = nlohmann::json::array();
  for (const Scene& s : m.scenes) scenes.push_back(to_json(s));
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [name, split] : m.splits) {
    nlohmann::json utts = nlohmann::json::array();
    for (const UtteranceRecord& u : split.utterances) {
      utts.push_back({{"id", u.id},
                      {"speaker", u.speaker},
                      {"scene", u.scene},
                      {"shard_file", u.shard_file},
                      {"clean_shard_file", u.clean_shard_file},
                      {"oracle_channel", u.oracle_channel},
                      {"distances", u.distances}});
    }
    splits[name] = {{"speakers", split.speakers}, {"utterances", utts}};
  }
  return {{"format", 1},       {"seed", m.seed},
          {"channels", m.channels}, {"frames", m.frames},
          {"input_dim", m.input_dim}, {"scenes", scenes},
          {"splits", splits}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  jsonu::check_keys(
      j, {"format", "seed", "channels", "frames", "input_dim", "scenes", "splits"},
      "dataset manifest");
  if (jsonu::get_required<int>(j, "format", "dataset manifest") != 1) {
    throw ConfigError("dataset manifest: unsupported format");
  }
  DatasetManifest m;
  m.seed = jsonu::get_required<uint64_t>(j, "seed", "dataset manifest");
  m.channels = jsonu::get_required<int>(j, "channels", "dataset manifest");
  m.frames = jsonu::get_required<int64_t>(j, "frames", "dataset manifest");
  m.input_dim = jsonu::get_required<int64_t>(j, "input_dim", "dataset manifest");
  for (const auto& sj : jsonu::require_key(j, "scenes", "dataset manifest")) {
    m.scenes.push_back(scene_from_json(sj));
  }
  for (const auto& item :
       jsonu::require_key(j, "splits", "dataset manifest").items()) {
    jsonu::check_keys(item.value(), {"speakers", "utterances"},
                      "dataset split '" + item.key() + "'");
    SplitRecord split;
    split.speakers = jsonu::get_required<std::vector<int>>(item.value(), "speakers",
                                                           "dataset split");
    for (const auto& uj :
         jsonu::require_key(item.value(), "utterances", "dataset split")) {
      jsonu::check_keys(uj,
                        {"id", "speaker", "scene", "shard_file", "clean_shard_file",
                         "oracle_channel", "distances"},
                        "utterance record");
      UtteranceRecord u;
      u.id = jsonu::get_required<int>(uj, "id", "utterance record");
      u.speaker = jsonu::get_required<int>(uj, "speaker", "utterance record");
      u.scene = jsonu::get_required<int>(uj, "scene", "utterance record");
      u.shard_file = jsonu::get_required<std::string>(uj, "shard_file",
                                                      "utterance record");
      u.clean_shard_file = jsonu::get_required<std::string>(uj, "clean_shard_file",
                                                            "utterance record");
      u.oracle_channel =
          jsonu::get_required<int>(uj, "oracle_channel", "utterance record");
      u.distances = jsonu::get_required<std::vector<double>>(uj, "distances",
                                                             "utterance record");
      if (u.scene < 0 || static_cast<size_t>(u.scene) >= m.scenes.size()) {
        throw ConfigError("dataset manifest: utterance " + std::to_string(u.id) +
                          " references unknown scene " + std::to_string(u.scene));
      }
      if (u.oracle_channel < 0 || u.oracle_channel >= m.channels) {
        throw ConfigError("dataset manifest: utterance " + std::to_string(u.id) +
                          " has out-of-range oracle channel");
      }
      split.utterances.push_back(std::move(u));
    }
    m.splits.emplace(item.key(), std::move(split));
  }
  validate_disjoint(m);
  return m;
}

DatasetManifest build_dataset(const SimConfig& config, uint64_t seed,
                              const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir / "shards");

  const int total =
      config.train_speakers + config.dev_speakers + config.test_speakers;
  Rng prof_rng = Rng::stream(seed, "sim-profiles");
  const std::vector<SpeakerProfile> profiles = sample_profiles(
      total, config.input_dim, config.min_speaker_distance, prof_rng);

  DatasetManifest m;
  m.channels = config.channels;
  m.frames = config.frames;
  m.input_dim = config.input_dim;
  m.seed = seed;
  m.splits["train"] = {};
  m.splits["dev"] = {};
  m.splits["test"] = {};

  auto split_of = [&](int speaker) -> SplitRecord& {
    if (speaker < config.train_speakers) return m.splits["train"];
    if (speaker < config.train_speakers + config.dev_speakers) {
      return m.splits["dev"];
    }
    return m.splits["test"];
  };
  for (int s = 0; s < total; ++s) split_of(s).speakers.push_back(s);

  for (int s = 0; s < total; ++s) {
    for (int j = 0; j < config.scenes_per_speaker; ++j) {
      Rng scene_rng = Rng::stream(seed, "sim-scene", static_cast<uint64_t>(s),
                                  static_cast<uint64_t>(j));
      const int scene_id = s * config.scenes_per_speaker + j;
      m.scenes.push_back(sample_scene(scene_rng, config.channels, config.input_dim,
                                      config.ranges, config.render));
      for (int k = 0; k < config.utterances_per_scene; ++k) {
        const int uid = scene_id * config.utterances_per_scene + k;
        Rng render_rng = Rng::stream(seed, "sim", static_cast<uint64_t>(uid));
        Utterance utt =
            render_utterance(profiles[static_cast<size_t>(s)],
                             m.scenes[static_cast<size_t>(scene_id)],
                             config.frames, render_rng);
        Rng clean_rng = Rng::stream(seed, "sim", static_cast<uint64_t>(uid));
        const Tensor clean = clean_frames(profiles[static_cast<size_t>(s)],
                                          config.frames, clean_rng);

        UtteranceRecord rec;
        rec.id = uid;
        rec.speaker = s;
        rec.scene = scene_id;
        rec.shard_file = "shards/u" + std::to_string(uid) + ".stbt";
        rec.clean_shard_file = "shards/u" + std::to_string(uid) + "_clean.stbt";
        rec.oracle_channel = utt.oracle_channel;
        rec.distances = utt.distances;
        io::save_tensor(out_dir / rec.shard_file, utt.features);
        io::save_tensor(out_dir / rec.clean_shard_file,
                        ops::reshape(clean, {1, config.frames, config.input_dim}));
        split_of(s).utterances.push_back(std::move(rec));
      }
    }
  }
  validate_disjoint(m);
  jsonu::save_file(out_dir / "manifest.json", to_json(m));
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& dataset_dir) {
  return manifest_from_json(jsonu::load_file(dataset_dir / "manifest.json"));
}

void validate_disjoint(const DatasetManifest& m) {
  std::map<int, std::string> seen;
  for (const auto& [name, split] : m.splits) {
    for (int s : split.speakers) {
      const auto [it, inserted] = seen.emplace(s, name);
      if (!inserted) {
        throw ConfigError("dataset: speaker " + std::to_string(s) +
                          " appears in splits '" + it->second + "' and '" + name +
                          "'");
      }
    }
  }
}

Tensor load_utterance(const std::filesystem::path& dataset_dir,
                      const UtteranceRecord& rec, bool clean) {
  return io::load_tensor(dataset_dir / (clean ? rec.clean_shard_file : rec.shard_file));
}

Tensor reselect_channels(const Tensor& features, int64_t k, Rng& rng) {
  if (features.rank() != 3) {
    throw std::invalid_argument("reselect_channels: expected [C, T, F], got " +
                                shape_str(features.shape()));
  }
  const int64_t c = features.dim(0);
  if (k < 1 || k > c) {
    throw std::out_of_range("reselect_channels: k=" + std::to_string(k) +
                            " outside [1, " + std::to_string(c) + "]");
  }
  return ops::take_axis0(features, rng.sample_distinct(c, k));
}

}  // namespace stbasv
