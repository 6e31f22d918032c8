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
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "stbasv/rng.hpp"
#include "stbasv/tensor.hpp"

namespace stbasv {

// Ad-hoc microphone-array scene simulator, operating directly in feature
// space. A scene is a rectangular room with one source and C receiver nodes;
// each node applies distance-dependent attenuation and SNR, a fixed spectral
// tilt, and reverberation-like temporal smearing to the speaker's clean
// frame sequence. Waveform acoustics (impulse responses, sample rates) are an
// explicit non-goal: the simulation keeps only the structure the model can
// exploit — SNR diversity across nodes, per-channel coloring, temporal
// smearing, and a geometry-derived closest-node oracle.

// Sampling ranges for scene geometry and reverberation time.
struct SceneRanges {
  double length_lo = 5.0, length_hi = 25.0;  // meters
  double width_lo = 5.0, width_hi = 25.0;    // meters
  double height_lo = 2.7, height_hi = 4.0;   // meters
  double t60_lo = 0.2, t60_hi = 0.4;         // seconds
  void validate() const;                     // positive, lo <= hi
};
SceneRanges ranges_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SceneRanges& r);

// Constants of the rendering chain shared by every node.
struct RenderParams {
  double snr0_db = 0.0;        // SNR a node would have at distance 0
  double gain0 = 1.0;          // amplitude a node would have at distance 0
  double tilt_max = 0.8;       // per-node spectral log-slope drawn in [-max, max]
  double snr_jitter_db = 1.0;  // per-node SNR jitter stddev; 0 disables
  void validate() const;
};
RenderParams render_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RenderParams& p);

struct Node {
  std::array<double, 3> pos{};
  double gain = 1.0;      // g0 / (1 + distance)
  Tensor tilt;            // [F_in], per-dimension spectral coloring
  double smear_t60 = 0.0; // seconds of reverberation-like smearing
  double snr_db = 0.0;    // target signal-to-noise ratio for this node
};

struct Scene {
  std::array<double, 3> room{};  // length, width, height
  std::array<double, 3> source_pos{};
  std::vector<Node> nodes;
};
nlohmann::json to_json(const Scene& s);
Scene scene_from_json(const nlohmann::json& j);

// Euclidean source-to-node distance.
double node_distance(const Scene& scene, size_t node);
// Index of the node closest to the source; ties go to the lowest index.
int oracle_channel(const Scene& scene);

// A synthetic speaker: frames are a stationary AR(1) process around `mean`
// with per-dimension `scale` and temporal coefficient `ar`.
struct SpeakerProfile {
  int id = 0;
  Tensor mean;   // [F_in]
  Tensor scale;  // [F_in], strictly positive
  double ar = 0.7;  // in (0, 1)
};

struct Utterance {
  int speaker = 0;
  int scene = 0;
  Tensor features;  // [C, T, F_in]
  int oracle_channel = 0;
  std::vector<double> distances;  // source-to-node, per channel
};

// Frame rate the smearing time constant is measured against.
inline constexpr double kFramesPerSecond = 100.0;

// EMA decay for a -60 dB time of `t60` seconds: 10^(-3 / (t60 * fps)) so that
// after t60 seconds of frames the carried-over energy has decayed by 60 dB.
// t60 <= 0 means no smearing (coefficient 0).
double smear_coefficient(double t60);

// Random room, source, and node placements; per-node gain/SNR follow the
// distance laws gain = g0/(1+d) and snr = snr0 - 20*log10(1+d) + jitter.
Scene sample_scene(Rng& rng, int channels, int64_t input_dim,
                   const SceneRanges& ranges, const RenderParams& params);

// `count` speaker profiles with pairwise latent distance >= min_distance.
std::vector<SpeakerProfile> sample_profiles(int count, int64_t input_dim,
                                            double min_distance, Rng& rng);

// [T, F_in] clean AR(1) frames. The first draws of render_utterance are this
// exact sequence, so a fresh stream with the same state reproduces a render's
// clean frames bit-for-bit.
Tensor clean_frames(const SpeakerProfile& profile, int64_t frames, Rng& rng);

// Per channel: y_t = gain * (tilt (*) smear(x)_t) + noise, noise sized from
// the rendered signal power so the channel meets its snr_db in expectation.
Utterance render_utterance(const SpeakerProfile& profile, const Scene& scene,
                           int64_t frames, Rng& rng);

// Dataset-level configuration.
struct SimConfig {
  int channels = 8;
  int64_t frames = 50;
  int64_t input_dim = 24;
  int train_speakers = 20;
  int dev_speakers = 0;
  int test_speakers = 8;
  int scenes_per_speaker = 4;
  int utterances_per_scene = 2;
  double min_speaker_distance = 2.0;
  SceneRanges ranges;
  RenderParams render;
  void validate() const;
};
SimConfig sim_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimConfig& c);

struct UtteranceRecord {
  int id = 0;
  int speaker = 0;
  int scene = 0;
  std::string shard_file;        // multichannel features [C, T, F_in]
  std::string clean_shard_file;  // clean single-channel features [1, T, F_in]
  int oracle_channel = 0;
  std::vector<double> distances;
};

struct SplitRecord {
  std::vector<int> speakers;
  std::vector<UtteranceRecord> utterances;
};

struct DatasetManifest {
  int channels = 0;
  int64_t frames = 0;
  int64_t input_dim = 0;
  uint64_t seed = 0;
  std::vector<Scene> scenes;               // indexed by scene id
  std::map<std::string, SplitRecord> splits;  // "train" / "dev" / "test"
};
nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

// Renders every utterance, writes shards plus manifest.json under out_dir,
// and returns the manifest. Splits are speaker-disjoint by construction.
DatasetManifest build_dataset(const SimConfig& config, uint64_t seed,
                              const std::filesystem::path& out_dir);

// Reads and validates out_dir/manifest.json.
DatasetManifest load_manifest(const std::filesystem::path& dataset_dir);

// Throws ConfigError if any speaker id appears in more than one split.
void validate_disjoint(const DatasetManifest& m);

Tensor load_utterance(const std::filesystem::path& dataset_dir,
                      const UtteranceRecord& rec, bool clean = false);

// Uniformly random ordered subset of k distinct channels: [C, T, F_in] ->
// [k, T, F_in]. k outside [1, C] -> std::out_of_range.
Tensor reselect_channels(const Tensor& features, int64_t k, Rng& rng);

}  // namespace stbasv
