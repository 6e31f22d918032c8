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

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stbasv/model.hpp"
#include "stbasv/rng.hpp"
#include "stbasv/sim.hpp"
#include "stbasv/tensor.hpp"

namespace stbasv {

// dot(a, b) / (|a| |b|), in [-1, 1]. Zero-norm input -> std::domain_error.
double cosine_score(const Tensor& a, const Tensor& b);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Equal error rate of a verification score set. The FAR/FRR step functions
// change only at observed scores, so the sweep visits every score and every
// midpoint between adjacent scores, then linearly interpolates FAR and FRR
// across the first segment where FAR - FRR changes sign. Either class empty
// -> std::invalid_argument.
EerResult compute_eer(const std::vector<double>& target_scores,
                      const std::vector<double>& nontarget_scores);

struct Trial {
  int enroll = 0;  // utterance id
  int test = 0;    // utterance id
  bool is_target = false;
};

struct TrialSet {
  std::vector<Trial> trials;
};

// Verification protocol over one split: every same-speaker utterance pair is
// a target; an equal number of distinct different-speaker pairs is drawn from
// `rng`. Throws std::invalid_argument when either class would be empty.
TrialSet build_trials(const SplitRecord& split, Rng& rng);

struct EvalCondition {
  std::string kind;  // "channels" (subset size) or "rank" (closeness order)
  int64_t value = 0;
  double eer = 0.0;
  double threshold = 0.0;
  std::vector<double> target_scores;     // in target-trial order
  std::vector<double> nontarget_scores;  // in nontarget-trial order
};

struct EvalReport {
  std::vector<EvalCondition> conditions;
};
nlohmann::json to_json(const EvalReport& r);

// Scores every trial under each requested channel-subset size. Per condition
// and utterance, a seeded substream picks that many distinct channels (kept
// in ascending order, so a full-size subset is exactly the untouched input),
// the model embeds the subset, and trials are scored by cosine.
EvalReport evaluate(const StbModel& model,
                    const std::filesystem::path& dataset_dir,
                    const DatasetManifest& manifest, const std::string& split,
                    const TrialSet& trials,
                    const std::vector<int64_t>& subset_sizes, uint64_t seed);

// Closest-channel baseline: for rank r, each utterance is reduced to its
// r-th closest channel (rank 1 comes straight from the manifest's oracle
// label) and embedded through the given single-channel model. One condition
// per rank, 1..min(max_rank, C).
EvalReport oracle_one_best_eval(const StbModel& single_ch_model,
                                const std::filesystem::path& dataset_dir,
                                const DatasetManifest& manifest,
                                const std::string& split, const TrialSet& trials,
                                int max_rank = 6);

}  // namespace stbasv
