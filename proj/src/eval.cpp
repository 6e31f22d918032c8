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
#include "stbasv/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "stbasv/errors.hpp"
#include "stbasv/ops.hpp"

namespace stbasv {
namespace {

const SplitRecord& find_split(const DatasetManifest& manifest,
                              const std::string& split) {
  const auto it = manifest.splits.find(split);
  if (it == manifest.splits.end()) {
    throw ConfigError("evaluate: dataset has no split '" + split + "'");
  }
  return it->second;
}

// Features of every utterance in the split, keyed by id.
std::map<int, Tensor> load_split_features(const std::filesystem::path& dir,
                                          const SplitRecord& split) {
  std::map<int, Tensor> out;
  for (const UtteranceRecord& rec : split.utterances) {
    out.emplace(rec.id, load_utterance(dir, rec));
  }
  return out;
}

// Scores all trials against a per-utterance embedding table and finishes the
// condition with its EER.
void score_condition(const TrialSet& trials,
                     const std::map<int, Tensor>& embeddings,
                     EvalCondition& cond) {
  for (const Trial& t : trials.trials) {
    const auto enroll = embeddings.find(t.enroll);
    const auto test = embeddings.find(t.test);
    if (enroll == embeddings.end() || test == embeddings.end()) {
      throw ConfigError("evaluate: trial references utterance outside the split");
    }
    const double s = cosine_score(enroll->second, test->second);
    (t.is_target ? cond.target_scores : cond.nontarget_scores).push_back(s);
  }
  const EerResult r = compute_eer(cond.target_scores, cond.nontarget_scores);
  cond.eer = r.eer;
  cond.threshold = r.threshold;
}

}  // namespace

double cosine_score(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 1) {
    throw std::invalid_argument("cosine_score: expected two vectors of one shape, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw std::domain_error("cosine_score: zero vector has no direction");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

EerResult compute_eer(const std::vector<double>& target_scores,
                      const std::vector<double>& nontarget_scores) {
  if (target_scores.empty() || nontarget_scores.empty()) {
    throw std::invalid_argument("compute_eer: both score classes must be nonempty");
  }
  for (const auto* v : {&target_scores, &nontarget_scores}) {
    for (double s : *v) {
      if (!std::isfinite(s)) {
        throw std::invalid_argument("compute_eer: scores must be finite");
      }
    }
  }
  std::vector<double> ts = target_scores, ns = nontarget_scores;
  std::sort(ts.begin(), ts.end());
  std::sort(ns.begin(), ns.end());

  std::vector<double> all;
  all.reserve(ts.size() + ns.size());
  std::merge(ts.begin(), ts.end(), ns.begin(), ns.end(), std::back_inserter(all));
  all.erase(std::unique(all.begin(), all.end()), all.end());

  // FAR falls and FRR rises as the threshold sweeps upward, and both step
  // only at observed scores: visiting every score plus every midpoint (and
  // sentinels outside the range) is an exhaustive sweep.
  std::vector<double> thresholds;
  thresholds.reserve(2 * all.size() + 2);
  thresholds.push_back(all.front() - 1.0);
  for (size_t i = 0; i < all.size(); ++i) {
    thresholds.push_back(all[i]);
    if (i + 1 < all.size()) thresholds.push_back(0.5 * (all[i] + all[i + 1]));
  }
  thresholds.push_back(all.back() + 1.0);

  const auto far_at = [&](double t) {
    const auto it = std::lower_bound(ns.begin(), ns.end(), t);  // first >= t
    return static_cast<double>(ns.end() - it) / static_cast<double>(ns.size());
  };
  const auto frr_at = [&](double t) {
    const auto it = std::lower_bound(ts.begin(), ts.end(), t);
    return static_cast<double>(it - ts.begin()) / static_cast<double>(ts.size());
  };

  double prev_t = thresholds.front();
  double prev_far = far_at(prev_t), prev_frr = frr_at(prev_t);
  double prev_d = prev_far - prev_frr;
  for (size_t i = 1; i < thresholds.size(); ++i) {
    const double t = thresholds[i];
    const double far = far_at(t), frr = frr_at(t);
    const double d = far - frr;
    if (prev_d == 0.0) return {prev_far, prev_t};
    if (d == 0.0) return {far, t};
    if ((prev_d > 0.0) != (d > 0.0)) {
      const double alpha = prev_d / (prev_d - d);
      const double far_x = prev_far + alpha * (far - prev_far);
      const double frr_x = prev_frr + alpha * (frr - prev_frr);
      return {0.5 * (far_x + frr_x), prev_t + alpha * (t - prev_t)};
    }
    prev_t = t;
    prev_d = d;
    prev_far = far;
    prev_frr = frr;
  }
  return {0.5 * (prev_far + prev_frr), prev_t};
}

TrialSet build_trials(const SplitRecord& split, Rng& rng) {
  const auto& utts = split.utterances;
  TrialSet out;
  std::vector<std::pair<int, int>> cross;
  for (size_t i = 0; i < utts.size(); ++i) {
    for (size_t j = i + 1; j < utts.size(); ++j) {
      if (utts[i].speaker == utts[j].speaker) {
        out.trials.push_back({utts[i].id, utts[j].id, true});
      } else {
        cross.emplace_back(utts[i].id, utts[j].id);
      }
    }
  }
  const size_t num_targets = out.trials.size();
  if (num_targets == 0) {
    throw std::invalid_argument(
        "build_trials: no same-speaker pairs; need a speaker with two utterances");
  }
  if (cross.empty()) {
    throw std::invalid_argument(
        "build_trials: no different-speaker pairs; need at least two speakers");
  }
  if (cross.size() < num_targets) {
    throw std::invalid_argument(
        "build_trials: not enough different-speaker pairs to match " +
        std::to_string(num_targets) + " targets");
  }
  rng.shuffle(cross);
  for (size_t i = 0; i < num_targets; ++i) {
    out.trials.push_back({cross[i].first, cross[i].second, false});
  }
  return out;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json conds = nlohmann::json::array();
  for (const EvalCondition& c : r.conditions) {
    conds.push_back({{"kind", c.kind},
                     {"value", c.value},
                     {"eer", c.eer},
                     {"threshold", c.threshold},
                     {"num_target", c.target_scores.size()},
                     {"num_nontarget", c.nontarget_scores.size()},
                     {"target_scores", c.target_scores},
                     {"nontarget_scores", c.nontarget_scores}});
  }
  return {{"conditions", conds}};
}

EvalReport evaluate(const StbModel& model,
                    const std::filesystem::path& dataset_dir,
                    const DatasetManifest& manifest, const std::string& split,
                    const TrialSet& trials,
                    const std::vector<int64_t>& subset_sizes, uint64_t seed) {
  const SplitRecord& rec = find_split(manifest, split);
  if (trials.trials.empty()) {
    throw std::invalid_argument("evaluate: empty trial set");
  }
  const auto features = load_split_features(dataset_dir, rec);

  EvalReport report;
  for (const int64_t k : subset_sizes) {
    if (k < 1 || k > manifest.channels) {
      throw ConfigError("evaluate: channel subset size " + std::to_string(k) +
                        " outside [1, " + std::to_string(manifest.channels) + "]");
    }
    std::map<int, Tensor> embeddings;
    for (const auto& [id, feats] : features) {
      Rng sub = Rng::stream(seed, "eval_subset", static_cast<uint64_t>(k),
                            static_cast<uint64_t>(id));
      std::vector<int64_t> idx = sub.sample_distinct(feats.dim(0), k);
      std::sort(idx.begin(), idx.end());
      embeddings.emplace(id, embed(model, ops::take_axis0(feats, idx)));
    }
    EvalCondition cond;
    cond.kind = "channels";
    cond.value = k;
    score_condition(trials, embeddings, cond);
    report.conditions.push_back(std::move(cond));
  }
  return report;
}

EvalReport oracle_one_best_eval(const StbModel& single_ch_model,
                                const std::filesystem::path& dataset_dir,
                                const DatasetManifest& manifest,
                                const std::string& split, const TrialSet& trials,
                                int max_rank) {
  const SplitRecord& rec = find_split(manifest, split);
  if (max_rank < 1) {
    throw ConfigError("oracle_one_best_eval: max_rank must be >= 1");
  }
  const auto features = load_split_features(dataset_dir, rec);

  // Channel order by closeness per utterance, from the recorded geometry.
  std::map<int, std::vector<int64_t>> by_rank;
  for (const UtteranceRecord& u : rec.utterances) {
    if (u.distances.size() != static_cast<size_t>(manifest.channels)) {
      throw MissingArtifactError("oracle_one_best_eval: utterance " +
                                 std::to_string(u.id) +
                                 " lacks per-channel distances");
    }
    std::vector<int64_t> order(u.distances.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      return u.distances[static_cast<size_t>(a)] <
             u.distances[static_cast<size_t>(b)];
    });
    // Rank 1 is the manifest's oracle label, by contract, never recomputed.
    order[0] = u.oracle_channel;
    by_rank.emplace(u.id, std::move(order));
  }

  EvalReport report;
  const int ranks = std::min<int>(max_rank, manifest.channels);
  for (int r = 1; r <= ranks; ++r) {
    std::map<int, Tensor> embeddings;
    for (const auto& [id, feats] : features) {
      const int64_t channel = by_rank.at(id)[static_cast<size_t>(r - 1)];
      embeddings.emplace(id,
                         embed(single_ch_model, ops::take_axis0(feats, {channel})));
    }
    EvalCondition cond;
    cond.kind = "rank";
    cond.value = r;
    score_condition(trials, embeddings, cond);
    report.conditions.push_back(std::move(cond));
  }
  return report;
}

}  // namespace stbasv
