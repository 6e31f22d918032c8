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
#include "stbasv/trainer.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>

#include "stbasv/errors.hpp"
#include "stbasv/json_util.hpp"
#include "stbasv/ops.hpp"

namespace stbasv {
namespace {

const SplitRecord& train_split(const DatasetManifest& manifest) {
  const auto it = manifest.splits.find("train");
  if (it == manifest.splits.end() || it->second.utterances.empty()) {
    throw MissingArtifactError("training: dataset has no train utterances");
  }
  return it->second;
}

// Class index of each utterance: position of its speaker in the split's
// speaker list.
std::vector<int64_t> class_labels(const SplitRecord& split) {
  std::vector<int64_t> labels;
  labels.reserve(split.utterances.size());
  for (const UtteranceRecord& u : split.utterances) {
    const auto it =
        std::find(split.speakers.begin(), split.speakers.end(), u.speaker);
    if (it == split.speakers.end()) {
      throw ConfigError("training: utterance speaker " + std::to_string(u.speaker) +
                        " missing from the split's speaker list");
    }
    labels.push_back(it - split.speakers.begin());
  }
  return labels;
}

void check_input_dim(const StbConfig& cfg, const DatasetManifest& manifest) {
  if (cfg.input_dim != manifest.input_dim) {
    throw ConfigError("training: model input_dim " + std::to_string(cfg.input_dim) +
                      " does not match dataset input_dim " +
                      std::to_string(manifest.input_dim));
  }
}

// Shared epoch/batch driver. `features_of(epoch, index)` supplies the example
// tensor; gradients accumulate in fixed registry order, so reruns with one
// seed are bit-identical.
void run_training(StbModel& model, const TrainConfig& tc,
                  const std::function<Tensor(int, int64_t)>& features_of,
                  const std::vector<int64_t>& labels, TrainStats* stats) {
  Adam opt(tc.lr_resolved());
  const int64_t n = static_cast<int64_t>(labels.size());
  const int epochs = tc.epochs_resolved();
  int64_t step = 0;
  double last_correct = 0.0, last_total = 0.0, last_loss = 0.0;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng batch_rng = Rng::stream(tc.seed, "batching", static_cast<uint64_t>(epoch));
    batch_rng.shuffle(order);
    if (epoch == epochs - 1) {
      last_correct = 0.0;
      last_total = 0.0;
    }

    for (int64_t start = 0; start < n; start += tc.batch_size) {
      const int64_t stop = std::min<int64_t>(n, start + tc.batch_size);
      Tape tape;
      StbModel m = model.taped(tape);
      std::vector<Tensor> embeddings;
      std::vector<int64_t> batch_labels;
      for (int64_t i = start; i < stop; ++i) {
        const int64_t idx = order[static_cast<size_t>(i)];
        embeddings.push_back(embed(m, features_of(epoch, idx)));
        batch_labels.push_back(labels[static_cast<size_t>(idx)]);
      }
      const Tensor logits = classify(m, stack_rows(embeddings));
      const Tensor loss = ops::cross_entropy_logits(logits, batch_labels);
      const double loss_value = loss.scalar_value();
      if (!std::isfinite(loss_value)) {
        throw TrainingError("training diverged: non-finite loss at step " +
                            std::to_string(step));
      }
      tape.backward(loss);

      auto base_params = model.params();
      auto taped_params = m.params();
      std::vector<Tensor*> live;
      std::vector<Tensor> grads;
      for (size_t p = 0; p < base_params.size(); ++p) {
        if (model.is_frozen(base_params[p].group)) continue;
        live.push_back(base_params[p].slot);
        grads.push_back(tape.gradient(*taped_params[p].slot));
      }
      opt.step(live, grads);

      const int64_t batch = stop - start;
      const int64_t classes = logits.dim(1);
      int64_t correct = 0;
      for (int64_t b = 0; b < batch; ++b) {
        int64_t arg = 0;
        for (int64_t c = 1; c < classes; ++c) {
          if (logits[b * classes + c] > logits[b * classes + arg]) arg = c;
        }
        correct += arg == batch_labels[static_cast<size_t>(b)] ? 1 : 0;
      }
      if (epoch == epochs - 1) {
        last_correct += static_cast<double>(correct);
        last_total += static_cast<double>(batch);
      }
      last_loss = loss_value;
      if (stats != nullptr) {
        stats->points.push_back(
            {step, loss_value,
             static_cast<double>(correct) / static_cast<double>(batch)});
      }
      ++step;
    }
  }
  if (stats != nullptr) {
    stats->final_loss = last_loss;
    stats->final_accuracy = last_total > 0.0 ? last_correct / last_total : 0.0;
  }
}

}  // namespace

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
}

void Adam::step(const std::vector<Tensor*>& params,
                const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) {
    throw std::logic_error("adam: parameter/gradient count mismatch");
  }
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(static_cast<size_t>(params[i]->numel()), 0.0);
      v_[i].assign(static_cast<size_t>(params[i]->numel()), 0.0);
    }
  } else if (m_.size() != params.size()) {
    throw std::logic_error("adam: parameter list changed between steps");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->shape()) {
      throw std::logic_error("adam: gradient shape " + shape_str(grads[i].shape()) +
                             " does not match parameter shape " +
                             shape_str(params[i]->shape()));
    }
    std::vector<double> data = params[i]->data();
    for (size_t j = 0; j < data.size(); ++j) {
      const double g = grads[i][static_cast<int64_t>(j)];
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    *params[i] = Tensor::from(params[i]->shape(), std::move(data));
  }
}

int TrainConfig::epochs_resolved() const {
  if (epochs > 0) return epochs;
  return stage == "pretrain" ? 40 : 15;
}

double TrainConfig::lr_resolved() const {
  if (lr > 0.0) return lr;
  return stage == "pretrain" ? 1e-3 : 1e-4;
}

void TrainConfig::validate() const {
  if (stage != "pretrain" && stage != "finetune") {
    throw ConfigError("train: stage must be 'pretrain' or 'finetune'");
  }
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (lr < 0.0) throw ConfigError("train: lr must be >= 0");
  if (channels_per_example < 1) {
    throw ConfigError("train: channels_per_example must be >= 1");
  }
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  jsonu::check_keys(j,
                    {"stage", "epochs", "batch_size", "lr",
                     "channels_per_example", "seed", "normalizer"},
                    "train config");
  TrainConfig c;
  c.stage = jsonu::get_or<std::string>(j, "stage", c.stage);
  c.epochs = jsonu::get_or(j, "epochs", c.epochs);
  c.batch_size = jsonu::get_or(j, "batch_size", c.batch_size);
  c.lr = jsonu::get_or(j, "lr", c.lr);
  c.channels_per_example =
      jsonu::get_or(j, "channels_per_example", c.channels_per_example);
  c.seed = jsonu::get_or(j, "seed", c.seed);
  c.normalizer = normalizer_from_string(
      jsonu::get_or<std::string>(j, "normalizer", to_string(c.normalizer)));
  c.validate();
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"stage", c.stage},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"channels_per_example", c.channels_per_example},
          {"seed", c.seed},
          {"normalizer", to_string(c.normalizer)}};
}

void save_curve_csv(const std::filesystem::path& path, const TrainStats& stats) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "step,loss,accuracy\n" << std::setprecision(17);
  for (const TrainStats::Point& p : stats.points) {
    out << p.step << "," << p.loss << "," << p.accuracy << "\n";
  }
  if (!out) throw IoError("short write to " + path.string());
}

StbModel pretrain(const DatasetManifest& manifest,
                  const std::filesystem::path& dataset_dir, StbConfig model_cfg,
                  const TrainConfig& tc, TrainStats* stats) {
  tc.validate();
  if (tc.stage != "pretrain") {
    throw ConfigError("pretrain: train config stage is '" + tc.stage + "'");
  }
  const SplitRecord& split = train_split(manifest);
  check_input_dim(model_cfg, manifest);
  model_cfg.num_speakers = static_cast<int64_t>(split.speakers.size());

  Rng init_rng = Rng::stream(tc.seed, "init");
  StbModel model = init_single_channel_model(model_cfg, init_rng);

  std::vector<Tensor> clean;
  clean.reserve(split.utterances.size());
  for (const UtteranceRecord& u : split.utterances) {
    clean.push_back(load_utterance(dataset_dir, u, /*clean=*/true));
  }
  run_training(
      model, tc,
      [&](int, int64_t idx) { return clean[static_cast<size_t>(idx)]; },
      class_labels(split), stats);
  return model;
}

StbModel finetune(const DatasetManifest& manifest,
                  const std::filesystem::path& dataset_dir,
                  const Checkpoint& pretrained, StbConfig model_cfg,
                  const TrainConfig& tc, TrainStats* stats) {
  tc.validate();
  if (tc.stage != "finetune") {
    throw ConfigError("finetune: train config stage is '" + tc.stage + "'");
  }
  const SplitRecord& split = train_split(manifest);
  check_input_dim(model_cfg, manifest);
  if (tc.channels_per_example > manifest.channels) {
    throw ConfigError("finetune: channels_per_example " +
                      std::to_string(tc.channels_per_example) +
                      " exceeds the dataset's " +
                      std::to_string(manifest.channels) + " channels");
  }
  model_cfg.num_speakers = static_cast<int64_t>(split.speakers.size());
  model_cfg.channels_train = tc.channels_per_example;
  model_cfg.normalizer = tc.normalizer;

  Rng init_rng = Rng::stream(tc.seed, "init");
  StbModel model = load_pretrained_freeze(pretrained, model_cfg, init_rng);

  std::vector<Tensor> full;
  full.reserve(split.utterances.size());
  for (const UtteranceRecord& u : split.utterances) {
    full.push_back(load_utterance(dataset_dir, u));
  }
  run_training(
      model, tc,
      [&](int epoch, int64_t idx) {
        // Fresh channel draw for every (epoch, utterance) pair; keyed by
        // identity, not visit order, so batch shuffling cannot perturb it.
        const int uid = split.utterances[static_cast<size_t>(idx)].id;
        Rng r = Rng::stream(tc.seed, "reselect", static_cast<uint64_t>(epoch),
                            static_cast<uint64_t>(uid));
        return reselect_channels(full[static_cast<size_t>(idx)],
                                 tc.channels_per_example, r);
      },
      class_labels(split), stats);
  return model;
}

}  // namespace stbasv
