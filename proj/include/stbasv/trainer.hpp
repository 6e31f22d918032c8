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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stbasv/model.hpp"
#include "stbasv/sim.hpp"
#include "stbasv/tensor.hpp"

namespace stbasv {

// Adam with bias correction. State is positional: every step must pass the
// same parameter list in the same order.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  // In-place update of *params[i] from grads[i]. A fresh optimizer given all
  // zero gradients leaves every parameter bit-identical.
  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);
  int64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
  std::string stage = "pretrain";  // "pretrain" | "finetune"
  int epochs = 0;                  // 0 -> stage default (40 pretrain, 15 finetune)
  int batch_size = 8;
  double lr = 0.0;                 // 0 -> stage default (1e-3 / 1e-4)
  int channels_per_example = 4;    // channels redrawn per utterance per epoch
  uint64_t seed = 1234;
  Normalizer normalizer = Normalizer::softmax;  // channel-axis normalizer

  int epochs_resolved() const;
  double lr_resolved() const;
  void validate() const;
};
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);

struct TrainStats {
  struct Point {
    int64_t step = 0;
    double loss = 0.0;
    double accuracy = 0.0;  // top-1 over the batch
  };
  std::vector<Point> points;     // one per optimizer step
  double final_loss = 0.0;       // last step's loss
  double final_accuracy = 0.0;   // size-weighted accuracy over the last epoch
};

// CSV with header "step,loss,accuracy".
void save_curve_csv(const std::filesystem::path& path, const TrainStats& stats);

// Stage one: classify speakers from the clean single-channel shards with a
// block-free model (front-end, pooling, classifier). The classifier width is
// set from the train split's speaker count.
StbModel pretrain(const DatasetManifest& manifest,
                  const std::filesystem::path& dataset_dir, StbConfig model_cfg,
                  const TrainConfig& tc, TrainStats* stats = nullptr);

// Stage two: start from the pretrained checkpoint with front-end and pooling
// frozen, add freshly initialized blocks, and train on multichannel shards.
// Each epoch redraws `channels_per_example` channels per utterance. The
// channel-axis normalizer comes from the train config.
StbModel finetune(const DatasetManifest& manifest,
                  const std::filesystem::path& dataset_dir,
                  const Checkpoint& pretrained, StbConfig model_cfg,
                  const TrainConfig& tc, TrainStats* stats = nullptr);

}  // namespace stbasv
