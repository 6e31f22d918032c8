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
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stbasv/attention.hpp"
#include "stbasv/rng.hpp"
#include "stbasv/tensor.hpp"

namespace stbasv {

// Full model configuration. Defaults are the documented small-scale setup;
// block count 2 and head count 4 are the reference operating point.
struct StbConfig {
  int num_blocks = 2;
  int heads = 4;
  int64_t feature_dim = 16;    // N, the model width
  int64_t input_dim = 24;      // F_in, raw per-frame feature size
  int64_t frames = 50;         // T (documentation; ops are shape-polymorphic)
  int channels_train = 4;      // channels drawn per training example
  int64_t sap_dim = 0;         // pooling attention width; 0 = feature_dim
  int64_t num_speakers = 0;    // classifier width; 0 = fill from dataset
  Normalizer normalizer = Normalizer::softmax;
  bool shared_scores = false;  // one carried score matrix instead of per-head
  bool ccl_first = false;      // swap the order of the two layers in a block
  bool per_channel_sap = false;  // pool each channel, then average embeddings

  int64_t sap_width() const { return sap_dim > 0 ? sap_dim : feature_dim; }
  // Throws ConfigError unless the configuration is usable for a full model.
  void validate() const;
};

StbConfig stb_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StbConfig& c);

struct SapParams {
  Tensor w, b, u;
};

// One parameter slot: stable name, pointer into the owning model, and the
// freeze group it belongs to (frontend | stb | sap | classifier).
struct NamedParam {
  std::string name;
  Tensor* slot;
  const char* group;
};

struct StbModel {
  StbConfig config;

  // Per-frame front-end stub: two affine layers with a ReLU between.
  Tensor fe_w1, fe_b1, fe_w2, fe_b2;

  struct Sublayers {
    LayerNormParams ln_attn;
    AttentionParams attn;
    LayerNormParams ln_ffn;
    FfnParams ffn;
  };
  struct Block {
    Sublayers cfl;  // attention over the time axis
    Sublayers ccl;  // attention over the channel axis
  };
  std::vector<Block> blocks;

  SapParams sap;
  Tensor w_cls;
  std::set<std::string> frozen_groups;

  // Fixed-order registry of every parameter. The traversal order defines
  // initialization draw order, checkpoint layout, and optimizer slot order.
  std::vector<NamedParam> params();
  std::vector<const Tensor*> param_values() const;

  bool is_frozen(const char* group) const {
    return frozen_groups.count(group) > 0;
  }

  // Copy whose parameters are watched on `tape`; frozen groups are watched
  // without gradient tracking, so backward skips their subgraphs.
  StbModel taped(Tape& tape) const;
};

// Fresh model with `config.num_blocks` blocks. Attention and FFN weights draw
// from normal(0, 0.02) with the output projection further scaled by 0.1, so a
// new stack starts near the residual identity.
StbModel init_model(const StbConfig& config, Rng& rng);

// Block-free variant used for the first training stage: front-end, pooling
// and classifier only (the time-axis/channel-axis stack is skipped).
StbModel init_single_channel_model(const StbConfig& config, Rng& rng);

// --- forward ops ---

// [C, T, F_in] -> [C, T, N]; the same two-layer map applied to every frame.
Tensor frontend(const StbModel& m, const Tensor& features);

// Attention over the time axis within each channel (always softmax), then the
// position-wise FFN; both wrapped as pre-norm residual sublayers.
// x: [C, T, N]; carried scores per head: [C, T, T].
std::pair<Tensor, ScoreState> cfl(const StbModel::Block& blk, const Tensor& x,
                                  const ScoreState& prev, bool shared_scores);

// Attention over the channel axis at each time step (normalizer from config),
// then the FFN. x: [C, T, N]; carried scores per head: [T, C, C].
std::pair<Tensor, ScoreState> ccl(const StbModel::Block& blk, const Tensor& x,
                                  const ScoreState& prev, Normalizer normalizer,
                                  bool shared_scores);

// All blocks, threading two independent score chains (one per axis) that
// start at zero in the first block.
Tensor stb_stack(const StbModel& m, const Tensor& x);

// Mean over the channel axis: [C, T, N] -> [T, N].
Tensor fuse_channels(const Tensor& x);

// Attention-weighted temporal average: e_t = u^T tanh(W x_t + b), weights
// softmax over t, output sum_t alpha_t x_t. [T, N] -> [N].
Tensor sap_pool(const Tensor& x, const SapParams& p);

// Whole pipeline: frontend -> stack -> fuse -> pool, L2-normalized. [C, T,
// F_in] -> [N].
Tensor embed(const StbModel& m, const Tensor& features);

// embedding [N] -> logits [S]; also accepts a batch [B, N] -> [B, S].
Tensor classify(const StbModel& m, const Tensor& embedding);

// Stacks B rank-1 [N] tensors into [B, N] (differentiable).
Tensor stack_rows(const std::vector<Tensor>& rows);

// --- checkpoints ---

struct Checkpoint {
  StbConfig config;
  std::string stage;  // "pretrain" | "finetune"
  std::set<std::string> frozen_groups;
  std::map<std::string, Tensor> params;
};

// Writes manifest.json plus one tensor file per parameter under dir/params/.
void save_checkpoint(StbModel& model, const std::filesystem::path& dir,
                     const std::string& stage);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Rebuilds the exact model a checkpoint describes (same stage semantics:
// zero-block model for a pretrain checkpoint with no block parameters).
StbModel model_from_checkpoint(const Checkpoint& ck);

// Starts the second training stage: front-end and pooling parameters copied
// from the single-channel checkpoint and frozen; blocks freshly initialized;
// classifier reset to zeros for `config.num_speakers`.
StbModel load_pretrained_freeze(const Checkpoint& single_ch,
                                const StbConfig& config, Rng& rng);

}  // namespace stbasv
