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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stbasv/errors.hpp"
#include "stbasv/trainer.hpp"

using namespace stbasv;
namespace fs = std::filesystem;

namespace {

bool same_params(const StbModel& a, const StbModel& b) {
  const auto pa = a.param_values();
  const auto pb = b.param_values();
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->shape() != pb[i]->shape()) return false;
    for (int64_t j = 0; j < pa[i]->numel(); ++j) {
      if ((*pa[i])[j] != (*pb[i])[j]) return false;
    }
  }
  return true;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (int64_t i = 0; i < t.numel(); ++i) m = std::max(m, std::abs(t[i]));
  return m;
}

// Small multichannel dataset shared by the training tests: 3 train speakers
// with 4 utterances each over 3-node scenes.
struct TrainFixture {
  fs::path dir;
  DatasetManifest manifest;

  TrainFixture() {
    dir = fs::temp_directory_path() / "stbasv_trainer_dataset";
    fs::remove_all(dir);
    SimConfig sc;
    sc.channels = 3;
    sc.frames = 8;
    sc.input_dim = 5;
    sc.train_speakers = 3;
    sc.dev_speakers = 0;
    sc.test_speakers = 2;
    sc.scenes_per_speaker = 2;
    sc.utterances_per_scene = 2;
    manifest = build_dataset(sc, /*seed=*/31, dir);
  }
};

StbConfig small_model_config() {
  StbConfig cfg;
  cfg.num_blocks = 1;
  cfg.heads = 2;
  cfg.feature_dim = 8;
  cfg.input_dim = 5;
  cfg.frames = 8;
  cfg.channels_train = 2;
  return cfg;
}

}  // namespace

TEST_CASE("adam takes the hand-computed first step and keeps state") {
  // First step: bias correction makes m-hat equal the raw gradient, so the
  // update is lr * g / (|g| + eps) = lr * sign(g) up to eps rounding.
  Tensor p = Tensor::from({2}, {1.0, 2.0});
  Adam opt(0.1);
  opt.step({&p}, {Tensor::from({2}, {1.0, -4.0})});
  CHECK(p[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-7));
  CHECK(p[1] == doctest::Approx(2.0 + 0.1).epsilon(1e-7));
  CHECK(opt.steps() == 1);

  // Momentum persists: a zero gradient after a nonzero one still moves.
  const double before = p[0];
  opt.step({&p}, {Tensor::from({2}, {0.0, 0.0})});
  CHECK(p[0] != before);
  CHECK(opt.steps() == 2);

  // A fresh optimizer fed zero gradients must not move anything at all.
  Tensor q = Tensor::from({3}, {0.25, -0.5, 1e-9});
  Adam opt2(0.5);
  opt2.step({&q}, {Tensor::zeros({3})});
  CHECK(q[0] == 0.25);
  CHECK(q[1] == -0.5);
  CHECK(q[2] == 1e-9);

  // State is positional: the parameter list may not change size, and each
  // gradient must match its parameter's shape.
  Tensor r = Tensor::zeros({2});
  CHECK_THROWS_AS(opt2.step({&q, &r}, {Tensor::zeros({3}), Tensor::zeros({2})}),
                  std::logic_error);
  CHECK_THROWS_AS(opt2.step({&q}, {Tensor::zeros({4})}), std::logic_error);
  CHECK_THROWS_AS(opt2.step({&q}, {Tensor::zeros({3}), Tensor::zeros({2})}),
                  std::logic_error);
  CHECK_THROWS_AS(Adam(0.0), ConfigError);
  CHECK_THROWS_AS(Adam(-1.0), ConfigError);
}

TEST_CASE("adam with tiny steps tracks a quadratic descent direction") {
  // Minimize (x - 3)^2: gradient 2(x - 3). Adam must monotonically approach
  // the minimum from x = 0 with a small learning rate.
  Tensor x = Tensor::from({1}, {0.0});
  Adam opt(0.05);
  double prev_gap = 3.0;
  for (int i = 0; i < 400; ++i) {
    const double g = 2.0 * (x[0] - 3.0);
    opt.step({&x}, {Tensor::from({1}, {g})});
    const double gap = std::abs(x[0] - 3.0);
    if (i % 50 == 49) {
      CHECK(gap < prev_gap);
      prev_gap = gap;
    }
  }
  CHECK(std::abs(x[0] - 3.0) < 0.05);
}

TEST_CASE("train config resolves stage defaults and validates fields") {
  TrainConfig c;
  CHECK(c.stage == "pretrain");
  CHECK(c.epochs_resolved() == 40);
  CHECK(c.lr_resolved() == 1e-3);
  c.stage = "finetune";
  CHECK(c.epochs_resolved() == 15);
  CHECK(c.lr_resolved() == 1e-4);
  c.epochs = 7;
  c.lr = 0.5;
  CHECK(c.epochs_resolved() == 7);
  CHECK(c.lr_resolved() == 0.5);

  // Defaults from an empty object.
  const TrainConfig d = train_config_from_json(nlohmann::json::object());
  CHECK(d.stage == "pretrain");
  CHECK(d.epochs == 0);
  CHECK(d.batch_size == 8);
  CHECK(d.lr == 0.0);
  CHECK(d.channels_per_example == 4);
  CHECK(d.seed == 1234);
  CHECK(d.normalizer == Normalizer::softmax);

  // Round trip.
  TrainConfig e;
  e.stage = "finetune";
  e.epochs = 3;
  e.batch_size = 2;
  e.lr = 0.25;
  e.channels_per_example = 6;
  e.seed = 77;
  e.normalizer = Normalizer::sparsemax;
  const TrainConfig back = train_config_from_json(to_json(e));
  CHECK(back.stage == e.stage);
  CHECK(back.epochs == e.epochs);
  CHECK(back.batch_size == e.batch_size);
  CHECK(back.lr == e.lr);
  CHECK(back.channels_per_example == e.channels_per_example);
  CHECK(back.seed == e.seed);
  CHECK(back.normalizer == e.normalizer);

  CHECK_THROWS_AS(train_config_from_json({{"stages", "pretrain"}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"stage", "warmup"}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"epochs", -1}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"batch_size", 0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"lr", -0.1}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"channels_per_example", 0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"normalizer", "mean"}}), ConfigError);
}

TEST_CASE("pretraining memorizes a small speaker set from clean shards") {
  const TrainFixture fx;
  TrainConfig tc;
  tc.stage = "pretrain";
  tc.epochs = 50;
  tc.batch_size = 4;
  tc.lr = 2e-2;
  tc.seed = 5;

  TrainStats stats;
  const StbModel model = pretrain(fx.manifest, fx.dir, small_model_config(), tc, &stats);

  CHECK(model.config.num_speakers == 3);
  CHECK(model.blocks.empty());  // single-channel stage has no stacked blocks
  REQUIRE(stats.points.size() == 50u * 3u);  // 12 utterances / batch 4
  for (size_t i = 0; i < stats.points.size(); ++i) {
    CHECK(stats.points[i].step == static_cast<int64_t>(i));
    CHECK(std::isfinite(stats.points[i].loss));
  }

  // Zero classifier at init: uniform posterior, so the first loss is ln(3).
  CHECK(stats.points[0].loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  // Learning happened: late losses are far below early ones, and the last
  // epoch classifies the 12 memorized utterances nearly perfectly.
  double early = 0.0, late = 0.0;
  for (size_t i = 0; i < 10; ++i) {
    early += stats.points[i].loss;
    late += stats.points[stats.points.size() - 1 - i].loss;
  }
  CHECK(late < 0.2 * early);
  CHECK(stats.final_loss == stats.points.back().loss);
  CHECK(stats.final_accuracy >= 0.9);

  // Bit-identical rerun.
  TrainStats stats2;
  const StbModel model2 = pretrain(fx.manifest, fx.dir, small_model_config(), tc, &stats2);
  CHECK(same_params(model, model2));
  CHECK(stats2.final_loss == stats.final_loss);
  REQUIRE(stats2.points.size() == stats.points.size());
  CHECK(stats2.points[17].loss == stats.points[17].loss);

  // Mismatched feature width is a configuration error.
  StbConfig bad = small_model_config();
  bad.input_dim = 4;
  CHECK_THROWS_AS(pretrain(fx.manifest, fx.dir, bad, tc), ConfigError);

  // Stage tag must match the entry point.
  TrainConfig wrong = tc;
  wrong.stage = "finetune";
  CHECK_THROWS_AS(pretrain(fx.manifest, fx.dir, small_model_config(), wrong),
                  ConfigError);
}

TEST_CASE("pretraining a single speaker is the zero-loss fixed point") {
  // One class: cross entropy of the only label is exactly zero, gradients
  // vanish, and the parameters never move off their initialization.
  const fs::path dir = fs::temp_directory_path() / "stbasv_trainer_one_speaker";
  fs::remove_all(dir);
  SimConfig sc;
  sc.channels = 2;
  sc.frames = 6;
  sc.input_dim = 4;
  sc.train_speakers = 1;
  sc.dev_speakers = 0;
  sc.test_speakers = 1;
  sc.scenes_per_speaker = 2;
  sc.utterances_per_scene = 1;
  const DatasetManifest manifest = build_dataset(sc, 11, dir);

  StbConfig cfg = small_model_config();
  cfg.input_dim = 4;
  cfg.frames = 6;
  TrainConfig tc;
  tc.stage = "pretrain";
  tc.epochs = 3;
  tc.batch_size = 2;
  tc.seed = 21;

  TrainStats stats;
  const StbModel model = pretrain(manifest, dir, cfg, tc, &stats);
  for (const TrainStats::Point& p : stats.points) {
    CHECK(p.loss == 0.0);
    CHECK(p.accuracy == 1.0);
  }

  StbConfig init_cfg = cfg;
  init_cfg.num_speakers = 1;
  Rng init_rng = Rng::stream(tc.seed, "init");
  const StbModel untouched = init_single_channel_model(init_cfg, init_rng);
  CHECK(same_params(model, untouched));
}

TEST_CASE("finetuning trains blocks while the frozen stage stays bit-exact") {
  const TrainFixture fx;

  // Stage one, kept short: the checkpoint only needs to exist.
  TrainConfig pre;
  pre.stage = "pretrain";
  pre.epochs = 2;
  pre.batch_size = 4;
  pre.seed = 5;
  StbModel single = pretrain(fx.manifest, fx.dir, small_model_config(), pre);
  const fs::path ckpt_dir = fs::temp_directory_path() / "stbasv_trainer_ckpt";
  fs::remove_all(ckpt_dir);
  save_checkpoint(single, ckpt_dir, "pretrain");
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);

  TrainConfig tc;
  tc.stage = "finetune";
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.lr = 1e-3;
  tc.channels_per_example = 2;
  tc.seed = 9;
  tc.normalizer = Normalizer::sparsemax;

  TrainStats stats;
  const StbModel tuned =
      finetune(fx.manifest, fx.dir, ckpt, small_model_config(), tc, &stats);

  CHECK(tuned.config.normalizer == Normalizer::sparsemax);
  CHECK(tuned.config.num_speakers == 3);
  CHECK(tuned.config.channels_train == 2);
  CHECK(tuned.blocks.size() == 1);
  CHECK(tuned.frozen_groups.count("frontend") == 1);
  CHECK(tuned.frozen_groups.count("sap") == 1);
  REQUIRE(stats.points.size() == 3u * 3u);
  for (const TrainStats::Point& p : stats.points) CHECK(std::isfinite(p.loss));

  // Frozen parameters match the checkpoint bit for bit; trainable groups
  // moved (the classifier starts at zero and must become nonzero).
  StbModel tuned_mut = tuned;
  bool stb_changed = false;
  double cls_mag = 0.0;
  for (NamedParam p : tuned_mut.params()) {
    const std::string group = p.group;
    if (group == "frontend" || group == "sap") {
      const Tensor& saved = ckpt.params.at(p.name);
      REQUIRE(saved.shape() == p.slot->shape());
      for (int64_t i = 0; i < saved.numel(); ++i) CHECK(saved[i] == (*p.slot)[i]);
    } else if (group == "classifier") {
      cls_mag = max_abs(*p.slot);
    } else if (group == "stb") {
      // Biases start at zero; weights start from the init stream. Any drift
      // from a fresh init of the same seed counts as movement.
      if (max_abs(*p.slot) > 0.0 && p.name.find("ln_") == std::string::npos) {
        stb_changed = true;
      }
    }
  }
  CHECK(cls_mag > 0.0);
  CHECK(stb_changed);

  // Bit-identical rerun.
  TrainStats stats2;
  const StbModel tuned2 =
      finetune(fx.manifest, fx.dir, ckpt, small_model_config(), tc, &stats2);
  CHECK(same_params(tuned, tuned2));
  CHECK(stats2.final_loss == stats.final_loss);

  // The softmax run differs from the sparsemax run.
  TrainConfig soft = tc;
  soft.normalizer = Normalizer::softmax;
  const StbModel tuned_soft =
      finetune(fx.manifest, fx.dir, ckpt, small_model_config(), soft);
  CHECK(tuned_soft.config.normalizer == Normalizer::softmax);
  CHECK(!same_params(tuned, tuned_soft));

  // Channel demand beyond the dataset is a configuration error.
  TrainConfig wide = tc;
  wide.channels_per_example = 4;
  CHECK_THROWS_AS(finetune(fx.manifest, fx.dir, ckpt, small_model_config(), wide),
                  ConfigError);

  // Stage tag mismatch and incompatible feature width are rejected.
  TrainConfig wrong = tc;
  wrong.stage = "pretrain";
  CHECK_THROWS_AS(finetune(fx.manifest, fx.dir, ckpt, small_model_config(), wrong),
                  ConfigError);
  StbConfig bad = small_model_config();
  bad.input_dim = 4;
  CHECK_THROWS_AS(finetune(fx.manifest, fx.dir, ckpt, bad, tc), ConfigError);

  // A second-stage checkpoint cannot seed another second stage.
  StbModel tuned_save = tuned;
  const fs::path ft_dir = fs::temp_directory_path() / "stbasv_trainer_ft_ckpt";
  fs::remove_all(ft_dir);
  save_checkpoint(tuned_save, ft_dir, "finetune");
  const Checkpoint ft_ckpt = load_checkpoint(ft_dir);
  CHECK_THROWS_AS(finetune(fx.manifest, fx.dir, ft_ckpt, small_model_config(), tc),
                  ConfigError);
}

TEST_CASE("divergent learning rates raise a training error") {
  const TrainFixture fx;
  TrainConfig pre;
  pre.stage = "pretrain";
  pre.epochs = 1;
  pre.batch_size = 4;
  pre.seed = 5;
  StbModel single = pretrain(fx.manifest, fx.dir, small_model_config(), pre);
  const fs::path ckpt_dir = fs::temp_directory_path() / "stbasv_trainer_blowup_ckpt";
  fs::remove_all(ckpt_dir);
  save_checkpoint(single, ckpt_dir, "pretrain");
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);

  TrainConfig tc;
  tc.stage = "finetune";
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.lr = 1e200;  // one step throws every weight to ±1e200, the next overflows
  tc.channels_per_example = 2;
  tc.seed = 9;
  CHECK_THROWS_AS(finetune(fx.manifest, fx.dir, ckpt, small_model_config(), tc),
                  TrainingError);
}

TEST_CASE("training curve round-trips through csv") {
  TrainStats stats;
  stats.points.push_back({0, 0.5, 0.25});
  stats.points.push_back({1, 1.0 / 3.0, 0.75});
  const fs::path path = fs::temp_directory_path() / "stbasv_curve.csv";
  fs::remove(path);
  save_curve_csv(path, stats);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,loss,accuracy");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string step_s, loss_s, acc_s;
    std::getline(ss, step_s, ',');
    std::getline(ss, loss_s, ',');
    std::getline(ss, acc_s, ',');
    CHECK(std::stoll(step_s) == stats.points[rows].step);
    CHECK(std::stod(loss_s) == stats.points[rows].loss);  // precision 17 survives
    CHECK(std::stod(acc_s) == stats.points[rows].accuracy);
    ++rows;
  }
  CHECK(rows == 2);

  CHECK_THROWS_AS(
      save_curve_csv(fs::temp_directory_path() / "no_such_dir" / "c.csv", stats),
      IoError);
}
