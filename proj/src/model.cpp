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
#include "stbasv/model.hpp"

#include <cmath>
#include <stdexcept>

#include "stbasv/errors.hpp"
#include "stbasv/json_util.hpp"
#include "stbasv/ops.hpp"
#include "stbasv/tensor_io.hpp"

namespace stbasv {
namespace {

Tensor add_bias(const Tensor& x, const Tensor& b) {
  return ops::add(x, ops::broadcast_to(b, x.shape()));
}

void fill_normal(Tensor& slot, Rng& rng, double stddev) {
  std::vector<double> d(static_cast<size_t>(slot.numel()));
  for (double& v : d) v = rng.normal() * stddev;
  slot = Tensor::from(slot.shape(), std::move(d));
}

// All-zero model of the right shapes; blocks included only when asked.
StbModel build_structure(const StbConfig& cfg, bool with_blocks) {
  StbModel m;
  m.config = cfg;
  const int64_t n = cfg.feature_dim;
  const int64_t fin = cfg.input_dim;
  const int64_t dk = n / cfg.heads;
  const int64_t nff = 2 * n;
  const int64_t sd = cfg.sap_width();

  m.fe_w1 = Tensor::zeros({fin, n});
  m.fe_b1 = Tensor::zeros({n});
  m.fe_w2 = Tensor::zeros({n, n});
  m.fe_b2 = Tensor::zeros({n});

  if (with_blocks) {
    auto make_sublayers = [&] {
      StbModel::Sublayers s;
      s.ln_attn = {Tensor::full({n}, 1.0), Tensor::zeros({n})};
      for (int i = 0; i < cfg.heads; ++i) {
        s.attn.w_q.push_back(Tensor::zeros({n, dk}));
        s.attn.w_k.push_back(Tensor::zeros({n, dk}));
        s.attn.w_v.push_back(Tensor::zeros({n, dk}));
        s.attn.b_q.push_back(Tensor::zeros({dk}));
        s.attn.b_k.push_back(Tensor::zeros({dk}));
        s.attn.b_v.push_back(Tensor::zeros({dk}));
      }
      s.attn.w_o = Tensor::zeros({n, n});
      s.ln_ffn = {Tensor::full({n}, 1.0), Tensor::zeros({n})};
      s.ffn = {Tensor::zeros({n, nff}), Tensor::zeros({nff}),
               Tensor::zeros({nff, n}), Tensor::zeros({n})};
      return s;
    };
    for (int k = 0; k < cfg.num_blocks; ++k) {
      m.blocks.push_back({make_sublayers(), make_sublayers()});
    }
  }

  m.sap.w = Tensor::zeros({n, sd});
  m.sap.b = Tensor::zeros({sd});
  m.sap.u = Tensor::zeros({sd});
  m.w_cls = Tensor::zeros({n, cfg.num_speakers});
  return m;
}

void init_shared(StbModel& m, Rng& rng) {
  const StbConfig& cfg = m.config;
  const int64_t n = cfg.feature_dim;
  fill_normal(m.fe_w1, rng, 1.0 / std::sqrt(static_cast<double>(cfg.input_dim)));
  fill_normal(m.fe_w2, rng, 1.0 / std::sqrt(static_cast<double>(n)));
  for (StbModel::Block& blk : m.blocks) {
    for (StbModel::Sublayers* s : {&blk.cfl, &blk.ccl}) {
      for (int i = 0; i < cfg.heads; ++i) {
        const size_t ui = static_cast<size_t>(i);
        fill_normal(s->attn.w_q[ui], rng, 0.02);
        fill_normal(s->attn.w_k[ui], rng, 0.02);
        fill_normal(s->attn.w_v[ui], rng, 0.02);
      }
      fill_normal(s->attn.w_o, rng, 0.02 * 0.1);
      fill_normal(s->ffn.w1, rng, 0.02);
      fill_normal(s->ffn.w2, rng, 0.02);
    }
  }
  fill_normal(m.sap.w, rng, 1.0 / std::sqrt(static_cast<double>(n)));
  fill_normal(m.sap.u, rng, 1.0 / std::sqrt(static_cast<double>(cfg.sap_width())));
  // Classifier stays zero: uniform initial logits, nonzero first gradient.
}

void collect_sublayers(const std::string& prefix, StbModel::Sublayers& s,
                       std::vector<NamedParam>& out) {
  out.push_back({prefix + ".ln_attn.gamma", &s.ln_attn.gamma, "stb"});
  out.push_back({prefix + ".ln_attn.beta", &s.ln_attn.beta, "stb"});
  for (size_t i = 0; i < s.attn.w_q.size(); ++i) {
    const std::string h = prefix + ".attn.h" + std::to_string(i);
    out.push_back({h + ".w_q", &s.attn.w_q[i], "stb"});
    out.push_back({h + ".w_k", &s.attn.w_k[i], "stb"});
    out.push_back({h + ".w_v", &s.attn.w_v[i], "stb"});
    out.push_back({h + ".b_q", &s.attn.b_q[i], "stb"});
    out.push_back({h + ".b_k", &s.attn.b_k[i], "stb"});
    out.push_back({h + ".b_v", &s.attn.b_v[i], "stb"});
  }
  out.push_back({prefix + ".attn.w_o", &s.attn.w_o, "stb"});
  out.push_back({prefix + ".ln_ffn.gamma", &s.ln_ffn.gamma, "stb"});
  out.push_back({prefix + ".ln_ffn.beta", &s.ln_ffn.beta, "stb"});
  out.push_back({prefix + ".ffn.w1", &s.ffn.w1, "stb"});
  out.push_back({prefix + ".ffn.b1", &s.ffn.b1, "stb"});
  out.push_back({prefix + ".ffn.w2", &s.ffn.w2, "stb"});
  out.push_back({prefix + ".ffn.b2", &s.ffn.b2, "stb"});
}

}  // namespace

void StbConfig::validate() const {
  if (num_blocks < 1) throw ConfigError("model: num_blocks must be >= 1");
  if (heads < 1) throw ConfigError("model: heads must be >= 1");
  if (feature_dim < 1) throw ConfigError("model: feature_dim must be >= 1");
  if (feature_dim % heads != 0) {
    throw ConfigError("model: feature_dim " + std::to_string(feature_dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
  if (frames < 1) throw ConfigError("model: frames must be >= 1");
  if (channels_train < 1) throw ConfigError("model: channels_train must be >= 1");
  if (sap_width() < 1) throw ConfigError("model: sap_dim must be >= 1");
  if (num_speakers < 1) throw ConfigError("model: num_speakers must be >= 1");
}

StbConfig stb_config_from_json(const nlohmann::json& j) {
  jsonu::check_keys(j,
                    {"num_blocks", "heads", "feature_dim", "input_dim", "frames",
                     "channels_train", "sap_dim", "num_speakers", "normalizer",
                     "shared_scores", "ccl_first", "per_channel_sap"},
                    "model config");
  StbConfig c;
  c.num_blocks = jsonu::get_or(j, "num_blocks", c.num_blocks);
  c.heads = jsonu::get_or(j, "heads", c.heads);
  c.feature_dim = jsonu::get_or(j, "feature_dim", c.feature_dim);
  c.input_dim = jsonu::get_or(j, "input_dim", c.input_dim);
  c.frames = jsonu::get_or(j, "frames", c.frames);
  c.channels_train = jsonu::get_or(j, "channels_train", c.channels_train);
  c.sap_dim = jsonu::get_or(j, "sap_dim", c.sap_dim);
  c.num_speakers = jsonu::get_or(j, "num_speakers", c.num_speakers);
  c.normalizer = normalizer_from_string(
      jsonu::get_or<std::string>(j, "normalizer", to_string(c.normalizer)));
  c.shared_scores = jsonu::get_or(j, "shared_scores", c.shared_scores);
  c.ccl_first = jsonu::get_or(j, "ccl_first", c.ccl_first);
  c.per_channel_sap = jsonu::get_or(j, "per_channel_sap", c.per_channel_sap);
  return c;
}

nlohmann::json to_json(const StbConfig& c) {
  return nlohmann::json{{"num_blocks", c.num_blocks},
                        {"heads", c.heads},
                        {"feature_dim", c.feature_dim},
                        {"input_dim", c.input_dim},
                        {"frames", c.frames},
                        {"channels_train", c.channels_train},
                        {"sap_dim", c.sap_dim},
                        {"num_speakers", c.num_speakers},
                        {"normalizer", to_string(c.normalizer)},
                        {"shared_scores", c.shared_scores},
                        {"ccl_first", c.ccl_first},
                        {"per_channel_sap", c.per_channel_sap}};
}

std::vector<NamedParam> StbModel::params() {
  std::vector<NamedParam> out;
  out.push_back({"frontend.w1", &fe_w1, "frontend"});
  out.push_back({"frontend.b1", &fe_b1, "frontend"});
  out.push_back({"frontend.w2", &fe_w2, "frontend"});
  out.push_back({"frontend.b2", &fe_b2, "frontend"});
  for (size_t k = 0; k < blocks.size(); ++k) {
    const std::string p = "block" + std::to_string(k);
    collect_sublayers(p + ".cfl", blocks[k].cfl, out);
    collect_sublayers(p + ".ccl", blocks[k].ccl, out);
  }
  out.push_back({"sap.w", &sap.w, "sap"});
  out.push_back({"sap.b", &sap.b, "sap"});
  out.push_back({"sap.u", &sap.u, "sap"});
  out.push_back({"classifier.w", &w_cls, "classifier"});
  return out;
}

std::vector<const Tensor*> StbModel::param_values() const {
  auto& self = const_cast<StbModel&>(*this);
  std::vector<const Tensor*> out;
  for (const NamedParam& p : self.params()) out.push_back(p.slot);
  return out;
}

StbModel StbModel::taped(Tape& tape) const {
  StbModel copy = *this;
  for (NamedParam& p : copy.params()) {
    *p.slot = tape.watch(*p.slot, !copy.is_frozen(p.group));
  }
  return copy;
}

StbModel init_model(const StbConfig& config, Rng& rng) {
  config.validate();
  StbModel m = build_structure(config, /*with_blocks=*/true);
  init_shared(m, rng);
  return m;
}

StbModel init_single_channel_model(const StbConfig& config, Rng& rng) {
  config.validate();
  StbModel m = build_structure(config, /*with_blocks=*/false);
  init_shared(m, rng);
  return m;
}

Tensor frontend(const StbModel& m, const Tensor& features) {
  if (features.rank() != 3) {
    throw ConfigError("frontend: features must be [channels, frames, input_dim], got " +
                      shape_str(features.shape()));
  }
  if (features.dim(-1) != m.config.input_dim) {
    throw ConfigError("frontend: input feature size " +
                      std::to_string(features.dim(-1)) + " but the model expects " +
                      std::to_string(m.config.input_dim));
  }
  const Tensor h = ops::relu(add_bias(ops::matmul(features, m.fe_w1), m.fe_b1));
  return add_bias(ops::matmul(h, m.fe_w2), m.fe_b2);
}

std::pair<Tensor, ScoreState> cfl(const StbModel::Block& blk, const Tensor& x,
                                  const ScoreState& prev, bool shared_scores) {
  ScoreState next;
  Tensor y = prenorm_sublayer(
      x,
      [&](const Tensor& t) {
        MhaResult r = mha_residual_scores(t, blk.cfl.attn, prev,
                                          Normalizer::softmax, shared_scores);
        next = std::move(r.next);
        return r.y;
      },
      blk.cfl.ln_attn);
  y = prenorm_sublayer(
      y, [&](const Tensor& t) { return ffn(t, blk.cfl.ffn); }, blk.cfl.ln_ffn);
  return {y, std::move(next)};
}

std::pair<Tensor, ScoreState> ccl(const StbModel::Block& blk, const Tensor& x,
                                  const ScoreState& prev, Normalizer normalizer,
                                  bool shared_scores) {
  const Tensor xt = ops::permute(x, {1, 0, 2});  // [T, C, N]: attend over C
  ScoreState next;
  Tensor y = prenorm_sublayer(
      xt,
      [&](const Tensor& t) {
        MhaResult r =
            mha_residual_scores(t, blk.ccl.attn, prev, normalizer, shared_scores);
        next = std::move(r.next);
        return r.y;
      },
      blk.ccl.ln_attn);
  y = prenorm_sublayer(
      y, [&](const Tensor& t) { return ffn(t, blk.ccl.ffn); }, blk.ccl.ln_ffn);
  return {ops::permute(y, {1, 0, 2}), std::move(next)};
}

Tensor stb_stack(const StbModel& m, const Tensor& x) {
  if (m.blocks.empty()) {
    throw ConfigError("stb_stack: model has no blocks");
  }
  Tensor cur = x;
  ScoreState time_chain;     // [C, T, T] per head, threaded across blocks
  ScoreState channel_chain;  // [T, C, C] per head
  for (const StbModel::Block& blk : m.blocks) {
    if (m.config.ccl_first) {
      auto c = ccl(blk, cur, channel_chain, m.config.normalizer,
                   m.config.shared_scores);
      cur = std::move(c.first);
      channel_chain = std::move(c.second);
      auto f = cfl(blk, cur, time_chain, m.config.shared_scores);
      cur = std::move(f.first);
      time_chain = std::move(f.second);
    } else {
      auto f = cfl(blk, cur, time_chain, m.config.shared_scores);
      cur = std::move(f.first);
      time_chain = std::move(f.second);
      auto c = ccl(blk, cur, channel_chain, m.config.normalizer,
                   m.config.shared_scores);
      cur = std::move(c.first);
      channel_chain = std::move(c.second);
    }
  }
  return cur;
}

Tensor fuse_channels(const Tensor& x) {
  if (x.rank() != 3) {
    throw std::invalid_argument("fuse_channels: expected [channels, frames, dim], got " +
                                shape_str(x.shape()));
  }
  if (x.dim(0) < 1) throw std::invalid_argument("fuse_channels: no channels");
  return ops::mean_over_axis(x, 0);
}

Tensor sap_pool(const Tensor& x, const SapParams& p) {
  if (x.rank() != 2) {
    throw std::invalid_argument("sap_pool: expected [frames, dim], got " +
                                shape_str(x.shape()));
  }
  const int64_t n = x.dim(1);
  if (p.w.rank() != 2 || p.w.dim(0) != n) {
    throw ConfigError("sap_pool: weight must be [" + std::to_string(n) +
                      ",*], got " + shape_str(p.w.shape()));
  }
  const int64_t d = p.w.dim(1);
  if (p.b.shape() != Shape{d} || p.u.shape() != Shape{d}) {
    throw ConfigError("sap_pool: bias and context must be [" + std::to_string(d) +
                      "]");
  }
  const Tensor e = ops::tanh(add_bias(ops::matmul(x, p.w), p.b));  // [T, D]
  const Tensor scores = ops::matmul(e, ops::reshape(p.u, {d, 1}));  // [T, 1]
  const Tensor alpha = ops::softmax_lastdim(ops::transpose_lastdims(scores));
  return ops::reshape(ops::matmul(alpha, x), {n});
}

Tensor embed(const StbModel& m, const Tensor& features) {
  Tensor x = frontend(m, features);
  if (!m.blocks.empty()) x = stb_stack(m, x);
  Tensor pooled;
  if (m.config.per_channel_sap) {
    const int64_t c = x.dim(0);
    const Tensor xt = ops::permute(x, {1, 0, 2});  // [T, C, N]
    std::vector<Tensor> per_channel;
    for (int64_t i = 0; i < c; ++i) {
      std::vector<double> sel(static_cast<size_t>(c), 0.0);
      sel[static_cast<size_t>(i)] = 1.0;
      const Tensor pick = ops::matmul(Tensor::from({1, c}, std::move(sel)), xt);
      per_channel.push_back(
          sap_pool(ops::reshape(pick, {x.dim(1), x.dim(2)}), m.sap));
    }
    pooled = ops::mean_over_axis(stack_rows(per_channel), 0);
  } else {
    pooled = sap_pool(fuse_channels(x), m.sap);
  }
  return ops::l2_normalize(pooled);
}

Tensor classify(const StbModel& m, const Tensor& embedding) {
  const int64_t n = m.config.feature_dim;
  if (embedding.dim(-1) != n) {
    throw ConfigError("classify: embedding size " + std::to_string(embedding.dim(-1)) +
                      " but the model width is " + std::to_string(n));
  }
  if (embedding.rank() == 1) {
    return ops::reshape(ops::matmul(ops::reshape(embedding, {1, n}), m.w_cls),
                        {m.w_cls.dim(1)});
  }
  if (embedding.rank() == 2) return ops::matmul(embedding, m.w_cls);
  throw std::invalid_argument("classify: embedding must be [N] or [B,N], got " +
                              shape_str(embedding.shape()));
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  const int64_t n = rows[0].dim(0);
  std::vector<Tensor> cols;
  cols.reserve(rows.size());
  for (const Tensor& r : rows) {
    if (r.rank() != 1 || r.dim(0) != n) {
      throw std::invalid_argument("stack_rows: every row must be [" +
                                  std::to_string(n) + "], got " +
                                  shape_str(r.shape()));
    }
    cols.push_back(ops::reshape(r, {n, 1}));
  }
  return ops::transpose_lastdims(ops::concat_lastdim(cols));
}

void save_checkpoint(StbModel& model, const std::filesystem::path& dir,
                     const std::string& stage) {
  std::filesystem::create_directories(dir / "params");
  nlohmann::json names = nlohmann::json::object();
  for (const NamedParam& p : model.params()) {
    const std::string rel = "params/" + p.name + ".stbt";
    io::save_tensor(dir / rel, *p.slot);
    names[p.name] = rel;
  }
  nlohmann::json manifest{{"format", 1},
                          {"stage", stage},
                          {"config", to_json(model.config)},
                          {"frozen_groups", model.frozen_groups},
                          {"parameters", names}};
  jsonu::save_file(dir / "manifest.json", manifest);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const nlohmann::json manifest = jsonu::load_file(dir / "manifest.json");
  jsonu::check_keys(manifest, {"format", "stage", "config", "frozen_groups", "parameters"},
                    "checkpoint manifest");
  if (jsonu::get_required<int>(manifest, "format", "checkpoint manifest") != 1) {
    throw ConfigError("checkpoint manifest: unsupported format");
  }
  Checkpoint ck;
  ck.stage = jsonu::get_required<std::string>(manifest, "stage", "checkpoint manifest");
  if (ck.stage != "pretrain" && ck.stage != "finetune") {
    throw ConfigError("checkpoint manifest: unknown stage '" + ck.stage + "'");
  }
  ck.config = stb_config_from_json(
      jsonu::require_key(manifest, "config", "checkpoint manifest"));
  for (const auto& g :
       jsonu::require_key(manifest, "frozen_groups", "checkpoint manifest")) {
    ck.frozen_groups.insert(g.get<std::string>());
  }
  for (const auto& item :
       jsonu::require_key(manifest, "parameters", "checkpoint manifest").items()) {
    ck.params.emplace(item.key(),
                      io::load_tensor(dir / item.value().get<std::string>()));
  }
  return ck;
}

StbModel model_from_checkpoint(const Checkpoint& ck) {
  StbModel m = build_structure(ck.config, /*with_blocks=*/ck.stage != "pretrain");
  auto remaining = ck.params;
  for (NamedParam& p : m.params()) {
    const auto it = remaining.find(p.name);
    if (it == remaining.end()) {
      throw ConfigError("checkpoint: missing parameter '" + p.name + "'");
    }
    if (it->second.shape() != p.slot->shape()) {
      throw ConfigError("checkpoint: parameter '" + p.name + "' has shape " +
                        shape_str(it->second.shape()) + " but the config needs " +
                        shape_str(p.slot->shape()));
    }
    *p.slot = it->second;
    remaining.erase(it);
  }
  if (!remaining.empty()) {
    throw ConfigError("checkpoint: unexpected parameter '" +
                      remaining.begin()->first + "'");
  }
  m.frozen_groups = ck.frozen_groups;
  return m;
}

StbModel load_pretrained_freeze(const Checkpoint& single_ch,
                                const StbConfig& config, Rng& rng) {
  if (single_ch.stage != "pretrain") {
    throw ConfigError("load_pretrained_freeze: checkpoint stage is '" +
                      single_ch.stage + "', expected 'pretrain'");
  }
  if (single_ch.config.feature_dim != config.feature_dim ||
      single_ch.config.input_dim != config.input_dim ||
      single_ch.config.sap_width() != config.sap_width()) {
    throw ConfigError(
        "load_pretrained_freeze: checkpoint dims (feature " +
        std::to_string(single_ch.config.feature_dim) + ", input " +
        std::to_string(single_ch.config.input_dim) + ", sap " +
        std::to_string(single_ch.config.sap_width()) +
        ") incompatible with config (feature " + std::to_string(config.feature_dim) +
        ", input " + std::to_string(config.input_dim) + ", sap " +
        std::to_string(config.sap_width()) + ")");
  }
  StbModel m = init_model(config, rng);
  for (NamedParam& p : m.params()) {
    if (std::string(p.group) != "frontend" && std::string(p.group) != "sap") continue;
    const auto it = single_ch.params.find(p.name);
    if (it == single_ch.params.end()) {
      throw ConfigError("load_pretrained_freeze: checkpoint lacks '" + p.name + "'");
    }
    if (it->second.shape() != p.slot->shape()) {
      throw ConfigError("load_pretrained_freeze: '" + p.name + "' has shape " +
                        shape_str(it->second.shape()) + ", expected " +
                        shape_str(p.slot->shape()));
    }
    *p.slot = it->second;
  }
  m.w_cls = Tensor::zeros({config.feature_dim, config.num_speakers});
  m.frozen_groups = {"frontend", "sap"};
  return m;
}

}  // namespace stbasv
