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
// stb-asv: one binary for the whole workflow. A run lives in one workspace
// directory (--out): `simulate` writes <out>/dataset, `pretrain` writes
// <out>/pretrain, `finetune` writes <out>/finetune-<normalizer>, `eval`
// writes <out>/eval/report-<normalizer>.json for every fine-tuned checkpoint
// it finds, and `oracle` writes <out>/oracle/report.json in the same schema.
// `verify` runs the numerical property suites and needs no artifacts.
//
// Exit codes: 0 success; 1 usage or configuration error; 2 missing artifact;
// 3 property failure.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stbasv/errors.hpp"
#include "stbasv/eval.hpp"
#include "stbasv/grad_check.hpp"
#include "stbasv/json_util.hpp"
#include "stbasv/model.hpp"
#include "stbasv/ops.hpp"
#include "stbasv/rng.hpp"
#include "stbasv/sim.hpp"
#include "stbasv/trainer.hpp"

namespace fs = std::filesystem;
using namespace stbasv;

namespace {

struct Args {
  std::string config_path;
  fs::path out = "runs";
  uint64_t seed = 1234;
  bool seed_given = false;
  bool force = false;
};

// ---------------------------------------------------------------------------
// Config file: one JSON object with up to four sections. Unknown keys are
// fatal everywhere; a missing section means defaults.

struct EvalSection {
  std::string split = "test";
  std::vector<int64_t> channel_subsets = {1, 2, 4, 8};
  uint64_t trial_seed = 7;
  int max_rank = 6;
};

EvalSection eval_section_from_json(const nlohmann::json& j) {
  jsonu::check_keys(j, {"split", "channel_subsets", "trial_seed", "max_rank"},
                    "eval config");
  EvalSection e;
  e.split = jsonu::get_or<std::string>(j, "split", e.split);
  e.channel_subsets =
      jsonu::get_or<std::vector<int64_t>>(j, "channel_subsets", e.channel_subsets);
  e.trial_seed = jsonu::get_or(j, "trial_seed", e.trial_seed);
  e.max_rank = jsonu::get_or(j, "max_rank", e.max_rank);
  if (e.channel_subsets.empty()) {
    throw ConfigError("eval config: channel_subsets must be nonempty");
  }
  if (e.max_rank < 1) throw ConfigError("eval config: max_rank must be >= 1");
  return e;
}

nlohmann::json to_json(const EvalSection& e) {
  return {{"split", e.split},
          {"channel_subsets", e.channel_subsets},
          {"trial_seed", e.trial_seed},
          {"max_rank", e.max_rank}};
}

nlohmann::json load_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  const nlohmann::json j = jsonu::load_file(path);
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  jsonu::check_keys(j, {"sim", "model", "train", "eval"}, "config");
  return j;
}

nlohmann::json section(const nlohmann::json& cfg, const char* name) {
  return cfg.contains(name) ? cfg.at(name) : nlohmann::json::object();
}

// Model config with dataset-derived fields filled in when the config file
// does not pin them, so a minimal config stays consistent with its dataset.
StbConfig resolve_model_config(const nlohmann::json& model_section,
                               const DatasetManifest& manifest) {
  nlohmann::json j = model_section;
  if (!j.contains("input_dim")) j["input_dim"] = manifest.input_dim;
  if (!j.contains("frames")) j["frames"] = manifest.frames;
  return stb_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Workspace plumbing.

void refuse_or_remove(const fs::path& marker, const fs::path& victim, bool force) {
  if (!fs::exists(marker)) return;
  if (!force) {
    throw ConfigError(marker.string() + " already exists; pass --force to overwrite");
  }
  fs::remove_all(victim);
}

void write_snapshot(const fs::path& dir, nlohmann::json j) {
  jsonu::save_file(dir / "resolved_config.json", std::move(j));
}

DatasetManifest require_dataset(const fs::path& out) {
  const fs::path dir = out / "dataset";
  if (!fs::exists(dir / "manifest.json")) {
    throw MissingArtifactError("no dataset manifest at " +
                               (dir / "manifest.json").string() +
                               "; run `stb-asv simulate` first");
  }
  return load_manifest(dir);
}

Checkpoint require_checkpoint(const fs::path& dir, const std::string& hint) {
  if (!fs::exists(dir / "manifest.json")) {
    throw MissingArtifactError("no checkpoint at " + dir.string() + "; run `stb-asv " +
                               hint + "` first");
  }
  return load_checkpoint(dir);
}

TrialSet trials_for(const DatasetManifest& manifest, const EvalSection& ev) {
  const auto it = manifest.splits.find(ev.split);
  if (it == manifest.splits.end()) {
    throw ConfigError("eval: dataset has no split '" + ev.split + "'");
  }
  Rng rng = Rng::stream(ev.trial_seed, "trials");
  return build_trials(it->second, rng);
}

void print_report(const std::string& label, const EvalReport& rep) {
  for (const EvalCondition& c : rep.conditions) {
    std::cout << label << " " << c.kind << "=" << c.value << ": eer="
              << c.eer << " threshold=" << c.threshold << " ("
              << c.target_scores.size() << " target / "
              << c.nontarget_scores.size() << " nontarget trials)\n";
  }
}

// ---------------------------------------------------------------------------
// Commands.

void cmd_simulate(const Args& a) {
  const nlohmann::json cfg = load_config(a.config_path);
  const SimConfig sc = sim_config_from_json(section(cfg, "sim"));
  const fs::path dir = a.out / "dataset";
  refuse_or_remove(dir / "manifest.json", dir, a.force);

  const DatasetManifest manifest = build_dataset(sc, a.seed, dir);
  write_snapshot(dir, {{"command", "simulate"},
                       {"seed", a.seed},
                       {"sim", to_json(sc)}});

  size_t speakers = 0, utterances = 0;
  for (const auto& [name, split] : manifest.splits) {
    speakers += split.speakers.size();
    utterances += split.utterances.size();
  }
  std::cout << "dataset: " << speakers << " speakers, " << utterances
            << " utterances, C=" << manifest.channels << " channels, T="
            << manifest.frames << " frames -> " << dir.string() << "\n";
}

void cmd_pretrain(const Args& a) {
  const nlohmann::json cfg = load_config(a.config_path);
  const DatasetManifest manifest = require_dataset(a.out);
  const StbConfig model_cfg = resolve_model_config(section(cfg, "model"), manifest);
  TrainConfig tc = train_config_from_json(section(cfg, "train"));
  tc.stage = "pretrain";  // the command names the stage
  if (a.seed_given) tc.seed = a.seed;

  const fs::path dir = a.out / "pretrain";
  refuse_or_remove(dir / "manifest.json", dir, a.force);

  TrainStats stats;
  StbModel model = pretrain(manifest, a.out / "dataset", model_cfg, tc, &stats);
  save_checkpoint(model, dir, "pretrain");
  save_curve_csv(dir / "curve.csv", stats);
  write_snapshot(dir, {{"command", "pretrain"},
                       {"seed", tc.seed},
                       {"model", to_json(model.config)},
                       {"train", to_json(tc)}});
  std::cout << "pretrain: " << stats.points.size() << " steps, final loss "
            << stats.final_loss << ", last-epoch accuracy "
            << stats.final_accuracy << " -> " << dir.string() << "\n";
}

void cmd_finetune(const Args& a) {
  const nlohmann::json cfg = load_config(a.config_path);
  const DatasetManifest manifest = require_dataset(a.out);
  const StbConfig model_cfg = resolve_model_config(section(cfg, "model"), manifest);
  TrainConfig tc = train_config_from_json(section(cfg, "train"));
  tc.stage = "finetune";
  if (a.seed_given) tc.seed = a.seed;

  const Checkpoint pre = require_checkpoint(a.out / "pretrain", "pretrain");
  const fs::path dir = a.out / ("finetune-" + to_string(tc.normalizer));
  refuse_or_remove(dir / "manifest.json", dir, a.force);

  TrainStats stats;
  StbModel model = finetune(manifest, a.out / "dataset", pre, model_cfg, tc, &stats);
  save_checkpoint(model, dir, "finetune");
  save_curve_csv(dir / "curve.csv", stats);
  write_snapshot(dir, {{"command", "finetune"},
                       {"seed", tc.seed},
                       {"model", to_json(model.config)},
                       {"train", to_json(tc)}});
  std::cout << "finetune[" << to_string(tc.normalizer) << "]: "
            << stats.points.size() << " steps, final loss " << stats.final_loss
            << ", last-epoch accuracy " << stats.final_accuracy << " -> "
            << dir.string() << "\n";
}

void cmd_eval(const Args& a) {
  const nlohmann::json cfg = load_config(a.config_path);
  const DatasetManifest manifest = require_dataset(a.out);
  const EvalSection ev = eval_section_from_json(section(cfg, "eval"));
  const TrialSet trials = trials_for(manifest, ev);

  const fs::path dir = a.out / "eval";
  fs::create_directories(dir);
  int evaluated = 0;
  for (const std::string name : {"softmax", "sparsemax"}) {
    const fs::path ckpt_dir = a.out / ("finetune-" + name);
    if (!fs::exists(ckpt_dir / "manifest.json")) continue;
    const fs::path report_path = dir / ("report-" + name + ".json");
    refuse_or_remove(report_path, report_path, a.force);

    const Checkpoint ck = load_checkpoint(ckpt_dir);
    const StbModel model = model_from_checkpoint(ck);
    const EvalReport rep = evaluate(model, a.out / "dataset", manifest, ev.split,
                                    trials, ev.channel_subsets, a.seed);
    jsonu::save_file(report_path, to_json(rep));
    print_report("eval[" + name + "]", rep);
    std::cout << "report -> " << report_path.string() << "\n";
    ++evaluated;
  }
  if (evaluated == 0) {
    throw MissingArtifactError(
        "no fine-tuned checkpoint at " + (a.out / "finetune-softmax").string() +
        " or " + (a.out / "finetune-sparsemax").string() +
        "; run `stb-asv finetune` first");
  }
  write_snapshot(dir, {{"command", "eval"},
                       {"seed", a.seed},
                       {"eval", to_json(ev)}});
}

void cmd_oracle(const Args& a) {
  const nlohmann::json cfg = load_config(a.config_path);
  const DatasetManifest manifest = require_dataset(a.out);
  const EvalSection ev = eval_section_from_json(section(cfg, "eval"));
  const TrialSet trials = trials_for(manifest, ev);

  const Checkpoint pre = require_checkpoint(a.out / "pretrain", "pretrain");
  const StbModel single = model_from_checkpoint(pre);

  const fs::path dir = a.out / "oracle";
  const fs::path report_path = dir / "report.json";
  fs::create_directories(dir);
  refuse_or_remove(report_path, report_path, a.force);

  const EvalReport rep = oracle_one_best_eval(single, a.out / "dataset", manifest,
                                              ev.split, trials, ev.max_rank);
  jsonu::save_file(report_path, to_json(rep));
  write_snapshot(dir, {{"command", "oracle"},
                       {"seed", a.seed},
                       {"eval", to_json(ev)}});
  print_report("oracle", rep);
  std::cout << "report -> " << report_path.string() << "\n";
}

// ---------------------------------------------------------------------------
// verify: numerical property suites, self-contained and artifact-free.

struct SuiteResult {
  std::string name;
  bool pass = true;
  std::string detail;
};

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = scale * rng.normal();
  return Tensor::from(shape, std::move(v));
}

SuiteResult run_gradcheck_suite() {
  SuiteResult res{"gradcheck", true, ""};
  Rng rng(911);
  double max_err = 0.0;
  int64_t coords = 0;
  int functions = 0;
  std::string worst;

  const auto check = [&](const std::string& name,
                         const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x) {
    const GradCheckReport r = grad_check(f, x);
    ++functions;
    coords += x.numel();
    if (r.max_rel_err > max_err) {
      max_err = r.max_rel_err;
      worst = name;
    }
    if (!r.pass) {
      res.pass = false;
      std::ostringstream ss;
      ss << "kernel '" << name << "' max rel err " << r.max_rel_err << " (tol "
         << r.tol << ")";
      if (res.detail.empty()) res.detail = ss.str();
    }
  };

  const Tensor b44 = random_tensor({4, 2}, rng);
  const Tensor a34 = random_tensor({3, 4}, rng);
  check("matmul-left",
        [&](const Tensor& x) { return ops::sum_all(ops::matmul(x, b44)); },
        a34);
  check("matmul-right",
        [&](const Tensor& x) { return ops::sum_all(ops::matmul(a34, x)); },
        b44);
  const Tensor c = random_tensor({2, 5}, rng);
  check("add-mul",
        [&](const Tensor& x) { return ops::sum_all(ops::mul(ops::add(x, c), x)); },
        random_tensor({2, 5}, rng));
  check("scale-tanh",
        [&](const Tensor& x) { return ops::sum_all(ops::tanh(ops::scale(x, 0.7))); },
        random_tensor({3, 3}, rng));
  // Stay away from the kink at zero so finite differences are trustworthy.
  {
    std::vector<double> v(12);
    for (double& x : v) {
      const double u = rng.uniform(0.2, 1.0);
      x = rng.uniform() < 0.5 ? -u : u;
    }
    check("relu",
          [&](const Tensor& x) { return ops::sum_all(ops::relu(x)); },
          Tensor::from({3, 4}, std::move(v)));
  }
  const Tensor w6 = random_tensor({2, 6}, rng);
  const Tensor ln_gamma = random_tensor({6}, rng);
  const Tensor ln_beta = random_tensor({6}, rng);
  check("layer-norm",
        [&](const Tensor& x) {
          return ops::sum_all(ops::mul(ops::layer_norm(x, ln_gamma, ln_beta), w6));
        },
        random_tensor({2, 6}, rng));
  check("softmax",
        [&](const Tensor& x) {
          return ops::sum_all(ops::mul(ops::softmax_lastdim(x), w6));
        },
        random_tensor({2, 6}, rng));
  // Rows with a clear support margin: the projection's active set is stable
  // under the finite-difference probes.
  {
    const Tensor z = Tensor::from({2, 4}, {1.2, 0.4, -0.5, -0.8,
                                           -0.6, 1.1, 0.3, -0.9});
    const Tensor w4 = random_tensor({2, 4}, rng);
    check("sparsemax",
          [&](const Tensor& x) {
            return ops::sum_all(ops::mul(ops::sparsemax_lastdim(x), w4));
          },
          z);
  }
  const Tensor wv = random_tensor({6}, rng);
  check("l2-normalize",
        [&](const Tensor& x) {
          return ops::sum_all(ops::mul(ops::l2_normalize(x), wv));
        },
        random_tensor({6}, rng));
  const Tensor w423 = random_tensor({4, 2, 3}, rng);
  check("mean-broadcast",
        [&](const Tensor& x) {
          return ops::sum_all(ops::mean_over_axis(
              ops::mul(ops::broadcast_to(x, {4, 2, 3}), w423), 0));
        },
        random_tensor({2, 3}, rng));
  // Whole model, input gradient: every kernel in its real composition.
  {
    StbConfig cfg;
    cfg.num_blocks = 1;
    cfg.heads = 2;
    cfg.feature_dim = 8;
    cfg.input_dim = 5;
    cfg.frames = 4;
    cfg.channels_train = 2;
    cfg.num_speakers = 3;
    Rng init = Rng::stream(17, "init");
    const StbModel model = init_model(cfg, init);
    check("full-model",
          [&](const Tensor& x) {
            const Tensor e = embed(model, x);
            return ops::cross_entropy_logits(classify(model, stack_rows({e})), {1});
          },
          random_tensor({2, 4, 5}, rng, 0.5));
  }

  std::ostringstream ss;
  ss << functions << " functions, " << coords << " coordinates, max rel err "
     << max_err << " (worst: " << worst << ")";
  if (res.pass) res.detail = ss.str();
  return res;
}

// Simplex projection by bisection on the threshold; no sorting, so agreement
// with the library's sorted closed form is a meaningful cross-check.
std::vector<double> project_simplex_bisect(const std::vector<double>& z) {
  double lo = *std::max_element(z.begin(), z.end()) - 1.0;
  double hi = *std::max_element(z.begin(), z.end());
  const auto mass = [&](double tau) {
    double s = 0.0;
    for (double v : z) s += std::max(v - tau, 0.0);
    return s;
  };
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) > 1.0 ? lo : hi) = mid;
  }
  std::vector<double> p(z.size());
  for (size_t i = 0; i < z.size(); ++i) p[i] = std::max(z[i] - 0.5 * (lo + hi), 0.0);
  return p;
}

SuiteResult run_sparsemax_suite() {
  SuiteResult res{"sparsemax-projection", true, ""};
  Rng rng(912);
  double max_err = 0.0, max_sum_err = 0.0;
  const int rows = 500;
  for (int r = 0; r < rows; ++r) {
    const int64_t width = rng.uniform_int(2, 16);
    std::vector<double> z(static_cast<size_t>(width));
    for (double& v : z) v = rng.uniform(-3.0, 3.0);
    const Tensor p = ops::sparsemax_lastdim(Tensor::from({1, width}, z));
    const std::vector<double> q = project_simplex_bisect(z);
    double sum = 0.0;
    for (int64_t i = 0; i < width; ++i) {
      max_err = std::max(max_err, std::abs(p[i] - q[static_cast<size_t>(i)]));
      sum += p[i];
    }
    max_sum_err = std::max(max_sum_err, std::abs(sum - 1.0));
  }
  std::ostringstream ss;
  if (max_err > 1e-9) {
    res.pass = false;
    ss << "projection disagrees with bisection oracle by " << max_err;
  } else if (max_sum_err > 1e-12) {
    res.pass = false;
    ss << "projected rows sum to 1 off by " << max_sum_err;
  } else {
    ss << rows << " rows, max abs err " << max_err << ", max row-sum err "
       << max_sum_err;
  }
  res.detail = ss.str();
  return res;
}

SuiteResult run_permutation_suite() {
  SuiteResult res{"channel-permutation", true, ""};
  double max_dist = 0.0;
  int cases = 0;
  Rng data_rng(913);
  for (const Normalizer norm : {Normalizer::softmax, Normalizer::sparsemax}) {
    StbConfig cfg;
    cfg.num_blocks = 1;
    cfg.heads = 2;
    cfg.feature_dim = 8;
    cfg.input_dim = 5;
    cfg.frames = 6;
    cfg.channels_train = 2;
    cfg.num_speakers = 2;
    cfg.normalizer = norm;
    Rng init = Rng::stream(19, "init");
    const StbModel model = init_model(cfg, init);
    for (const int64_t channels : {2, 5}) {
      const Tensor x = random_tensor({channels, cfg.frames, cfg.input_dim}, data_rng);
      // Reverse the channel axis.
      std::vector<int64_t> perm(static_cast<size_t>(channels));
      std::iota(perm.rbegin(), perm.rend(), 0);
      const Tensor y = ops::take_axis0(x, perm);
      const double cos = cosine_score(embed(model, x), embed(model, y));
      max_dist = std::max(max_dist, 1.0 - cos);
      ++cases;
    }
  }
  std::ostringstream ss;
  if (max_dist >= 1e-10) {
    res.pass = false;
    ss << "embedding moved under channel reordering by cosine distance " << max_dist;
  } else {
    ss << cases << " cases, max cosine distance " << max_dist;
  }
  res.detail = ss.str();
  return res;
}

// Equal error rate by brute force: scan the same exhaustive threshold grid
// with direct counting, interpolating across the sign change.
double eer_bruteforce(const std::vector<double>& ts, const std::vector<double>& ns) {
  std::vector<double> grid;
  for (double s : ts) grid.push_back(s);
  for (double s : ns) grid.push_back(s);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::vector<double> sweep;
  sweep.push_back(grid.front() - 1.0);
  for (size_t i = 0; i < grid.size(); ++i) {
    sweep.push_back(grid[i]);
    if (i + 1 < grid.size()) sweep.push_back(0.5 * (grid[i] + grid[i + 1]));
  }
  sweep.push_back(grid.back() + 1.0);

  const auto rates = [&](double t) {
    double fa = 0.0, fr = 0.0;
    for (double s : ns) fa += s >= t ? 1.0 : 0.0;
    for (double s : ts) fr += s < t ? 1.0 : 0.0;
    return std::pair<double, double>{fa / static_cast<double>(ns.size()),
                                     fr / static_cast<double>(ts.size())};
  };
  auto [far, frr] = rates(sweep[0]);
  double prev_far = far, prev_frr = frr, prev_d = far - frr;
  for (size_t i = 1; i < sweep.size(); ++i) {
    auto [fa, fr] = rates(sweep[i]);
    const double d = fa - fr;
    if (prev_d == 0.0) return prev_far;
    if (d == 0.0) return fa;
    if ((prev_d > 0.0) != (d > 0.0)) {
      const double alpha = prev_d / (prev_d - d);
      return 0.5 * (prev_far + alpha * (fa - prev_far) + prev_frr +
                    alpha * (fr - prev_frr));
    }
    prev_far = fa;
    prev_frr = fr;
    prev_d = d;
  }
  return 0.5 * (prev_far + prev_frr);
}

SuiteResult run_eer_suite() {
  SuiteResult res{"eer-oracle", true, ""};
  Rng rng(914);
  double max_err = 0.0;
  const int sets = 200;
  for (int i = 0; i < sets; ++i) {
    const int nt = static_cast<int>(rng.uniform_int(1, 40));
    const int nn = static_cast<int>(rng.uniform_int(1, 40));
    const bool discrete = rng.uniform() < 0.5;
    const auto draw = [&]() {
      if (discrete) return static_cast<double>(rng.uniform_int(0, 5)) / 5.0;
      return rng.uniform(-1.0, 1.0);
    };
    std::vector<double> ts, ns;
    for (int k = 0; k < nt; ++k) ts.push_back(draw());
    for (int k = 0; k < nn; ++k) ns.push_back(draw());
    max_err = std::max(max_err,
                       std::abs(compute_eer(ts, ns).eer - eer_bruteforce(ts, ns)));
  }
  const double hand = compute_eer({0.9, 0.8, 0.3}, {0.7, 0.2, 0.1}).eer;
  std::ostringstream ss;
  if (max_err > 1e-9) {
    res.pass = false;
    ss << "equal error rate disagrees with brute-force sweep by " << max_err;
  } else if (std::abs(hand - 1.0 / 3.0) > 1e-12) {
    res.pass = false;
    ss << "hand-worked score set gave eer " << hand << ", want 1/3";
  } else {
    ss << sets << " sets, max abs err " << max_err << ", hand case exact";
  }
  res.detail = ss.str();
  return res;
}

void cmd_verify(const Args&) {
  const SuiteResult suites[] = {run_gradcheck_suite(), run_sparsemax_suite(),
                                run_permutation_suite(), run_eer_suite()};
  std::string first_fail;
  for (const SuiteResult& s : suites) {
    std::cout << (s.pass ? "[PASS] " : "[FAIL] ") << s.name << ": " << s.detail
              << "\n";
    if (!s.pass && first_fail.empty()) first_fail = s.name;
  }
  if (!first_fail.empty()) {
    throw PropertyFailure("verify: property suite '" + first_fail + "' failed");
  }
  std::cout << "verify: all " << std::size(suites) << " property suites passed\n";
}

void add_common(CLI::App* cmd, Args& a, bool config_required) {
  auto* cfg = cmd->add_option("--config", a.config_path,
                              "JSON config with sections {sim, model, train, eval}");
  if (config_required) cfg->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "root random seed")
      ->each([&a](const std::string&) { a.seed_given = true; });
  cmd->add_option("--out", a.out, "workspace directory for artifacts");
  cmd->add_flag("--force", a.force, "overwrite existing outputs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage speaker-embedding workflow over simulated device arrays"};
  app.require_subcommand(1);
  Args a;

  CLI::App* sim = app.add_subcommand("simulate", "synthesize a dataset");
  CLI::App* pre = app.add_subcommand("pretrain", "stage one: single-channel training");
  CLI::App* fin = app.add_subcommand("finetune", "stage two: multichannel training");
  CLI::App* ev = app.add_subcommand("eval", "score trials per channel-subset size");
  CLI::App* orc = app.add_subcommand("oracle", "closest-channel baseline scoring");
  CLI::App* ver = app.add_subcommand("verify", "run the numerical property suites");
  for (CLI::App* cmd : {sim, pre, fin, ev, orc}) add_common(cmd, a, true);
  add_common(ver, a, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) cmd_simulate(a);
    if (pre->parsed()) cmd_pretrain(a);
    if (fin->parsed()) cmd_finetune(a);
    if (ev->parsed()) cmd_eval(a);
    if (orc->parsed()) cmd_oracle(a);
    if (ver->parsed()) cmd_verify(a);
    return 0;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error (missing artifact): " << e.what() << "\n";
    return 2;
  } catch (const PropertyFailure& e) {
    std::cerr << "error (property failure): " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
