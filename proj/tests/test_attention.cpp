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
#include <vector>

#include "oracles.hpp"
#include "stbasv/attention.hpp"
#include "stbasv/errors.hpp"
#include "stbasv/grad_check.hpp"
#include "stbasv/ops.hpp"
#include "stbasv/rng.hpp"
#include "stbasv/tensor.hpp"

using namespace stbasv;
namespace ops = stbasv::ops;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  std::vector<double> d(static_cast<size_t>(numel_of(shape)));
  for (double& v : d) v = rng.normal() * scale;
  return Tensor::from(shape, std::move(d));
}

AttentionParams random_params(int64_t n, int h, Rng& rng, double scale = 0.5) {
  AttentionParams p;
  const int64_t dk = n / h;
  for (int i = 0; i < h; ++i) {
    p.w_q.push_back(random_tensor({n, dk}, rng, scale));
    p.w_k.push_back(random_tensor({n, dk}, rng, scale));
    p.w_v.push_back(random_tensor({n, dk}, rng, scale));
    p.b_q.push_back(random_tensor({dk}, rng, scale));
    p.b_k.push_back(random_tensor({dk}, rng, scale));
    p.b_v.push_back(random_tensor({dk}, rng, scale));
  }
  p.w_o = random_tensor({n, n}, rng, scale);
  return p;
}

// Scalar-loop reference for the full multi-head layer, built on the
// single-head oracle. prev_p: one [A*A] matrix per head, or empty.
std::vector<double> mha_oracle(const Tensor& x, const AttentionParams& p,
                               const std::vector<std::vector<double>>& prev_p,
                               bool sparse) {
  const int64_t a = x.dim(0);
  const int64_t n = x.dim(1);
  const int h = p.heads();
  const int64_t dk = n / h;
  std::vector<double> concat(static_cast<size_t>(a * n));
  for (int i = 0; i < h; ++i) {
    const size_t ui = static_cast<size_t>(i);
    auto project = [&](const Tensor& w, const Tensor& b) {
      std::vector<double> out = oracle::matmul2d(x.data(), w.data(), a, n, dk);
      for (int64_t r = 0; r < a; ++r)
        for (int64_t c = 0; c < dk; ++c)
          out[static_cast<size_t>(r * dk + c)] += b[c];
      return out;
    };
    const auto q = project(p.w_q[ui], p.b_q[ui]);
    const auto k = project(p.w_k[ui], p.b_k[ui]);
    const auto v = project(p.w_v[ui], p.b_v[ui]);
    const auto head = oracle::attention_head(
        q, k, v, a, a, dk, dk, prev_p.empty() ? std::vector<double>{} : prev_p[ui],
        sparse);
    for (int64_t r = 0; r < a; ++r)
      for (int64_t c = 0; c < dk; ++c)
        concat[static_cast<size_t>(r * n + i * dk + c)] =
            head.output[static_cast<size_t>(r * dk + c)];
  }
  return oracle::matmul2d(concat, p.w_o.data(), a, n, n);
}

// Applies the row/column permutation perm to a square matrix (P -> Pi P Pi^T).
std::vector<double> permute_square(const std::vector<double>& m, int64_t a,
                                   const std::vector<int64_t>& perm) {
  std::vector<double> out(m.size());
  for (int64_t i = 0; i < a; ++i)
    for (int64_t j = 0; j < a; ++j)
      out[static_cast<size_t>(i * a + j)] =
          m[static_cast<size_t>(perm[static_cast<size_t>(i)] * a +
                                perm[static_cast<size_t>(j)])];
  return out;
}

}  // namespace

TEST_CASE("single-position attention collapses to the value path") {
  Rng rng(31);
  const int64_t n = 6;
  const AttentionParams p = random_params(n, 2, rng);
  const Tensor x = random_tensor({1, n}, rng);
  for (const Normalizer nm : {Normalizer::softmax, Normalizer::sparsemax}) {
    const MhaResult r = mha_residual_scores(x, p, {}, nm);
    // With one position the attention weight matrix is [[1]], so the output
    // is concat_heads(X W_V + b_V) * W_O regardless of normalizer.
    std::vector<Tensor> vs;
    for (int i = 0; i < 2; ++i) {
      vs.push_back(ops::add(ops::matmul(x, p.w_v[static_cast<size_t>(i)]),
                            ops::broadcast_to(p.b_v[static_cast<size_t>(i)], {1, 3})));
    }
    const Tensor want = ops::matmul(ops::concat_lastdim(vs), p.w_o);
    for (int64_t i = 0; i < n; ++i)
      CHECK(r.y[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("zero query/key weights give uniform attention over value rows") {
  Rng rng(32);
  const int64_t n = 4, a = 5;
  AttentionParams p = random_params(n, 1, rng);
  p.w_q[0] = Tensor::zeros({n, n});
  p.w_k[0] = Tensor::zeros({n, n});
  p.b_q[0] = Tensor::zeros({n});
  p.b_k[0] = Tensor::zeros({n});
  const Tensor x = random_tensor({a, n}, rng);
  const MhaResult r = mha_residual_scores(x, p, {}, Normalizer::softmax);

  // Uniform weights average the value rows before the output projection.
  const Tensor v = ops::add(ops::matmul(x, p.w_v[0]),
                            ops::broadcast_to(p.b_v[0], {a, n}));
  const Tensor vbar = ops::mean_over_axis(v, 0);
  const Tensor want = ops::matmul(ops::reshape(vbar, {1, n}), p.w_o);
  for (int64_t row = 0; row < a; ++row)
    for (int64_t i = 0; i < n; ++i)
      CHECK(r.y[row * n + i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("carried scores steer attention: large prior pulls row 0 to position 1") {
  Rng rng(33);
  const int64_t n = 4;
  const AttentionParams p = random_params(n, 1, rng);
  const Tensor x = random_tensor({2, n}, rng);
  ScoreState prev;
  prev.p.push_back(Tensor::from({2, 2}, {0, 10, 0, 0}));

  const MhaResult r = mha_residual_scores(x, p, prev, Normalizer::softmax);

  // Scalar oracle agreement.
  const auto want = mha_oracle(x, p, {prev.p[0].data()}, false);
  for (int64_t i = 0; i < 2 * n; ++i)
    CHECK(r.y[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-9));

  // Row 0's normalized weight on position 1 is nearly 1.
  const Tensor weights = ops::softmax_lastdim(r.next.p[0]);
  CHECK(weights[1] > 0.99);
}

TEST_CASE("matches the scalar-loop oracle on random inputs, both normalizers") {
  Rng rng(34);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t n = 8;
    const int h = (trial % 2 == 0) ? 2 : 4;
    const int64_t a = rng.uniform_int(2, 6);
    const AttentionParams p = random_params(n, h, rng);
    const Tensor x = random_tensor({a, n, }, rng);
    const bool sparse = trial % 3 == 0;
    const MhaResult r = mha_residual_scores(
        x, p, {}, sparse ? Normalizer::sparsemax : Normalizer::softmax);
    const auto want = mha_oracle(x, p, {}, sparse);
    for (int64_t i = 0; i < a * n; ++i)
      CHECK(r.y[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-9));
  }
}

TEST_CASE("next state carries the raw pre-normalizer scores") {
  Rng rng(35);
  const int64_t n = 6, a = 3;
  const AttentionParams p = random_params(n, 2, rng);
  const Tensor x = random_tensor({a, n}, rng);
  const MhaResult r1 = mha_residual_scores(x, p, {}, Normalizer::softmax);
  REQUIRE(r1.next.p.size() == 2);
  for (const Tensor& s : r1.next.p) REQUIRE(s.shape() == Shape{a, a});

  // Feeding the state back adds it to the fresh scores: raw2 = raw1 + raw1
  // when input and params repeat.
  const MhaResult r2 = mha_residual_scores(x, p, r1.next, Normalizer::softmax);
  for (size_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < a * a; ++j)
      CHECK(r2.next.p[i][j] ==
            doctest::Approx(2.0 * r1.next.p[i][j]).epsilon(1e-12));
  CHECK(r2.next.origin_layer == r1.next.origin_layer + 1);
}

TEST_CASE("permutation equivariance over the attention axis") {
  Rng rng(36);
  const int64_t n = 8, a = 5;
  const std::vector<int64_t> perm = {3, 0, 4, 1, 2};
  for (const Normalizer nm : {Normalizer::softmax, Normalizer::sparsemax}) {
    const AttentionParams p = random_params(n, 2, rng);
    const Tensor x = random_tensor({a, n}, rng);
    ScoreState prev;
    prev.p.push_back(random_tensor({a, a}, rng));
    prev.p.push_back(random_tensor({a, a}, rng));

    const MhaResult base = mha_residual_scores(x, p, prev, nm);

    const Tensor xp = ops::take_axis0(x, perm);
    ScoreState prev_p;
    for (const Tensor& m : prev.p)
      prev_p.p.push_back(Tensor::from({a, a}, permute_square(m.data(), a, perm)));
    const MhaResult permuted = mha_residual_scores(xp, p, prev_p, nm);

    for (int64_t i = 0; i < a; ++i)
      for (int64_t j = 0; j < n; ++j)
        CHECK(std::abs(permuted.y[i * n + j] -
                       base.y[perm[static_cast<size_t>(i)] * n + j]) <= 1e-10);
    for (size_t hd = 0; hd < 2; ++hd) {
      const auto want = permute_square(base.next.p[hd].data(), a, perm);
      for (int64_t i = 0; i < a * a; ++i)
        CHECK(std::abs(permuted.next.p[hd][i] - want[static_cast<size_t>(i)]) <=
              1e-10);
    }
  }
}

TEST_CASE("batched rank-3 input equals per-slice rank-2 calls") {
  Rng rng(37);
  const int64_t b = 3, a = 4, n = 8;
  const AttentionParams p = random_params(n, 2, rng);
  const Tensor x = random_tensor({b, a, n}, rng);
  const MhaResult batched = mha_residual_scores(x, p, {}, Normalizer::softmax);
  REQUIRE(batched.y.shape() == Shape{b, a, n});
  REQUIRE(batched.next.p[0].shape() == Shape{b, a, a});
  for (int64_t s = 0; s < b; ++s) {
    const Tensor slice = ops::take_axis0(x, {s});
    const MhaResult single = mha_residual_scores(
        ops::reshape(slice, {a, n}), p, {}, Normalizer::softmax);
    for (int64_t i = 0; i < a * n; ++i)
      CHECK(batched.y[s * a * n + i] == doctest::Approx(single.y[i]).epsilon(1e-12));
    for (size_t hd = 0; hd < 2; ++hd)
      for (int64_t i = 0; i < a * a; ++i)
        CHECK(batched.next.p[hd][s * a * a + i] ==
              doctest::Approx(single.next.p[hd][i]).epsilon(1e-12));
  }
}

TEST_CASE("shared-score mode keeps one matrix equal to the head mean") {
  Rng rng(38);
  const int64_t n = 6, a = 3;
  const AttentionParams p = random_params(n, 3, rng);
  const Tensor x = random_tensor({a, n}, rng);
  const MhaResult per_head = mha_residual_scores(x, p, {}, Normalizer::softmax);
  const MhaResult shared =
      mha_residual_scores(x, p, {}, Normalizer::softmax, /*shared=*/true);
  REQUIRE(shared.next.p.size() == 1);
  for (int64_t i = 0; i < a * a; ++i) {
    const double mean = (per_head.next.p[0][i] + per_head.next.p[1][i] +
                         per_head.next.p[2][i]) / 3.0;
    CHECK(shared.next.p[0][i] == doctest::Approx(mean).epsilon(1e-12));
  }
  // The single carried matrix feeds every head on the next layer.
  const MhaResult next = mha_residual_scores(x, p, shared.next,
                                             Normalizer::softmax, true);
  CHECK(next.next.p.size() == 1);

  // Head-count mismatch: per-head state with 3 heads fed in shared mode.
  CHECK_THROWS_AS(mha_residual_scores(x, p, per_head.next, Normalizer::softmax,
                                      /*shared=*/true),
                  ConfigError);
}

TEST_CASE("state with the wrong head count is a config error") {
  Rng rng(39);
  const int64_t n = 6, a = 3;
  const AttentionParams p = random_params(n, 2, rng);
  const Tensor x = random_tensor({a, n}, rng);
  ScoreState bad;
  bad.p.push_back(random_tensor({a, a}, rng));
  CHECK_THROWS_AS(mha_residual_scores(x, p, bad, Normalizer::softmax), ConfigError);

  ScoreState wrong_shape;
  wrong_shape.p.push_back(random_tensor({a + 1, a + 1}, rng));
  wrong_shape.p.push_back(random_tensor({a + 1, a + 1}, rng));
  CHECK_THROWS_AS(mha_residual_scores(x, p, wrong_shape, Normalizer::softmax),
                  ConfigError);
}

TEST_CASE("malformed attention parameters are config errors") {
  Rng rng(40);
  const Tensor x = random_tensor({3, 6}, rng);
  AttentionParams p = random_params(6, 2, rng);
  p.w_o = random_tensor({6, 5}, rng);
  CHECK_THROWS_AS(mha_residual_scores(x, p, {}, Normalizer::softmax), ConfigError);

  AttentionParams q = random_params(6, 2, rng);
  q.w_k.pop_back();
  CHECK_THROWS_AS(mha_residual_scores(x, q, {}, Normalizer::softmax), ConfigError);

  const AttentionParams odd = random_params(6, 2, rng);
  const Tensor x5 = random_tensor({3, 5}, rng);  // 5 not divisible by 2 heads
  CHECK_THROWS_AS(mha_residual_scores(x5, odd, {}, Normalizer::softmax), ConfigError);
}

TEST_CASE("prenorm_sublayer frozen cases") {
  Rng rng(41);
  const LayerNormParams lnp{random_tensor({2}, rng), random_tensor({2}, rng)};
  const Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});

  const Tensor same = prenorm_sublayer(
      x, [](const Tensor& t) { return ops::scale(t, 0.0); }, lnp);
  for (int64_t i = 0; i < 4; ++i) CHECK(same[i] == x[i]);

  const Tensor act = prenorm_sublayer(
      x, [](const Tensor& t) { return t; }, lnp);
  const Tensor want = ops::add(x, ops::layer_norm(x, lnp.gamma, lnp.beta));
  for (int64_t i = 0; i < 4; ++i)
    CHECK(act[i] == doctest::Approx(want[i]).epsilon(1e-14));

  const Tensor rect = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(
      prenorm_sublayer(rect,
                       [](const Tensor& t) { return ops::transpose_lastdims(t); },
                       LayerNormParams{Tensor::full({3}, 1.0), Tensor::zeros({3})}),
      std::logic_error);
}

TEST_CASE("ffn frozen cases and oracle agreement") {
  Rng rng(42);
  const int64_t a = 3, n = 4;

  FfnParams zero{Tensor::zeros({n, 2 * n}), Tensor::zeros({2 * n}),
                 Tensor::zeros({2 * n, n}), Tensor::full({n}, 2.5)};
  const Tensor x = random_tensor({a, n}, rng);
  const Tensor yz = ffn(x, zero);
  for (int64_t i = 0; i < a * n; ++i) CHECK(yz[i] == 2.5);

  // Identity pass-through for nonnegative inputs.
  std::vector<double> eye(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) eye[static_cast<size_t>(i * n + i)] = 1.0;
  FfnParams ident{Tensor::from({n, n}, eye), Tensor::zeros({n}),
                  Tensor::from({n, n}, eye), Tensor::zeros({n})};
  const Tensor pos = ops::relu(random_tensor({a, n}, rng));
  const Tensor yi = ffn(pos, ident);
  for (int64_t i = 0; i < a * n; ++i)
    CHECK(yi[i] == doctest::Approx(pos[i]).epsilon(1e-14));

  // Random case against scalar loops.
  FfnParams p{random_tensor({n, 2 * n}, rng), random_tensor({2 * n}, rng),
              random_tensor({2 * n, n}, rng), random_tensor({n}, rng)};
  const Tensor y = ffn(x, p);
  auto hidden = oracle::matmul2d(x.data(), p.w1.data(), a, n, 2 * n);
  for (int64_t r = 0; r < a; ++r)
    for (int64_t c = 0; c < 2 * n; ++c) {
      double& v = hidden[static_cast<size_t>(r * 2 * n + c)];
      v = std::max(v + p.b1[c], 0.0);
    }
  auto want = oracle::matmul2d(hidden, p.w2.data(), a, 2 * n, n);
  for (int64_t r = 0; r < a; ++r)
    for (int64_t c = 0; c < n; ++c)
      want[static_cast<size_t>(r * n + c)] += p.b2[c];
  for (int64_t i = 0; i < a * n; ++i)
    CHECK(y[i] == doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-10));

  FfnParams bad = p;
  bad.w2 = random_tensor({n, n}, rng);
  CHECK_THROWS_AS(ffn(x, bad), ConfigError);
}

TEST_CASE("gradcheck through attention-style and ffn-style sublayers") {
  Rng rng(43);
  const int64_t a = 3, n = 4;
  const AttentionParams ap = random_params(n, 2, rng);
  const LayerNormParams lnp{Tensor::full({n}, 1.0), Tensor::zeros({n})};
  const FfnParams fp{random_tensor({n, 2 * n}, rng, 0.5), random_tensor({2 * n}, rng, 0.5),
                     random_tensor({2 * n, n}, rng, 0.5), random_tensor({n}, rng, 0.5)};
  const Tensor w = random_tensor({a, n}, rng);

  for (const Normalizer nm : {Normalizer::softmax, Normalizer::sparsemax}) {
    const GradCheckReport attn = grad_check(
        [&](const Tensor& x) {
          const Tensor y = prenorm_sublayer(
              x,
              [&](const Tensor& t) { return mha_residual_scores(t, ap, {}, nm).y; },
              lnp);
          return ops::sum_all(ops::mul(y, w));
        },
        random_tensor({a, n}, rng));
    INFO("normalizer " << to_string(nm) << " rel err " << attn.max_rel_err);
    CHECK(attn.pass);
  }

  const GradCheckReport f = grad_check(
      [&](const Tensor& x) {
        const Tensor y = prenorm_sublayer(
            x, [&](const Tensor& t) { return ffn(t, fp); }, lnp);
        return ops::sum_all(ops::mul(y, w));
      },
      random_tensor({a, n}, rng));
  CHECK(f.pass);
}
