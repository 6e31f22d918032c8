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
// Reference implementations used only by tests. Each one deliberately takes a
// different algorithmic route than the library (bisection instead of sorting,
// scalar loops instead of batched kernels, exhaustive sweeps instead of
// closed forms) so agreement is meaningful.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// Euclidean projection of z onto the probability simplex by bisecting on the
// threshold tau where sum_i max(z_i - tau, 0) = 1. No sorting involved.
inline std::vector<double> simplex_project_bisect(const std::vector<double>& z) {
  double lo = *std::min_element(z.begin(), z.end()) - 1.0;
  double hi = *std::max_element(z.begin(), z.end());
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double s = 0.0;
    for (double v : z) s += std::max(v - mid, 0.0);
    if (s > 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double tau = 0.5 * (lo + hi);
  std::vector<double> p(z.size());
  for (size_t i = 0; i < z.size(); ++i) p[i] = std::max(z[i] - tau, 0.0);
  return p;
}

// Plain rank-2 matrix product, scalar loops.
inline std::vector<double> matmul2d(const std::vector<double>& a,
                                    const std::vector<double>& b, int64_t m,
                                    int64_t k, int64_t p) {
  std::vector<double> out(static_cast<size_t>(m * p), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (int64_t t = 0; t < k; ++t)
        s += a[static_cast<size_t>(i * k + t)] * b[static_cast<size_t>(t * p + j)];
      out[static_cast<size_t>(i * p + j)] = s;
    }
  return out;
}

// Row softmax, scalar loop (no max shift: tests feed it moderate values).
inline std::vector<double> softmax_row(const std::vector<double>& z) {
  std::vector<double> p(z.size());
  double s = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i]);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

// Single-head attention on row-major matrices, scalar loops throughout:
// S = Q K^T / sqrt(dk) + P_prev, rows of S normalized (softmax or the
// bisection projection above), output = weights * V. Returns both the output
// [rows_q x dv] and the raw pre-normalizer scores S [rows_q x rows_k].
struct AttnOracleOut {
  std::vector<double> output;
  std::vector<double> scores;
};
inline AttnOracleOut attention_head(const std::vector<double>& q,
                                    const std::vector<double>& k,
                                    const std::vector<double>& v, int64_t rows_q,
                                    int64_t rows_k, int64_t dk, int64_t dv,
                                    const std::vector<double>& p_prev,
                                    bool sparse) {
  AttnOracleOut r;
  r.scores.assign(static_cast<size_t>(rows_q * rows_k), 0.0);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  for (int64_t i = 0; i < rows_q; ++i)
    for (int64_t j = 0; j < rows_k; ++j) {
      double s = 0.0;
      for (int64_t t = 0; t < dk; ++t)
        s += q[static_cast<size_t>(i * dk + t)] * k[static_cast<size_t>(j * dk + t)];
      s *= inv;
      if (!p_prev.empty()) s += p_prev[static_cast<size_t>(i * rows_k + j)];
      r.scores[static_cast<size_t>(i * rows_k + j)] = s;
    }
  r.output.assign(static_cast<size_t>(rows_q * dv), 0.0);
  for (int64_t i = 0; i < rows_q; ++i) {
    std::vector<double> row(r.scores.begin() + static_cast<std::ptrdiff_t>(i * rows_k),
                            r.scores.begin() + static_cast<std::ptrdiff_t>((i + 1) * rows_k));
    const std::vector<double> w =
        sparse ? simplex_project_bisect(row) : softmax_row(row);
    for (int64_t j = 0; j < rows_k; ++j)
      for (int64_t t = 0; t < dv; ++t)
        r.output[static_cast<size_t>(i * dv + t)] +=
            w[static_cast<size_t>(j)] * v[static_cast<size_t>(j * dv + t)];
  }
  return r;
}

// Equal-error rate by exhaustive threshold sweep. Candidate thresholds are
// every score and every midpoint between adjacent distinct scores; FAR(t) is
// the fraction of nontarget scores >= t, FRR(t) the fraction of target
// scores < t. The crossing is linearly interpolated.
inline double eer_sweep(std::vector<double> target, std::vector<double> nontarget) {
  std::vector<double> all;
  all.reserve(target.size() + nontarget.size());
  all.insert(all.end(), target.begin(), target.end());
  all.insert(all.end(), nontarget.begin(), nontarget.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  std::vector<double> thresholds;
  thresholds.push_back(all.front() - 1.0);
  for (size_t i = 0; i < all.size(); ++i) {
    thresholds.push_back(all[i]);
    if (i + 1 < all.size()) thresholds.push_back(0.5 * (all[i] + all[i + 1]));
  }
  thresholds.push_back(all.back() + 1.0);

  auto far_at = [&](double t) {
    int64_t c = 0;
    for (double s : nontarget) c += (s >= t) ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(nontarget.size());
  };
  auto frr_at = [&](double t) {
    int64_t c = 0;
    for (double s : target) c += (s < t) ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(target.size());
  };

  // Walk thresholds in increasing order; FAR falls, FRR rises. Find the first
  // pair of consecutive thresholds where the sign of (FAR - FRR) flips.
  double prev_t = thresholds.front();
  double prev_d = far_at(prev_t) - frr_at(prev_t);
  double prev_far = far_at(prev_t), prev_frr = frr_at(prev_t);
  for (size_t i = 1; i < thresholds.size(); ++i) {
    const double t = thresholds[i];
    const double far = far_at(t), frr = frr_at(t);
    const double d = far - frr;
    if (prev_d == 0.0) return prev_far;  // exact crossing at prev threshold
    if (d == 0.0) return far;
    if ((prev_d > 0.0) != (d > 0.0)) {
      const double alpha = prev_d / (prev_d - d);
      const double far_x = prev_far + alpha * (far - prev_far);
      const double frr_x = prev_frr + alpha * (frr - prev_frr);
      return 0.5 * (far_x + frr_x);
    }
    prev_t = t;
    prev_d = d;
    prev_far = far;
    prev_frr = frr;
  }
  return 0.5 * (prev_far + prev_frr);
}

}  // namespace oracle
