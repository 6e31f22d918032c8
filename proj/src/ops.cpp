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
#include "stbasv/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

namespace stbasv::ops {
namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

const Tensor& chk(const Tensor& t, const char* op, const char* what) {
  if (!t.defined()) fail(std::string(op) + ": " + what + " is an empty tensor");
  return t;
}

std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

int normalize_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    fail(std::string(op) + ": axis " + std::to_string(axis) +
         " out of range for rank " + std::to_string(rank));
  }
  return a;
}

// ---------------------------------------------------------------------------
// Raw compute helpers. These ignore tape handles entirely: forward paths,
// replay closures and gradient rules all share them.
// ---------------------------------------------------------------------------

Tensor raw_matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const int ra = a.rank();
  const int rb = b.rank();
  const int64_t M = as[static_cast<size_t>(ra - 2)];
  const int64_t K = as[static_cast<size_t>(ra - 1)];
  const int64_t P = bs[static_cast<size_t>(rb - 1)];

  const int nb = std::max(ra, rb) - 2;
  Shape ob(static_cast<size_t>(nb));
  for (int i = 0; i < nb; ++i) {
    const int ia = (ra - 2) - nb + i;
    const int ib = (rb - 2) - nb + i;
    const int64_t ea = ia >= 0 ? as[static_cast<size_t>(ia)] : 1;
    const int64_t eb = ib >= 0 ? bs[static_cast<size_t>(ib)] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      fail("matmul: batch dimensions do not broadcast: " + shape_str(as) +
           " vs " + shape_str(bs));
    }
    ob[static_cast<size_t>(i)] = std::max(ea, eb);
  }

  Shape oshape = ob;
  oshape.push_back(M);
  oshape.push_back(P);
  std::vector<double> out(static_cast<size_t>(numel_of(oshape)), 0.0);

  const auto ast = strides_of(as);
  const auto bst = strides_of(bs);
  const auto obst = strides_of(ob);
  const int64_t batch_count = numel_of(ob);
  const double* ad = a.data().data();
  const double* bd = b.data().data();

  for (int64_t bi = 0; bi < batch_count; ++bi) {
    int64_t rem = bi;
    int64_t a_off = 0;
    int64_t b_off = 0;
    for (int i = 0; i < nb; ++i) {
      const int64_t idx = rem / obst[static_cast<size_t>(i)];
      rem %= obst[static_cast<size_t>(i)];
      const int ia = (ra - 2) - nb + i;
      if (ia >= 0 && as[static_cast<size_t>(ia)] != 1) a_off += idx * ast[static_cast<size_t>(ia)];
      const int ib = (rb - 2) - nb + i;
      if (ib >= 0 && bs[static_cast<size_t>(ib)] != 1) b_off += idx * bst[static_cast<size_t>(ib)];
    }
    const double* ap = ad + a_off;
    const double* bp = bd + b_off;
    double* op = out.data() + bi * M * P;
    for (int64_t m = 0; m < M; ++m) {
      const double* arow = ap + m * K;
      double* orow = op + m * P;
      for (int64_t k = 0; k < K; ++k) {
        const double av = arow[k];
        if (av == 0.0) continue;
        const double* brow = bp + k * P;
        for (int64_t p = 0; p < P; ++p) orow[p] += av * brow[p];
      }
    }
  }
  return Tensor::from(std::move(oshape), std::move(out));
}

Tensor raw_transpose_lastdims(const Tensor& x) {
  const Shape& xs = x.shape();
  const int r = x.rank();
  const int64_t R = xs[static_cast<size_t>(r - 2)];
  const int64_t C = xs[static_cast<size_t>(r - 1)];
  Shape os = xs;
  os[static_cast<size_t>(r - 2)] = C;
  os[static_cast<size_t>(r - 1)] = R;
  const int64_t batch = x.numel() / (R * C);
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const double* xd = x.data().data();
  for (int64_t b = 0; b < batch; ++b) {
    const double* xp = xd + b * R * C;
    double* op = out.data() + b * R * C;
    for (int64_t i = 0; i < R; ++i)
      for (int64_t j = 0; j < C; ++j) op[j * R + i] = xp[i * C + j];
  }
  return Tensor::from(std::move(os), std::move(out));
}

// Sums `g` down to `target` (undoes right-aligned broadcasting). Summation
// follows flat iteration order over g, so it is deterministic.
Tensor raw_reduce_to_shape(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g.detached();
  const int rg = g.rank();
  const int rt = static_cast<int>(target.size());
  if (rt > rg) {
    fail("reduce_to_shape: target rank exceeds source: " + shape_str(g.shape()) +
         " vs " + shape_str(target));
  }
  for (int i = 0; i < rt; ++i) {
    const int64_t tg = target[static_cast<size_t>(i)];
    const int64_t gg = g.shape()[static_cast<size_t>(rg - rt + i)];
    if (tg != gg && tg != 1) {
      fail("reduce_to_shape: " + shape_str(g.shape()) + " does not reduce to " +
           shape_str(target));
    }
  }
  std::vector<double> out(static_cast<size_t>(numel_of(target)), 0.0);
  const auto gst = strides_of(g.shape());
  const auto tst = strides_of(target);
  const double* gd = g.data().data();
  const int64_t n = g.numel();
  for (int64_t f = 0; f < n; ++f) {
    int64_t rem = f;
    int64_t tf = 0;
    for (int i = 0; i < rg; ++i) {
      const int64_t idx = rem / gst[static_cast<size_t>(i)];
      rem %= gst[static_cast<size_t>(i)];
      const int it = i - (rg - rt);
      if (it >= 0 && target[static_cast<size_t>(it)] != 1) {
        tf += idx * tst[static_cast<size_t>(it)];
      }
    }
    out[static_cast<size_t>(tf)] += gd[f];
  }
  return Tensor::from(target, std::move(out));
}

Tensor raw_broadcast_to(const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x.detached();
  const int rx = x.rank();
  const int rt = static_cast<int>(target.size());
  std::vector<double> out(static_cast<size_t>(numel_of(target)));
  const auto xst = strides_of(x.shape());
  const auto tst = strides_of(target);
  const double* xd = x.data().data();
  const int64_t n = numel_of(target);
  for (int64_t f = 0; f < n; ++f) {
    int64_t rem = f;
    int64_t xf = 0;
    for (int i = 0; i < rt; ++i) {
      const int64_t idx = rem / tst[static_cast<size_t>(i)];
      rem %= tst[static_cast<size_t>(i)];
      const int ix = i - (rt - rx);
      if (ix >= 0 && x.shape()[static_cast<size_t>(ix)] != 1) {
        xf += idx * xst[static_cast<size_t>(ix)];
      }
    }
    out[static_cast<size_t>(f)] = xd[xf];
  }
  return Tensor::from(target, std::move(out));
}

Tensor raw_add(const Tensor& a, const Tensor& b) {
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return Tensor::from(a.shape(), std::move(out));
}

Tensor raw_mul(const Tensor& a, const Tensor& b) {
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return Tensor::from(a.shape(), std::move(out));
}

Tensor raw_scale(const Tensor& x, double c) {
  std::vector<double> out(x.data());
  for (double& v : out) v *= c;
  return Tensor::from(x.shape(), std::move(out));
}

Tensor raw_relu(const Tensor& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::from(x.shape(), std::move(out));
}

Tensor raw_tanh(const Tensor& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = std::tanh(v);
  return Tensor::from(x.shape(), std::move(out));
}

Tensor raw_layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      double eps) {
  const int64_t n = x.dim(-1);
  const int64_t rows = x.numel() / n;
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const double* xd = x.data().data();
  const double* gd = gamma.data().data();
  const double* bd = beta.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xp = xd + r * n;
    double* op = out.data() + r * n;
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += xp[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = xp[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t i = 0; i < n; ++i) op[i] = gd[i] * (xp[i] - mean) * inv + bd[i];
  }
  return Tensor::from(x.shape(), std::move(out));
}

Tensor raw_softmax_lastdim(const Tensor& z) {
  const int64_t n = z.dim(-1);
  const int64_t rows = z.numel() / n;
  std::vector<double> out(static_cast<size_t>(z.numel()));
  const double* zd = z.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* zp = zd + r * n;
    double* op = out.data() + r * n;
    double mx = zp[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, zp[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      op[i] = std::exp(zp[i] - mx);
      sum += op[i];
    }
    for (int64_t i = 0; i < n; ++i) op[i] /= sum;
  }
  return Tensor::from(z.shape(), std::move(out));
}

// Exact Euclidean projection of each row onto the probability simplex
// (sort-based). Rows with uniformly low scores keep only the top entries;
// everything below the threshold tau is exactly zero.
Tensor raw_sparsemax_lastdim(const Tensor& z) {
  const int64_t n = z.dim(-1);
  const int64_t rows = z.numel() / n;
  std::vector<double> out(static_cast<size_t>(z.numel()));
  std::vector<double> sorted(static_cast<size_t>(n));
  const double* zd = z.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* zp = zd + r * n;
    double* op = out.data() + r * n;
    std::copy(zp, zp + n, sorted.begin());
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    double cum = 0.0;
    double cum_at_k = 0.0;
    int64_t k_support = 0;
    for (int64_t k = 1; k <= n; ++k) {
      cum += sorted[static_cast<size_t>(k - 1)];
      if (1.0 + static_cast<double>(k) * sorted[static_cast<size_t>(k - 1)] > cum) {
        k_support = k;
        cum_at_k = cum;
      }
    }
    const double tau = (cum_at_k - 1.0) / static_cast<double>(k_support);
    for (int64_t i = 0; i < n; ++i) op[i] = std::max(zp[i] - tau, 0.0);
  }
  return Tensor::from(z.shape(), std::move(out));
}

Tensor raw_concat_lastdim(const std::vector<Tensor>& parts) {
  const int64_t last0 = parts[0].dim(-1);
  int64_t total_last = 0;
  for (const Tensor& p : parts) total_last += p.dim(-1);
  const int64_t rows = parts[0].numel() / last0;
  Shape os = parts[0].shape();
  os.back() = total_last;
  std::vector<double> out(static_cast<size_t>(rows * total_last));
  int64_t offset = 0;
  for (const Tensor& p : parts) {
    const int64_t pl = p.dim(-1);
    const double* pd = p.data().data();
    for (int64_t r = 0; r < rows; ++r) {
      std::copy(pd + r * pl, pd + (r + 1) * pl,
                out.begin() + static_cast<std::ptrdiff_t>(r * total_last + offset));
    }
    offset += pl;
  }
  return Tensor::from(std::move(os), std::move(out));
}

Tensor raw_permute(const Tensor& x, const std::vector<int>& axes) {
  const int r = x.rank();
  const Shape& xs = x.shape();
  Shape os(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = xs[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  const auto xst = strides_of(xs);
  const auto ost = strides_of(os);
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const double* xd = x.data().data();
  const int64_t n = x.numel();
  for (int64_t f = 0; f < n; ++f) {
    int64_t rem = f;
    int64_t xf = 0;
    for (int i = 0; i < r; ++i) {
      const int64_t idx = rem / ost[static_cast<size_t>(i)];
      rem %= ost[static_cast<size_t>(i)];
      xf += idx * xst[static_cast<size_t>(axes[static_cast<size_t>(i)])];
    }
    out[static_cast<size_t>(f)] = xd[xf];
  }
  return Tensor::from(std::move(os), std::move(out));
}

Tensor raw_mean_over_axis(const Tensor& x, int axis) {
  const Shape& xs = x.shape();
  const int r = x.rank();
  Shape os;
  os.reserve(static_cast<size_t>(r - 1));
  for (int i = 0; i < r; ++i)
    if (i != axis) os.push_back(xs[static_cast<size_t>(i)]);
  const int64_t extent = xs[static_cast<size_t>(axis)];
  int64_t inner = 1;
  for (int i = axis + 1; i < r; ++i) inner *= xs[static_cast<size_t>(i)];
  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= xs[static_cast<size_t>(i)];
  std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
  const double* xd = x.data().data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t a = 0; a < extent; ++a) {
      const double* xp = xd + (o * extent + a) * inner;
      double* op = out.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) op[i] += xp[i];
    }
  }
  const double denom = static_cast<double>(extent);
  for (double& v : out) v /= denom;
  return Tensor::from(std::move(os), std::move(out));
}

Tensor raw_sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::scalar(s);
}

constexpr double kL2Floor = 1e-12;

Tensor raw_l2_normalize(const Tensor& x) {
  double sq = 0.0;
  for (double v : x.data()) sq += v * v;
  const double denom = std::max(std::sqrt(sq), kL2Floor);
  std::vector<double> out(x.data());
  for (double& v : out) v /= denom;
  return Tensor::from(x.shape(), std::move(out));
}

Tensor raw_cross_entropy_logits(const Tensor& logits,
                                const std::vector<int64_t>& labels) {
  const int64_t B = logits.dim(0);
  const int64_t S = logits.dim(1);
  const double* ld = logits.data().data();
  double total = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    const double* zp = ld + b * S;
    double mx = zp[0];
    for (int64_t i = 1; i < S; ++i) mx = std::max(mx, zp[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < S; ++i) sum += std::exp(zp[i] - mx);
    const double lse = mx + std::log(sum);
    total += lse - zp[labels[static_cast<size_t>(b)]];
  }
  return Tensor::scalar(total / static_cast<double>(B));
}

}  // namespace

// ---------------------------------------------------------------------------
// Public kernels: validation + forward + tape registration.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  chk(a, "matmul", "left operand");
  chk(b, "matmul", "right operand");
  if (a.rank() < 2 || b.rank() < 2) {
    fail("matmul: operands need rank >= 2, got " + shape_str(a.shape()) +
         " and " + shape_str(b.shape()));
  }
  if (a.dim(-1) != b.dim(-2)) {
    fail("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  }
  Tensor out = raw_matmul(a, b);
  return record_op(
      "matmul", {a, b}, std::move(out),
      [](const std::vector<Tensor>& in) { return raw_matmul(in[0], in[1]); },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&,
         const Tape::AccumFn& accum) {
        accum(0, raw_reduce_to_shape(raw_matmul(g, raw_transpose_lastdims(in[1])),
                                     in[0].shape()));
        accum(1, raw_reduce_to_shape(raw_matmul(raw_transpose_lastdims(in[0]), g),
                                     in[1].shape()));
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  chk(a, "add", "left operand");
  chk(b, "add", "right operand");
  if (a.shape() != b.shape()) {
    fail("add: shapes disagree: " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  }
  Tensor out = raw_add(a, b);
  return record_op(
      "add", {a, b}, std::move(out),
      [](const std::vector<Tensor>& in) { return raw_add(in[0], in[1]); },
      [](const Tensor& g, const std::vector<Tensor>&, const Tensor&,
         const Tape::AccumFn& accum) {
        accum(0, g);
        accum(1, g);
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  chk(a, "mul", "left operand");
  chk(b, "mul", "right operand");
  if (a.shape() != b.shape()) {
    fail("mul: shapes disagree: " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  }
  Tensor out = raw_mul(a, b);
  return record_op(
      "mul", {a, b}, std::move(out),
      [](const std::vector<Tensor>& in) { return raw_mul(in[0], in[1]); },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&,
         const Tape::AccumFn& accum) {
        accum(0, raw_mul(g, in[1]));
        accum(1, raw_mul(g, in[0]));
      });
}

Tensor scale(const Tensor& x, double c) {
  chk(x, "scale", "input");
  Tensor out = raw_scale(x, c);
  return record_op(
      "scale", {x}, std::move(out),
      [c](const std::vector<Tensor>& in) { return raw_scale(in[0], c); },
      [c](const Tensor& g, const std::vector<Tensor>&, const Tensor&,
          const Tape::AccumFn& accum) { accum(0, raw_scale(g, c)); });
}

Tensor relu(const Tensor& x) {
  chk(x, "relu", "input");
  Tensor out = raw_relu(x);
  return record_op(
      "relu", {x}, std::move(out),
      [](const std::vector<Tensor>& in) { return raw_relu(in[0]); },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&,
         const Tape::AccumFn& accum) {
        std::vector<double> dx(g.data());
        const auto& xd = in[0].data();
        for (size_t i = 0; i < dx.size(); ++i)
          if (xd[i] <= 0.0) dx[i] = 0.0;
        accum(0, Tensor::from(in[0].shape(), std::move(dx)));
      });
}

Tensor tanh(const Tensor& x) {
  chk(x, "tanh", "input");
  Tensor out = raw_tanh(x);
  return record_op(
      "tanh", {x}, std::move(out),
      [](const std::vector<Tensor>& in) { return raw_tanh(in[0]); },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor& y,
         const Tape::AccumFn& accum) {
        std::vector<double> dx(g.data());
        const auto& yd = y.data();
        for (size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - yd[i] * yd[i];
        accum(0, Tensor::from(in[0].shape(), std::move(dx)));
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  chk(x, "layer_norm", "input");
  chk(gamma, "layer_norm", "gamma");
  chk(beta, "layer_norm", "beta");
  if (x.rank() < 1) fail("layer_norm: input needs rank >= 1");
  const int64_t n = x.dim(-1);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    fail("layer_norm: affine parameters must have shape [" + std::to_string(n) +
         "], got gamma " + shape_str(gamma.shape()) + " and beta " +
         shape_str(beta.shape()));
  }
  Tensor out = raw_layer_norm(x, gamma, beta, eps);
  return record_op(
      "layer_norm", {x, gamma, beta}, std::move(out),
      [eps](const std::vector<Tensor>& in) {
        return raw_layer_norm(in[0], in[1], in[2], eps);
      },
      [eps](const Tensor& g, const std::vector<Tensor>& in, const Tensor&,
            const Tape::AccumFn& accum) {
        const Tensor& x = in[0];
        const Tensor& gamma = in[1];
        const int64_t n = x.dim(-1);
        const int64_t rows = x.numel() / n;
        const double* xd = x.data().data();
        const double* gd = g.data().data();
        const double* gm = gamma.data().data();
        std::vector<double> dx(static_cast<size_t>(x.numel()));
        std::vector<double> dgamma(static_cast<size_t>(n), 0.0);
        std::vector<double> dbeta(static_cast<size_t>(n), 0.0);
        std::vector<double> xhat(static_cast<size_t>(n));
        for (int64_t r = 0; r < rows; ++r) {
          const double* xp = xd + r * n;
          const double* gp = gd + r * n;
          double* dp = dx.data() + r * n;
          double mean = 0.0;
          for (int64_t i = 0; i < n; ++i) mean += xp[i];
          mean /= static_cast<double>(n);
          double var = 0.0;
          for (int64_t i = 0; i < n; ++i) {
            const double d = xp[i] - mean;
            var += d * d;
          }
          var /= static_cast<double>(n);
          const double inv = 1.0 / std::sqrt(var + eps);
          double m_gh = 0.0;      // mean over the row of gamma * g
          double m_gh_xh = 0.0;   // mean over the row of gamma * g * xhat
          for (int64_t i = 0; i < n; ++i) {
            xhat[static_cast<size_t>(i)] = (xp[i] - mean) * inv;
            const double gh = gm[i] * gp[i];
            m_gh += gh;
            m_gh_xh += gh * xhat[static_cast<size_t>(i)];
          }
          m_gh /= static_cast<double>(n);
          m_gh_xh /= static_cast<double>(n);
          for (int64_t i = 0; i < n; ++i) {
            const double gh = gm[i] * gp[i];
            dp[i] = (gh - m_gh - xhat[static_cast<size_t>(i)] * m_gh_xh) * inv;
            dgamma[static_cast<size_t>(i)] += gp[i] * xhat[static_cast<size_t>(i)];
            dbeta[static_cast<size_t>(i)] += gp[i];
          }
        }
        accum(0, Tensor::from(x.shape(), std::move(dx)));
        accum(1, Tensor::from({n}, std::move(dgamma)));
        accum(2, Tensor::from({n}, std::move(dbeta)));
      });
}

Tensor softmax_lastdim(const Tensor& z) {
  chk(z, "softmax_lastdim", "input");
  if (z.rank() < 1 || z.dim(-1) < 1) {
    fail("softmax_lastdim: needs a non-empty last axis, got " +
         shape_str(z.shape()));
  }
  Tensor out = raw_softmax_lastdim(z);
  return record_op(
      "softmax_lastdim", {z}, std::move(out),
      [](const std::vector<Tensor>& in) { return raw_softmax_lastdim(in[0]); },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor& y,
         const Tape::AccumFn& accum) {
        const int64_t n = y.dim(-1);
        const int64_t rows = y.numel() / n;
        const double* yd = y.data().data();
        const double* gd = g.data().data();
        std::vector<double> dz(static_cast<size_t>(y.numel()));
        for (int64_t r = 0; r < rows; ++r) {
          const double* yp = yd + r * n;
          const double* gp = gd + r * n;
          double* dp = dz.data() + r * n;
          double dot = 0.0;
          for (int64_t i = 0; i < n; ++i) dot += gp[i] * yp[i];
          for (int64_t i = 0; i < n; ++i) dp[i] = yp[i] * (gp[i] - dot);
        }
        accum(0, Tensor::from(in[0].shape(), std::move(dz)));
      });
}

Tensor sparsemax_lastdim(const Tensor& z) {
  chk(z, "sparsemax_lastdim", "input");
  if (z.rank() < 1 || z.dim(-1) < 1) {
    fail("sparsemax_lastdim: needs a non-empty last axis, got " +
         shape_str(z.shape()));
  }
  Tensor out = raw_sparsemax_lastdim(z);
  return record_op(
      "sparsemax_lastdim", {z}, std::move(out),
      [](const std::vector<Tensor>& in) { return raw_sparsemax_lastdim(in[0]); },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor& y,
         const Tape::AccumFn& accum) {
        // On the support the map is z - tau(z); off it the output is constant.
        // d/dz = S - (1/|support|) s s^T applied per row.
        const int64_t n = y.dim(-1);
        const int64_t rows = y.numel() / n;
        const double* yd = y.data().data();
        const double* gd = g.data().data();
        std::vector<double> dz(static_cast<size_t>(y.numel()));
        for (int64_t r = 0; r < rows; ++r) {
          const double* yp = yd + r * n;
          const double* gp = gd + r * n;
          double* dp = dz.data() + r * n;
          double sum = 0.0;
          int64_t support = 0;
          for (int64_t i = 0; i < n; ++i) {
            if (yp[i] > 0.0) {
              sum += gp[i];
              ++support;
            }
          }
          const double mean = support > 0 ? sum / static_cast<double>(support) : 0.0;
          for (int64_t i = 0; i < n; ++i) dp[i] = yp[i] > 0.0 ? gp[i] - mean : 0.0;
        }
        accum(0, Tensor::from(in[0].shape(), std::move(dz)));
      });
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_lastdim: needs at least one input");
  for (const Tensor& p : parts) chk(p, "concat_lastdim", "input");
  if (parts.size() == 1) return parts[0];
  const Shape& s0 = parts[0].shape();
  for (const Tensor& p : parts) {
    if (p.rank() != parts[0].rank()) {
      fail("concat_lastdim: rank mismatch: " + shape_str(s0) + " vs " +
           shape_str(p.shape()));
    }
    for (int i = 0; i < p.rank() - 1; ++i) {
      if (p.shape()[static_cast<size_t>(i)] != s0[static_cast<size_t>(i)]) {
        fail("concat_lastdim: leading extents disagree: " + shape_str(s0) +
             " vs " + shape_str(p.shape()));
      }
    }
  }
  Tensor out = raw_concat_lastdim(parts);
  std::vector<int64_t> lasts;
  lasts.reserve(parts.size());
  for (const Tensor& p : parts) lasts.push_back(p.dim(-1));
  return record_op(
      "concat_lastdim", parts, std::move(out),
      [](const std::vector<Tensor>& in) { return raw_concat_lastdim(in); },
      [lasts](const Tensor& g, const std::vector<Tensor>& in, const Tensor&,
              const Tape::AccumFn& accum) {
        int64_t total = 0;
        for (int64_t l : lasts) total += l;
        const int64_t rows = g.numel() / total;
        const double* gd = g.data().data();
        int64_t offset = 0;
        for (size_t j = 0; j < lasts.size(); ++j) {
          const int64_t pl = lasts[j];
          std::vector<double> dp(static_cast<size_t>(rows * pl));
          for (int64_t r = 0; r < rows; ++r) {
            std::copy(gd + r * total + offset, gd + r * total + offset + pl,
                      dp.begin() + static_cast<std::ptrdiff_t>(r * pl));
          }
          accum(j, Tensor::from(in[j].shape(), std::move(dp)));
          offset += pl;
        }
      });
}

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  chk(x, "permute", "input");
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) {
    fail("permute: axes count " + std::to_string(axes.size()) +
         " does not match rank " + std::to_string(r));
  }
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int a : axes) {
    if (a < 0 || a >= r || seen[static_cast<size_t>(a)]) {
      fail("permute: axes are not a permutation of 0.." + std::to_string(r - 1));
    }
    seen[static_cast<size_t>(a)] = true;
  }
  Tensor out = raw_permute(x, axes);
  std::vector<int> inverse(axes.size());
  for (size_t i = 0; i < axes.size(); ++i)
    inverse[static_cast<size_t>(axes[i])] = static_cast<int>(i);
  return record_op(
      "permute", {x}, std::move(out),
      [axes](const std::vector<Tensor>& in) { return raw_permute(in[0], axes); },
      [inverse](const Tensor& g, const std::vector<Tensor>&, const Tensor&,
                const Tape::AccumFn& accum) {
        accum(0, raw_permute(g, inverse));
      });
}

Tensor transpose_lastdims(const Tensor& x) {
  chk(x, "transpose_lastdims", "input");
  if (x.rank() < 2) {
    fail("transpose_lastdims: needs rank >= 2, got " + shape_str(x.shape()));
  }
  std::vector<int> axes(static_cast<size_t>(x.rank()));
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  chk(x, "reshape", "input");
  if (numel_of(new_shape) != x.numel()) {
    fail("reshape: element count changes from " + shape_str(x.shape()) + " to " +
         shape_str(new_shape));
  }
  Tensor out = Tensor::from(new_shape, x.data());
  return record_op(
      "reshape", {x}, std::move(out),
      [new_shape](const std::vector<Tensor>& in) {
        return Tensor::from(new_shape, in[0].data());
      },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&,
         const Tape::AccumFn& accum) {
        accum(0, Tensor::from(in[0].shape(), g.data()));
      });
}

Tensor broadcast_to(const Tensor& x, const Shape& target) {
  chk(x, "broadcast_to", "input");
  const int rx = x.rank();
  const int rt = static_cast<int>(target.size());
  bool ok = rx <= rt;
  if (ok) {
    for (int i = 0; i < rx; ++i) {
      const int64_t ex = x.shape()[static_cast<size_t>(i)];
      const int64_t et = target[static_cast<size_t>(rt - rx + i)];
      if (ex != et && ex != 1) ok = false;
    }
  }
  if (!ok) {
    fail("broadcast_to: " + shape_str(x.shape()) + " does not broadcast to " +
         shape_str(target));
  }
  Tensor out = raw_broadcast_to(x, target);
  return record_op(
      "broadcast_to", {x}, std::move(out),
      [target](const std::vector<Tensor>& in) {
        return raw_broadcast_to(in[0], target);
      },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&,
         const Tape::AccumFn& accum) {
        accum(0, raw_reduce_to_shape(g, in[0].shape()));
      });
}

Tensor mean_over_axis(const Tensor& x, int axis) {
  chk(x, "mean_over_axis", "input");
  const int a = normalize_axis(axis, x.rank(), "mean_over_axis");
  if (x.dim(a) < 1) {
    fail("mean_over_axis: axis " + std::to_string(axis) + " of " +
         shape_str(x.shape()) + " is empty");
  }
  Tensor out = raw_mean_over_axis(x, a);
  return record_op(
      "mean_over_axis", {x}, std::move(out),
      [a](const std::vector<Tensor>& in) { return raw_mean_over_axis(in[0], a); },
      [a](const Tensor& g, const std::vector<Tensor>& in, const Tensor&,
          const Tape::AccumFn& accum) {
        const Shape& xs = in[0].shape();
        const int r = in[0].rank();
        const int64_t extent = xs[static_cast<size_t>(a)];
        int64_t inner = 1;
        for (int i = a + 1; i < r; ++i) inner *= xs[static_cast<size_t>(i)];
        const int64_t outer = in[0].numel() / (extent * inner);
        const double* gd = g.data().data();
        const double inv = 1.0 / static_cast<double>(extent);
        std::vector<double> dx(static_cast<size_t>(in[0].numel()));
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t e = 0; e < extent; ++e) {
            const double* gp = gd + o * inner;
            double* dp = dx.data() + (o * extent + e) * inner;
            for (int64_t i = 0; i < inner; ++i) dp[i] = gp[i] * inv;
          }
        }
        accum(0, Tensor::from(xs, std::move(dx)));
      });
}

Tensor sum_all(const Tensor& x) {
  chk(x, "sum_all", "input");
  Tensor out = raw_sum_all(x);
  return record_op(
      "sum_all", {x}, std::move(out),
      [](const std::vector<Tensor>& in) { return raw_sum_all(in[0]); },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor&,
         const Tape::AccumFn& accum) {
        accum(0, Tensor::full(in[0].shape(), g.scalar_value()));
      });
}

Tensor l2_normalize(const Tensor& x) {
  chk(x, "l2_normalize", "input");
  Tensor out = raw_l2_normalize(x);
  return record_op(
      "l2_normalize", {x}, std::move(out),
      [](const std::vector<Tensor>& in) { return raw_l2_normalize(in[0]); },
      [](const Tensor& g, const std::vector<Tensor>& in, const Tensor& y,
         const Tape::AccumFn& accum) {
        double sq = 0.0;
        for (double v : in[0].data()) sq += v * v;
        const double r = std::sqrt(sq);
        const auto& gd = g.data();
        std::vector<double> dx(gd.size());
        if (r >= kL2Floor) {
          const auto& yd = y.data();
          double dot = 0.0;
          for (size_t i = 0; i < gd.size(); ++i) dot += yd[i] * gd[i];
          for (size_t i = 0; i < gd.size(); ++i) dx[i] = (gd[i] - yd[i] * dot) / r;
        } else {
          // Degenerate zero vector: the forward pass divided by the floor
          // constant, so the map is linear there.
          for (size_t i = 0; i < gd.size(); ++i) dx[i] = gd[i] / kL2Floor;
        }
        accum(0, Tensor::from(in[0].shape(), std::move(dx)));
      });
}

Tensor cross_entropy_logits(const Tensor& logits,
                            const std::vector<int64_t>& labels) {
  chk(logits, "cross_entropy_logits", "logits");
  if (logits.rank() != 2) {
    fail("cross_entropy_logits: logits must be rank 2 [batch, classes], got " +
         shape_str(logits.shape()));
  }
  const int64_t B = logits.dim(0);
  const int64_t S = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != B) {
    fail("cross_entropy_logits: " + std::to_string(labels.size()) +
         " labels for batch of " + std::to_string(B));
  }
  for (int64_t b = 0; b < B; ++b) {
    const int64_t l = labels[static_cast<size_t>(b)];
    if (l < 0 || l >= S) {
      fail("cross_entropy_logits: label " + std::to_string(l) +
           " outside [0, " + std::to_string(S) + ")");
    }
  }
  Tensor out = raw_cross_entropy_logits(logits, labels);
  return record_op(
      "cross_entropy_logits", {logits}, std::move(out),
      [labels](const std::vector<Tensor>& in) {
        return raw_cross_entropy_logits(in[0], labels);
      },
      [labels](const Tensor& g, const std::vector<Tensor>& in, const Tensor&,
               const Tape::AccumFn& accum) {
        const Tensor probs = raw_softmax_lastdim(in[0]);
        const int64_t B = in[0].dim(0);
        const int64_t S = in[0].dim(1);
        const double gs = g.scalar_value() / static_cast<double>(B);
        std::vector<double> dz(probs.data());
        for (int64_t b = 0; b < B; ++b) {
          double* dp = dz.data() + b * S;
          dp[labels[static_cast<size_t>(b)]] -= 1.0;
          for (int64_t i = 0; i < S; ++i) dp[i] *= gs;
        }
        accum(0, Tensor::from(in[0].shape(), std::move(dz)));
      });
}

Tensor take_axis0(const Tensor& x, const std::vector<int64_t>& indices) {
  chk(x, "take_axis0", "input");
  if (x.rank() < 1) fail("take_axis0: input needs rank >= 1");
  if (x.on_tape() && x.requires_grad()) {
    throw std::logic_error("take_axis0: selection helper has no gradient rule; "
                           "apply it before recording");
  }
  const int64_t extent = x.dim(0);
  const int64_t slice = x.rank() == 1 ? 1 : x.numel() / extent;
  Shape os = x.shape();
  os[0] = static_cast<int64_t>(indices.size());
  std::vector<double> out(indices.size() * static_cast<size_t>(slice));
  const double* xd = x.data().data();
  for (size_t j = 0; j < indices.size(); ++j) {
    const int64_t idx = indices[j];
    if (idx < 0 || idx >= extent) {
      fail("take_axis0: index " + std::to_string(idx) + " outside [0, " +
           std::to_string(extent) + ")");
    }
    std::copy(xd + idx * slice, xd + (idx + 1) * slice,
              out.begin() + static_cast<std::ptrdiff_t>(j) * slice);
  }
  return Tensor::from(std::move(os), std::move(out));
}

}  // namespace stbasv::ops
