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

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "stbasv/tensor.hpp"

namespace stbasv {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double tol = 0.0;
  bool pass = false;
};

// Compares the taped gradient of the scalar function `f` at `x` against
// central finite differences, coordinate by coordinate. Relative error is
// |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                                  const Tensor& x, double eps = 1e-5,
                                  double tol = 1e-4) {
  Tape tape;
  Tensor xw = tape.watch(x);
  Tensor y = f(xw);
  if (y.numel() != 1) {
    throw std::invalid_argument("grad_check: function must be scalar-valued, got " +
                                shape_str(y.shape()));
  }
  tape.backward(y);
  const Tensor analytic = tape.gradient(xw);

  GradCheckReport report;
  report.tol = tol;
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> plus(x.data());
    std::vector<double> minus(x.data());
    plus[static_cast<size_t>(i)] += eps;
    minus[static_cast<size_t>(i)] -= eps;
    const double fp = f(Tensor::from(x.shape(), std::move(plus))).scalar_value();
    const double fm = f(Tensor::from(x.shape(), std::move(minus))).scalar_value();
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) /
                       std::max({1.0, std::abs(a), std::abs(numeric)});
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace stbasv
