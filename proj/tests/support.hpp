// Copyright (c) 2026, the geossl authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "geossl/autodiff.hpp"
#include "geossl/rng.hpp"
#include "geossl/tensor.hpp"

namespace geossl::testing {

inline Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, float lo = -1.0f,
                            float hi = 1.0f) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_f(lo, hi);
  return t;
}

/// Random tensor with coordinates nudged away from zero, for ops with a kink
/// at the origin (relu).
inline Tensor random_tensor_off_kink(std::vector<int64_t> shape, Rng& rng, float margin) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (int64_t i = 0; i < t.numel(); ++i) {
    float v = t[i];
    if (std::abs(v) < margin) t[i] = v < 0 ? v - margin : v + margin;
  }
  return t;
}

inline Tensor random_unit_rows(int64_t n, int64_t d, Rng& rng) {
  Tensor t({n, d});
  for (int64_t i = 0; i < n; ++i) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        t[i * d + j] = static_cast<float>(rng.normal());
        norm += static_cast<double>(t[i * d + j]) * t[i * d + j];
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-3);
    for (int64_t j = 0; j < d; ++j) t[i * d + j] = static_cast<float>(t[i * d + j] / norm);
  }
  return t;
}

struct GradCheckResult {
  bool ok = true;
  double worst_rel = 0.0;
  std::string where;
};

/// Central-difference gradient check. The scalar loss is rebuilt from
/// scratch at each perturbed point; the comparison itself runs in double.
inline GradCheckResult grad_check(
    std::vector<Tensor> inputs,
    const std::function<Var(Tape&, const std::vector<Var>&)>& build, double eps = 2e-2,
    double tol = 1e-3, double denom_floor = 0.05) {
  GradCheckResult res;

  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
  Var loss = build(tape, vars);
  tape.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(inputs.size());
  for (Var v : vars) analytic.push_back(tape.grad_of(v));

  auto eval = [&](const std::vector<Tensor>& at) {
    Tape t;
    std::vector<Var> vs;
    for (const auto& in : at) vs.push_back(t.leaf(in, false));
    return static_cast<double>(t.value(build(t, vs))[0]);
  };

  for (size_t i = 0; i < inputs.size(); ++i) {
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      auto shifted = [&](double d) {
        std::vector<Tensor> at = inputs;
        at[i][j] += static_cast<float>(d);
        return eval(at);
      };
      // Five-point stencil: truncation falls from O(h^2) to O(h^4).
      double fd = (8.0 * (shifted(eps) - shifted(-eps)) -
                   (shifted(2.0 * eps) - shifted(-2.0 * eps))) /
                  (12.0 * eps);
      double a = analytic[i][j];
      double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), denom_floor});
      if (rel > res.worst_rel) {
        res.worst_rel = rel;
        res.where = "input " + std::to_string(i) + " coord " + std::to_string(j);
      }
      if (rel > tol) res.ok = false;
    }
  }
  return res;
}

/// Independent scalar-loop InfoNCE: (K+1)-way softmax cross-entropy with the
/// positive at index 0, all in double.
inline double info_nce_oracle(const Tensor& q, const Tensor& k_pos, const Tensor& queue,
                              double tau) {
  int64_t b = q.dim(0), d = q.dim(1), kn = queue.dim(0);
  double total = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    std::vector<double> scores(static_cast<size_t>(kn + 1));
    double s0 = 0.0;
    for (int64_t j = 0; j < d; ++j) s0 += static_cast<double>(q[i * d + j]) * k_pos[i * d + j];
    scores[0] = s0 / tau;
    for (int64_t n = 0; n < kn; ++n) {
      double s = 0.0;
      for (int64_t j = 0; j < d; ++j) s += static_cast<double>(q[i * d + j]) * queue[n * d + j];
      scores[static_cast<size_t>(n + 1)] = s / tau;
    }
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double lse = 0.0;
    for (double s : scores) lse += std::exp(s - mx);
    lse = mx + std::log(lse);
    total += lse - scores[0];
  }
  return total / static_cast<double>(b);
}

/// Independent scalar-loop multi-crop distillation loss in double.
inline double dino_oracle(const std::vector<Tensor>& student_logits,
                          const std::vector<Tensor>& teacher_probs, double tau_s) {
  double total = 0.0;
  int pairs = 0;
  for (size_t g = 0; g < teacher_probs.size(); ++g) {
    for (size_t s = 0; s < student_logits.size(); ++s) {
      if (s == g) continue;
      const Tensor& logits = student_logits[s];
      const Tensor& probs = teacher_probs[g];
      int64_t n = logits.dim(0), p = logits.dim(1);
      double pair_loss = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int64_t j = 0; j < p; ++j)
          mx = std::max(mx, static_cast<double>(logits[i * p + j]) / tau_s);
        double lse = 0.0;
        for (int64_t j = 0; j < p; ++j)
          lse += std::exp(static_cast<double>(logits[i * p + j]) / tau_s - mx);
        lse = mx + std::log(lse);
        for (int64_t j = 0; j < p; ++j)
          pair_loss += static_cast<double>(probs[i * p + j]) *
                       (lse - static_cast<double>(logits[i * p + j]) / tau_s);
      }
      total += pair_loss / static_cast<double>(n);
      ++pairs;
    }
  }
  return total / pairs;
}

}  // namespace geossl::testing
