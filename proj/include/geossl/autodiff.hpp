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

#include <array>
#include <deque>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "geossl/tensor.hpp"

namespace geossl {

/// Trainable tensor with its gradient accumulator. Gradients are zeroed at
/// step boundaries by the optimizer.
struct Parameter {
  Tensor value;
  Tensor grad;
  std::string name;
  bool trainable = true;

  Parameter() = default;
  Parameter(Tensor v, std::string n, bool train = true)
      : value(std::move(v)), grad(Tensor::zeros(value.shape())), name(std::move(n)), trainable(train) {}

  void zero_grad() { grad.fill(0.0f); }
};

/// Handle to a node on a Tape.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Append-only reverse-mode autodiff tape over whole-tensor operations.
/// Nodes are created in topological order, so backward is a single reverse
/// sweep. Single-threaded by design; results are bitwise deterministic.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Insert a constant or differentiable leaf.
  Var leaf(Tensor value, bool requires_grad = false);

  /// Insert (or reuse) a leaf bound to an external parameter. Repeated calls
  /// with the same parameter return the same node, so gradients from several
  /// forward passes accumulate. Respects Parameter::trainable.
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() target w.r.t. node v (zeros if none).
  Tensor grad_of(Var v) const;
  bool requires_grad(Var v) const;

  // --- elementwise ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, float c);
  Var relu(Var a);
  Var gelu(Var a);

  // --- linear algebra ---
  Var matmul(Var a, Var b);     // [m,k] x [k,n] -> [m,n]
  Var matmul_nt(Var a, Var b);  // [m,k] x [n,k]^T -> [m,n]
  Var bmm(Var a, Var b);        // [g,m,k] x [g,k,n] -> [g,m,n]
  Var bmm_nt(Var a, Var b);     // [g,m,k] x [g,n,k]^T -> [g,m,n]
  Var add_bias(Var x, Var bias);  // [n,k] + [k]

  // --- shape ---
  Var view(Var x, std::vector<int64_t> shape);
  Var concat_cols(Var a, Var b);  // [n,p] ++ [n,q] -> [n,p+q]
  Var slice_rows(Var x, int64_t start, int64_t count);  // [n,d] -> [count,d]
  Var patchify(Var x, int patch);  // [b,h,w,c] -> [b,t,patch*patch*c]

  // --- reductions / normalization ---
  Var mean_axis1(Var x);         // [n,t,d] -> [n,d]
  Var sum(Var x);                // -> [1]
  Var mean(Var x);               // -> [1]
  Var row_dot(Var a, Var b);     // [n,d],[n,d] -> [n,1]
  /// Mean of scalar nodes, accumulated in double.
  Var mean_scalars(const std::vector<Var>& xs);
  Var l2_normalize_rows(Var x, float eps = 1e-12f);
  Var softmax_rows(Var x);
  Var layer_norm(Var x, Var gamma, Var beta, float eps = 1e-5f);

  // --- convolution ---
  /// x: [b,h,w,c] NHWC, w: [k*k*c, f], bias: [f]; zero padding.
  Var conv2d(Var x, Var w, Var bias, int kernel, int stride, int pad);

  // --- losses ---
  /// Mean softmax cross-entropy against integer labels. Log-sum-exp is
  /// evaluated in double precision.
  Var softmax_xent(Var logits, std::vector<int64_t> labels);
  /// Mean over rows of sum_j t_ij * (logsumexp_i - s_ij) with
  /// s_ij = logit_ij * inv_temp; targets are constants. Tempering happens
  /// inside, in double, so no precision is lost to an intermediate store.
  Var soft_xent(Var logits, Tensor target_probs, double inv_temp = 1.0);

  /// Fused InfoNCE: mean over rows of the (K+1)-way softmax cross-entropy
  /// with the positive at index 0. Dot products, temperature scaling and
  /// log-sum-exp all run in double; queue rows are constants.
  Var info_nce(Var q, Var k_pos, Tensor queue, double tau);

  /// Fused multi-crop distillation loss: mean over (teacher g, student s),
  /// s != g, of soft cross-entropy between teacher_probs[g] and the
  /// inv_temp-tempered student softmax. The whole pair average runs in
  /// double; teacher distributions are constants.
  Var multicrop_soft_xent(const std::vector<Var>& student_logits,
                          const std::vector<Tensor>& teacher_probs, double inv_temp);

  /// Reverse sweep from a scalar node. May be called once per tape.
  void backward(Var loss);

  /// After backward: add leaf gradients into their bound Parameters' grad.
  void sync_param_grads();

  /// When enabled, every op result is checked for NaN/Inf.
  void set_check_finite(bool on) { check_finite_ = on; }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::array<int32_t, 3> in{-1, -1, -1};
    std::function<void(Tape&, Node&)> back;
    Tensor aux;                  // saved forward intermediates
    std::vector<int64_t> iaux;   // saved integer attributes
    Parameter* bound = nullptr;
  };

  Var push(Node node);
  Node& at(Var v);
  const Node& at(Var v) const;
  bool wants(int32_t id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  Tensor& grad_buf(int32_t id);

  std::deque<Node> nodes_;  // deque: references stay valid across push
  std::unordered_map<Parameter*, int32_t> param_map_;
  bool check_finite_ = false;
  bool backward_done_ = false;

  friend struct TapeOps;
};

}  // namespace geossl
