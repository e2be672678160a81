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

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "geossl/augment.hpp"
#include "geossl/nn.hpp"

namespace geossl {

enum class Workflow { v1, v2, dino, supervised };

std::string to_string(Workflow w);
Workflow workflow_from_string(const std::string& s);

/// Toggles contract checks (embedding norms, stop-gradient assertions,
/// holdout membership). Cheap at desk scale; on by default.
void set_debug_checks(bool on);
bool debug_checks();

/// FIFO buffer of past key embeddings. Enqueueing a batch of size B
/// overwrites exactly the B oldest slots.
class NegativeQueue {
 public:
  NegativeQueue(int64_t capacity, int64_t dim);

  void enqueue(const Tensor& keys);  // [b, dim], unit rows

  const Tensor& entries() const { return entries_; }
  int64_t capacity() const { return capacity_; }
  int64_t dim() const { return dim_; }
  int64_t write_cursor() const { return cursor_; }
  int64_t occupancy() const { return std::min(filled_, capacity_); }
  bool full() const { return filled_ >= capacity_; }

 private:
  int64_t capacity_;
  int64_t dim_;
  int64_t cursor_ = 0;
  int64_t filled_ = 0;
  Tensor entries_;
};

enum class HeadKind { identity, linear, mlp2 };

/// Projection from encoder embeddings into the contrastive space. Identity
/// for the v1 recipe, a 2-layer MLP for v2.
class ProjectionHead {
 public:
  ProjectionHead() = default;  // identity
  ProjectionHead(HeadKind kind, int in_dim, int out_dim, uint64_t seed);

  Var forward(Tape& t, Var x) const;
  std::vector<Parameter*> parameters();
  int out_dim() const { return out_dim_ == 0 ? in_dim_ : out_dim_; }
  HeadKind kind() const { return kind_; }
  void copy_state_from(const ProjectionHead& other);
  void set_trainable(bool trainable);

 private:
  HeadKind kind_ = HeadKind::identity;
  int in_dim_ = 0;
  int out_dim_ = 0;
  std::vector<std::unique_ptr<Parameter>> params_;
};

/// Query/key encoder pair. The key side never receives gradients and is
/// updated only through momentum_update.
struct MomentumPair {
  std::unique_ptr<Encoder> query_encoder;
  std::unique_ptr<Encoder> key_encoder;
  ProjectionHead query_head;
  ProjectionHead key_head;
  double momentum = 0.999;

  static MomentumPair make(const EncoderConfig& enc_cfg, HeadKind head, int proj_dim,
                           double momentum, uint64_t seed);

  std::vector<Parameter*> query_params();
  std::vector<Parameter*> key_params();

  /// L2-normalized projected embedding through the query / key path.
  Var embed_query(Tape& t, Var images);
  Var embed_key(Tape& t, Var images);
};

/// θ_k ← m·θ_k + (1−m)·θ_q, elementwise over every parameter tensor.
/// Arithmetic is carried out in double before the float32 store.
void momentum_update(std::span<Parameter* const> key_params,
                     std::span<Parameter* const> query_params, double m);
void momentum_update(MomentumPair& pair);

/// Mean over the batch of -log(exp(q·k+/τ) / (exp(q·k+/τ) + Σ exp(q·n/τ))).
/// Queue entries are constants; gradients flow to q and k_pos (when they
/// require it). Rows must be unit norm within 1e-3 when debug checks are on.
Var info_nce_loss(Tape& t, Var q, Var k_pos, const Tensor& queue, double tau);

struct PretrainStepStats {
  float loss = 0.0f;
  double grad_norm = 0.0;
  bool warmup = false;  // queue not yet full: keys-only pass, no update
};

/// One momentum-contrast step: two views, query/key embeddings, InfoNCE,
/// SGD on the query side, momentum update, enqueue.
PretrainStepStats pretrain_step(const std::vector<Tensor>& images, MomentumPair& pair,
                                NegativeQueue& queue, const AugmentRecipe& recipe,
                                SgdOptimizer& opt, double lr_now, double tau, double clip_norm,
                                uint64_t step_seed);

enum class LrScheduleKind { constant, cosine, step };

struct PretrainConfig {
  Workflow workflow = Workflow::v2;
  int64_t steps = 2000;
  int batch_size = 32;
  double base_lr = 0.06;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double tau = 0.2;
  int64_t queue_size = 1024;
  double key_momentum = 0.999;
  double clip_norm = 5.0;
  LrScheduleKind schedule = LrScheduleKind::cosine;
  int view_px = 32;
  uint64_t seed = 1;

  static PretrainConfig v1_defaults();
  static PretrainConfig v2_defaults();

  void validate() const;
  AugmentRecipe recipe() const;
  nlohmann::json to_json() const;
};

/// Supplies raw [h,w,3] image tensors for a draw ordinal. Ordinals are
/// consumed in a fixed order so runs are reproducible.
using BatchSource = std::function<std::vector<Tensor>(int64_t ordinal)>;

struct TrainLogRow {
  int64_t step = 0;
  float loss = 0.0f;
  double lr = 0.0;
};

void write_loss_csv(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows);

class ContrastiveTrainer {
 public:
  ContrastiveTrainer(PretrainConfig cfg, EncoderConfig enc_cfg);

  /// Prefills the queue with queue_size/batch_size forward-only key batches,
  /// then runs cfg.steps gradient steps.
  std::vector<TrainLogRow> run(const BatchSource& source);

  double lr_at(int64_t step) const;

  Encoder& query_encoder() { return *pair_.query_encoder; }
  MomentumPair& pair() { return pair_; }
  NegativeQueue& queue() { return queue_; }
  const PretrainConfig& config() const { return cfg_; }

  void save_checkpoint(const std::filesystem::path& path, int64_t step) const;

 private:
  PretrainConfig cfg_;
  EncoderConfig enc_cfg_;
  MomentumPair pair_;
  NegativeQueue queue_;
  SgdOptimizer opt_;
};

}  // namespace geossl
