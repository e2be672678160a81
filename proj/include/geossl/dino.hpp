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

#include "geossl/contrastive.hpp"

namespace geossl {

/// Maps embeddings to pseudo-class logits. Optionally weight-normalized:
/// unit-norm prototype rows scaled by a learned per-class gain.
class PseudoClassHead {
 public:
  PseudoClassHead(int in_dim, int64_t pseudo_classes, bool weight_norm, uint64_t seed);

  Var forward(Tape& t, Var x) const;
  std::vector<Parameter*> parameters();
  int64_t pseudo_classes() const { return classes_; }
  void copy_state_from(const PseudoClassHead& other);
  void set_trainable(bool trainable);

 private:
  int in_dim_;
  int64_t classes_;
  bool weight_norm_;
  std::vector<std::unique_ptr<Parameter>> params_;
};

struct DinoConfig {
  int64_t steps = 1000;
  int batch_size = 16;
  double base_lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double tau_student = 0.1;
  double tau_teacher = 0.04;
  double teacher_momentum = 0.996;
  double center_momentum = 0.9;
  int64_t pseudo_classes = 1024;
  int n_local = 4;
  int global_px = 32;
  int local_px = 16;
  bool weight_norm_head = true;
  double clip_norm = 5.0;
  LrScheduleKind schedule = LrScheduleKind::cosine;
  uint64_t seed = 1;

  void validate(const EncoderConfig& enc) const;
  AugmentRecipe recipe() const { return AugmentRecipe::dino(global_px, local_px, n_local); }
  nlohmann::json to_json() const;
};

/// Student/teacher pair with center vector. The teacher never receives
/// gradients; it moves only through the EMA update.
struct DistillationState {
  std::unique_ptr<Encoder> student;
  std::unique_ptr<Encoder> teacher;
  std::unique_ptr<PseudoClassHead> student_head;
  std::unique_ptr<PseudoClassHead> teacher_head;
  Tensor center;  // [pseudo_classes]
  DinoConfig cfg;

  static DistillationState make(const EncoderConfig& enc_cfg, const DinoConfig& cfg,
                                uint64_t seed);

  std::vector<Parameter*> student_params();
  std::vector<Parameter*> teacher_params();
};

/// softmax((logits − c) / τ_t) rows; computed in double, rows sum to 1.
Tensor teacher_distribution(const Tensor& logits, const Tensor& center, double tau_t);

/// Mean cross-entropy over (teacher global crop g, student crop s) pairs
/// with s ≠ g; teacher probabilities are constants. Student logits are
/// tempered by τ_s inside.
Var dino_loss(Tape& t, const std::vector<Var>& student_logits,
              const std::vector<Tensor>& teacher_probs, double tau_s);

/// c ← m·c + (1−m)·batch_mean(teacher logits)
void center_update(Tensor& center, const Tensor& teacher_logits, double m_center);

struct DistillStepStats {
  float loss = 0.0f;
  double grad_norm = 0.0;
  double teacher_entropy = 0.0;  // mean entropy of teacher distributions
};

DistillStepStats distill_step(const std::vector<Tensor>& images, DistillationState& state,
                              SgdOptimizer& opt, double lr_now, uint64_t step_seed,
                              bool update_center = true);

class DinoTrainer {
 public:
  DinoTrainer(DinoConfig cfg, EncoderConfig enc_cfg);

  std::vector<TrainLogRow> run(const BatchSource& source);
  double lr_at(int64_t step) const;

  DistillationState& state() { return state_; }
  Encoder& student_encoder() { return *state_.student; }
  const DinoConfig& config() const { return cfg_; }

  void save_checkpoint(const std::filesystem::path& path, int64_t step) const;

 private:
  DinoConfig cfg_;
  EncoderConfig enc_cfg_;
  DistillationState state_;
  SgdOptimizer opt_;
};

}  // namespace geossl
