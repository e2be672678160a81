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

#include "geossl/dino.hpp"

#include <cmath>

#include "geossl/error.hpp"

namespace geossl {

PseudoClassHead::PseudoClassHead(int in_dim, int64_t pseudo_classes, bool weight_norm,
                                 uint64_t seed)
    : in_dim_(in_dim), classes_(pseudo_classes), weight_norm_(weight_norm) {
  if (pseudo_classes < 2) throw ConfigError("pseudo_classes must be >= 2");
  if (in_dim < 1) throw ConfigError("head input dim must be positive");
  Rng rng(mix_seed(seed, 0x70636C73));
  // Prototype rows: [P, in]
  params_.push_back(std::make_unique<Parameter>(
      kaiming_uniform({pseudo_classes, in_dim}, in_dim, rng), "pseudo_head.w"));
  if (weight_norm_)
    params_.push_back(std::make_unique<Parameter>(Tensor::full({pseudo_classes}, 1.0f),
                                                  "pseudo_head.gain"));
}

Var PseudoClassHead::forward(Tape& t, Var x) const {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 2 || xv.dim(1) != in_dim_) throw ShapeError("pseudo head: bad input shape");
  int64_t rows = xv.dim(0);
  Var w = t.param(*params_[0]);
  if (!weight_norm_) return t.matmul_nt(x, w);
  Var wn = t.l2_normalize_rows(w);
  Var logits = t.matmul_nt(x, wn);  // [n, P]
  // Per-class gain applied column-wise via a rank-1 broadcast.
  Var gain = t.view(t.param(*params_[1]), {1, classes_});
  Tensor ones({rows, 1});
  ones.fill(1.0f);
  Var tiled = t.matmul(t.leaf(std::move(ones), false), gain);
  return t.mul(logits, tiled);
}

std::vector<Parameter*> PseudoClassHead::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

void PseudoClassHead::copy_state_from(const PseudoClassHead& other) {
  if (params_.size() != other.params_.size()) throw ConfigError("pseudo heads differ");
  for (size_t i = 0; i < params_.size(); ++i) params_[i]->value = other.params_[i]->value;
}

void PseudoClassHead::set_trainable(bool trainable) {
  for (auto& p : params_) p->trainable = trainable;
}

// ---------------------------------------------------------------------------

void DinoConfig::validate(const EncoderConfig& enc) const {
  if (steps < 1 || batch_size < 1) throw ConfigError("steps and batch_size must be positive");
  if (!(tau_student > 0.0) || !(tau_teacher > 0.0)) throw ConfigError("temperatures must be positive");
  if (tau_teacher >= tau_student)
    throw ConfigError("teacher temperature must be sharper (smaller) than the student's");
  if (teacher_momentum < 0.0 || teacher_momentum > 1.0 || center_momentum < 0.0 ||
      center_momentum > 1.0)
    throw ConfigError("EMA coefficients must lie in [0,1]");
  if (pseudo_classes < 2) throw ConfigError("pseudo_classes must be >= 2");
  if (n_local < 0) throw ConfigError("n_local must be >= 0");
  if (local_px >= global_px) throw ConfigError("local crops must be smaller than global crops");
  if (enc.architecture == Architecture::small_conv && local_px != global_px && n_local > 0)
    throw ConfigError("small_conv cannot mix crop sizes; use tiny_transformer for multi-crop");
  SGDConfig sgd{base_lr, momentum, weight_decay, batch_size};
  sgd.validate();
}

nlohmann::json DinoConfig::to_json() const {
  return nlohmann::json{{"steps", steps},
                        {"batch_size", batch_size},
                        {"base_lr", base_lr},
                        {"momentum", momentum},
                        {"weight_decay", weight_decay},
                        {"tau_student", tau_student},
                        {"tau_teacher", tau_teacher},
                        {"teacher_momentum", teacher_momentum},
                        {"center_momentum", center_momentum},
                        {"pseudo_classes", pseudo_classes},
                        {"n_local", n_local},
                        {"global_px", global_px},
                        {"local_px", local_px},
                        {"weight_norm_head", weight_norm_head},
                        {"clip_norm", clip_norm},
                        {"seed", seed}};
}

DistillationState DistillationState::make(const EncoderConfig& enc_cfg, const DinoConfig& cfg,
                                          uint64_t seed) {
  cfg.validate(enc_cfg);
  DistillationState s;
  s.cfg = cfg;
  s.student = make_encoder(enc_cfg, seed);
  s.teacher = make_encoder(enc_cfg, seed);
  s.teacher->copy_state_from(*s.student);
  s.student_head = std::make_unique<PseudoClassHead>(enc_cfg.embedding_dim, cfg.pseudo_classes,
                                                     cfg.weight_norm_head, seed);
  s.teacher_head = std::make_unique<PseudoClassHead>(enc_cfg.embedding_dim, cfg.pseudo_classes,
                                                     cfg.weight_norm_head, seed);
  s.teacher_head->copy_state_from(*s.student_head);
  s.teacher->set_trainable(false);
  s.teacher_head->set_trainable(false);
  s.center = Tensor::zeros({cfg.pseudo_classes});
  return s;
}

std::vector<Parameter*> DistillationState::student_params() {
  auto out = student->parameters();
  for (Parameter* p : student_head->parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter*> DistillationState::teacher_params() {
  auto out = teacher->parameters();
  for (Parameter* p : teacher_head->parameters()) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------

Tensor teacher_distribution(const Tensor& logits, const Tensor& center, double tau_t) {
  if (!(tau_t > 0.0)) throw ConfigError("teacher temperature must be positive");
  if (logits.rank() != 2 || center.rank() != 1 || logits.dim(1) != center.dim(0))
    throw ShapeError("teacher_distribution: logits [n,P] and center [P] required");
  int64_t n = logits.dim(0), p = logits.dim(1);
  Tensor out({n, p});
  for (int64_t i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int64_t j = 0; j < p; ++j)
      mx = std::max(mx, (static_cast<double>(logits[i * p + j]) - center[j]) / tau_t);
    double s = 0.0;
    std::vector<double> e(static_cast<size_t>(p));
    for (int64_t j = 0; j < p; ++j) {
      double z = (static_cast<double>(logits[i * p + j]) - center[j]) / tau_t;
      e[static_cast<size_t>(j)] = std::exp(z - mx);
      s += e[static_cast<size_t>(j)];
    }
    for (int64_t j = 0; j < p; ++j)
      out[i * p + j] = static_cast<float>(e[static_cast<size_t>(j)] / s);
  }
  return out;
}

Var dino_loss(Tape& t, const std::vector<Var>& student_logits,
              const std::vector<Tensor>& teacher_probs, double tau_s) {
  if (teacher_probs.size() < 2) throw ConfigError("dino_loss requires at least 2 global crops");
  if (student_logits.size() < teacher_probs.size())
    throw ConfigError("student must see every global crop");
  if (!(tau_s > 0.0)) throw ConfigError("student temperature must be positive");

  return t.multicrop_soft_xent(student_logits, teacher_probs, 1.0 / tau_s);
}

void center_update(Tensor& center, const Tensor& teacher_logits, double m_center) {
  if (m_center < 0.0 || m_center > 1.0) throw ConfigError("center momentum must lie in [0,1]");
  if (teacher_logits.rank() != 2 || teacher_logits.dim(1) != center.dim(0))
    throw ShapeError("center_update: logits [n,P] required");
  int64_t n = teacher_logits.dim(0), p = teacher_logits.dim(1);
  if (n == 0) throw ConfigError("center_update: empty batch");
  for (int64_t j = 0; j < p; ++j) {
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += teacher_logits[i * p + j];
    mean /= static_cast<double>(n);
    center[j] = static_cast<float>(m_center * static_cast<double>(center[j]) +
                                   (1.0 - m_center) * mean);
  }
}

DistillStepStats distill_step(const std::vector<Tensor>& images, DistillationState& state,
                              SgdOptimizer& opt, double lr_now, uint64_t step_seed,
                              bool update_center) {
  if (images.empty()) throw ConfigError("distill_step: empty batch");
  MultiCropBatch crops = make_multicrop_batch(images, state.cfg.recipe(), step_seed);

  Tape t;
  // Teacher path: global crops only, no gradient.
  std::vector<Tensor> teacher_probs;
  std::vector<Tensor> teacher_logit_tensors;
  for (const Tensor& gb : crops.global_batches) {
    Var x = t.leaf(gb, false);
    Var logits = state.teacher_head->forward(t, state.teacher->forward(t, x));
    teacher_logit_tensors.push_back(t.value(logits));
    teacher_probs.push_back(teacher_distribution(t.value(logits), state.center, state.cfg.tau_teacher));
  }

  // Student path: all crops.
  std::vector<Var> student_logits;
  for (const Tensor& gb : crops.global_batches) {
    Var x = t.leaf(gb, false);
    student_logits.push_back(state.student_head->forward(t, state.student->forward(t, x)));
  }
  for (const Tensor& lb : crops.local_batches) {
    Var x = t.leaf(lb, false);
    student_logits.push_back(state.student_head->forward(t, state.student->forward(t, x)));
  }

  Var loss = dino_loss(t, student_logits, teacher_probs, state.cfg.tau_student);

  DistillStepStats stats;
  stats.loss = t.value(loss)[0];

  double entropy = 0.0;
  int64_t rows = 0;
  for (const Tensor& probs : teacher_probs) {
    int64_t n = probs.dim(0), p = probs.dim(1);
    for (int64_t i = 0; i < n; ++i) {
      double h = 0.0;
      for (int64_t j = 0; j < p; ++j) {
        double q = probs[i * p + j];
        if (q > 0.0) h -= q * std::log(q);
      }
      entropy += h;
    }
    rows += n;
  }
  stats.teacher_entropy = rows > 0 ? entropy / static_cast<double>(rows) : 0.0;

  opt.zero_grad();
  t.backward(loss);
  t.sync_param_grads();
  auto sp = state.student_params();
  stats.grad_norm = clip_global_norm(sp, state.cfg.clip_norm);
  opt.step(lr_now);

  auto tp = state.teacher_params();
  momentum_update(std::span<Parameter* const>(tp), std::span<Parameter* const>(sp),
                  state.cfg.teacher_momentum);

  if (update_center) {
    int64_t total_rows = 0;
    for (const auto& tl : teacher_logit_tensors) total_rows += tl.dim(0);
    Tensor all({total_rows, state.cfg.pseudo_classes});
    int64_t off = 0;
    for (const auto& tl : teacher_logit_tensors) {
      for (int64_t i = 0; i < tl.numel(); ++i) all[off + i] = tl[i];
      off += tl.numel();
    }
    center_update(state.center, all, state.cfg.center_momentum);
  }

  if (debug_checks()) {
    for (Parameter* p : tp)
      for (int64_t i = 0; i < p->grad.numel(); ++i)
        if (p->grad[i] != 0.0f) throw StateError("gradient leaked into the teacher");
  }
  return stats;
}

// ---------------------------------------------------------------------------

DinoTrainer::DinoTrainer(DinoConfig cfg, EncoderConfig enc_cfg)
    : cfg_(cfg),
      enc_cfg_(enc_cfg),
      state_(DistillationState::make(enc_cfg, cfg, cfg.seed)),
      opt_(state_.student_params(),
           SGDConfig{cfg.base_lr, cfg.momentum, cfg.weight_decay, cfg.batch_size}) {}

double DinoTrainer::lr_at(int64_t step) const {
  switch (cfg_.schedule) {
    case LrScheduleKind::cosine: return cosine_lr(step, cfg_.steps, cfg_.base_lr);
    case LrScheduleKind::step: return step_lr(step, cfg_.steps, cfg_.base_lr);
    case LrScheduleKind::constant: return cfg_.base_lr;
  }
  return cfg_.base_lr;
}

std::vector<TrainLogRow> DinoTrainer::run(const BatchSource& source) {
  std::vector<TrainLogRow> log;
  log.reserve(static_cast<size_t>(cfg_.steps));
  for (int64_t step = 0; step < cfg_.steps; ++step) {
    auto images = source(step);
    double lr = lr_at(step);
    auto stats = distill_step(images, state_, opt_, lr,
                              mix_seed(cfg_.seed, 0x64696E6Full + static_cast<uint64_t>(step)));
    log.push_back({step, stats.loss, lr});
  }
  return log;
}

void DinoTrainer::save_checkpoint(const std::filesystem::path& path, int64_t step) const {
  nlohmann::json cfg;
  cfg["dino"] = cfg_.to_json();
  cfg["encoder"] = enc_cfg_.to_json();
  auto params = const_cast<DinoTrainer*>(this)->state_.student_params();
  geossl::save_checkpoint(path, cfg, step, params);
}

}  // namespace geossl
