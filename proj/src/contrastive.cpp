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

#include "geossl/contrastive.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "geossl/error.hpp"

namespace geossl {

namespace {
bool g_debug_checks = true;
}

void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }

std::string to_string(Workflow w) {
  switch (w) {
    case Workflow::v1: return "v1";
    case Workflow::v2: return "v2";
    case Workflow::dino: return "dino";
    case Workflow::supervised: return "supervised";
  }
  return "?";
}

Workflow workflow_from_string(const std::string& s) {
  if (s == "v1") return Workflow::v1;
  if (s == "v2") return Workflow::v2;
  if (s == "dino") return Workflow::dino;
  if (s == "supervised") return Workflow::supervised;
  throw ConfigError("unknown workflow: " + s);
}

// ---------------------------------------------------------------------------

NegativeQueue::NegativeQueue(int64_t capacity, int64_t dim)
    : capacity_(capacity), dim_(dim), entries_(Tensor::zeros({capacity, dim})) {
  if (capacity < 1 || dim < 1) throw ConfigError("queue capacity and dim must be positive");
}

void NegativeQueue::enqueue(const Tensor& keys) {
  if (keys.rank() != 2 || keys.dim(1) != dim_) throw ShapeError("enqueue: keys must be [b,dim]");
  int64_t b = keys.dim(0);
  if (b > capacity_) throw ConfigError("enqueue: batch exceeds queue capacity");
  if (g_debug_checks) {
    for (int64_t i = 0; i < b; ++i) {
      double acc = 0.0;
      for (int64_t j = 0; j < dim_; ++j)
        acc += static_cast<double>(keys[i * dim_ + j]) * keys[i * dim_ + j];
      if (std::abs(std::sqrt(acc) - 1.0) > 1e-3)
        throw ValidationError("enqueue: keys must be unit-normalized");
    }
  }
  for (int64_t i = 0; i < b; ++i) {
    int64_t slot = (cursor_ + i) % capacity_;
    for (int64_t j = 0; j < dim_; ++j) entries_[slot * dim_ + j] = keys[i * dim_ + j];
  }
  cursor_ = (cursor_ + b) % capacity_;
  filled_ = std::min(filled_ + b, capacity_);
}

// ---------------------------------------------------------------------------

ProjectionHead::ProjectionHead(HeadKind kind, int in_dim, int out_dim, uint64_t seed)
    : kind_(kind), in_dim_(in_dim), out_dim_(out_dim) {
  if (in_dim < 1 || out_dim < 1) throw ConfigError("projection head dims must be positive");
  Rng rng(mix_seed(seed, 0x68656164));
  if (kind_ == HeadKind::linear) {
    params_.push_back(std::make_unique<Parameter>(
        kaiming_uniform({in_dim, out_dim}, in_dim, rng), "head.w"));
  } else if (kind_ == HeadKind::mlp2) {
    params_.push_back(std::make_unique<Parameter>(
        kaiming_uniform({in_dim, in_dim}, in_dim, rng), "head.fc1.w"));
    params_.push_back(std::make_unique<Parameter>(Tensor::zeros({in_dim}), "head.fc1.b"));
    params_.push_back(std::make_unique<Parameter>(
        kaiming_uniform({in_dim, out_dim}, in_dim, rng), "head.fc2.w"));
    params_.push_back(std::make_unique<Parameter>(Tensor::zeros({out_dim}), "head.fc2.b"));
  }
}

Var ProjectionHead::forward(Tape& t, Var x) const {
  switch (kind_) {
    case HeadKind::identity:
      return x;
    case HeadKind::linear:
      return t.matmul(x, t.param(*params_[0]));
    case HeadKind::mlp2: {
      Var h = t.add_bias(t.matmul(x, t.param(*params_[0])), t.param(*params_[1]));
      h = t.relu(h);
      return t.add_bias(t.matmul(h, t.param(*params_[2])), t.param(*params_[3]));
    }
  }
  return x;
}

std::vector<Parameter*> ProjectionHead::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

void ProjectionHead::copy_state_from(const ProjectionHead& other) {
  if (params_.size() != other.params_.size()) throw ConfigError("projection heads differ");
  for (size_t i = 0; i < params_.size(); ++i) params_[i]->value = other.params_[i]->value;
}

void ProjectionHead::set_trainable(bool trainable) {
  for (auto& p : params_) p->trainable = trainable;
}

// ---------------------------------------------------------------------------

MomentumPair MomentumPair::make(const EncoderConfig& enc_cfg, HeadKind head, int proj_dim,
                                double momentum, uint64_t seed) {
  if (momentum < 0.0 || momentum > 1.0) throw ConfigError("momentum must lie in [0,1]");
  MomentumPair pair;
  pair.momentum = momentum;
  pair.query_encoder = make_encoder(enc_cfg, seed);
  pair.key_encoder = make_encoder(enc_cfg, seed);
  pair.key_encoder->copy_state_from(*pair.query_encoder);
  pair.query_head = ProjectionHead(head, enc_cfg.embedding_dim, proj_dim, seed);
  pair.key_head = ProjectionHead(head, enc_cfg.embedding_dim, proj_dim, seed);
  pair.key_head.copy_state_from(pair.query_head);
  pair.key_encoder->set_trainable(false);
  pair.key_head.set_trainable(false);
  return pair;
}

std::vector<Parameter*> MomentumPair::query_params() {
  auto out = query_encoder->parameters();
  for (Parameter* p : query_head.parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter*> MomentumPair::key_params() {
  auto out = key_encoder->parameters();
  for (Parameter* p : key_head.parameters()) out.push_back(p);
  return out;
}

Var MomentumPair::embed_query(Tape& t, Var images) {
  return t.l2_normalize_rows(query_head.forward(t, query_encoder->forward(t, images)));
}

Var MomentumPair::embed_key(Tape& t, Var images) {
  return t.l2_normalize_rows(key_head.forward(t, key_encoder->forward(t, images)));
}

void momentum_update(std::span<Parameter* const> key_params,
                     std::span<Parameter* const> query_params, double m) {
  if (key_params.size() != query_params.size())
    throw ConfigError("momentum_update: parameter lists differ in length");
  if (m < 0.0 || m > 1.0) throw ConfigError("momentum_update: m must lie in [0,1]");
  for (size_t i = 0; i < key_params.size(); ++i) {
    Tensor& k = key_params[i]->value;
    const Tensor& q = query_params[i]->value;
    if (!k.same_shape(q)) throw ShapeError("momentum_update: shape mismatch");
    for (int64_t j = 0; j < k.numel(); ++j)
      k[j] = static_cast<float>(m * static_cast<double>(k[j]) +
                                (1.0 - m) * static_cast<double>(q[j]));
  }
}

void momentum_update(MomentumPair& pair) {
  auto kp = pair.key_params();
  auto qp = pair.query_params();
  momentum_update(std::span<Parameter* const>(kp), std::span<Parameter* const>(qp), pair.momentum);
}

// ---------------------------------------------------------------------------

namespace {

void check_unit_rows(const Tensor& t, const char* what) {
  int64_t m = t.dim(0), d = t.dim(1);
  for (int64_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) acc += static_cast<double>(t[i * d + j]) * t[i * d + j];
    if (std::abs(std::sqrt(acc) - 1.0) > 1e-3)
      throw ValidationError(std::string(what) + ": rows must be unit-normalized");
  }
}

}  // namespace

Var info_nce_loss(Tape& t, Var q, Var k_pos, const Tensor& queue, double tau) {
  if (!(tau > 0.0)) throw ConfigError("info_nce_loss: temperature must be positive");
  const Tensor& qv = t.value(q);
  const Tensor& kv = t.value(k_pos);
  if (qv.rank() != 2 || !qv.same_shape(kv)) throw ShapeError("info_nce_loss: q/k shape mismatch");
  if (queue.rank() != 2 || queue.dim(1) != qv.dim(1))
    throw ShapeError("info_nce_loss: queue dim mismatch");
  if (g_debug_checks) {
    check_unit_rows(qv, "info_nce_loss(q)");
    check_unit_rows(kv, "info_nce_loss(k_pos)");
    check_unit_rows(queue, "info_nce_loss(queue)");
  }

  return t.info_nce(q, k_pos, queue, tau);
}

PretrainStepStats pretrain_step(const std::vector<Tensor>& images, MomentumPair& pair,
                                NegativeQueue& queue, const AugmentRecipe& recipe,
                                SgdOptimizer& opt, double lr_now, double tau, double clip_norm,
                                uint64_t step_seed) {
  if (images.empty()) throw ConfigError("pretrain_step: empty batch");
  auto [views_q, views_k] = make_view_pair_batch(images, recipe, step_seed);

  PretrainStepStats stats;
  if (!queue.full()) {
    // Warmup: fill the queue from the key path only; no gradient step.
    Tape t;
    Var xk = t.leaf(std::move(views_k), false);
    Var k = pair.embed_key(t, xk);
    queue.enqueue(t.value(k));
    stats.warmup = true;
    return stats;
  }

  Tape t;
  Var xq = t.leaf(std::move(views_q), false);
  Var xk = t.leaf(std::move(views_k), false);
  Var qe = pair.embed_query(t, xq);
  Var ke = pair.embed_key(t, xk);
  Tensor keys = t.value(ke);  // snapshot before the queue mutates

  Var loss = info_nce_loss(t, qe, ke, queue.entries(), tau);
  stats.loss = t.value(loss)[0];

  opt.zero_grad();
  t.backward(loss);
  t.sync_param_grads();
  auto qp = pair.query_params();
  stats.grad_norm = clip_global_norm(qp, clip_norm);
  opt.step(lr_now);

  momentum_update(pair);
  queue.enqueue(keys);

  if (debug_checks()) {
    for (Parameter* p : pair.key_params())
      for (int64_t i = 0; i < p->grad.numel(); ++i)
        if (p->grad[i] != 0.0f)
          throw StateError("gradient leaked into the key encoder");
  }
  return stats;
}

// ---------------------------------------------------------------------------

PretrainConfig PretrainConfig::v1_defaults() {
  PretrainConfig c;
  c.workflow = Workflow::v1;
  c.tau = 0.07;
  c.schedule = LrScheduleKind::step;
  return c;
}

PretrainConfig PretrainConfig::v2_defaults() {
  PretrainConfig c;
  c.workflow = Workflow::v2;
  c.tau = 0.2;
  c.schedule = LrScheduleKind::cosine;
  return c;
}

void PretrainConfig::validate() const {
  if (workflow != Workflow::v1 && workflow != Workflow::v2)
    throw ConfigError("contrastive trainer handles v1/v2 workflows only");
  if (steps < 1 || batch_size < 1) throw ConfigError("steps and batch_size must be positive");
  if (queue_size < batch_size) throw ConfigError("queue must hold at least one batch");
  if (queue_size % batch_size != 0)
    throw ConfigError("queue size must be divisible by batch size");
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  if (key_momentum < 0.0 || key_momentum > 1.0) throw ConfigError("key momentum must lie in [0,1]");
  SGDConfig sgd{base_lr, momentum, weight_decay, batch_size};
  sgd.validate();
}

AugmentRecipe PretrainConfig::recipe() const {
  return workflow == Workflow::v1 ? AugmentRecipe::v1(view_px) : AugmentRecipe::v2(view_px);
}

nlohmann::json PretrainConfig::to_json() const {
  return nlohmann::json{{"workflow", to_string(workflow)},
                        {"steps", steps},
                        {"batch_size", batch_size},
                        {"base_lr", base_lr},
                        {"momentum", momentum},
                        {"weight_decay", weight_decay},
                        {"tau", tau},
                        {"queue_size", queue_size},
                        {"key_momentum", key_momentum},
                        {"clip_norm", clip_norm},
                        {"schedule", schedule == LrScheduleKind::cosine
                                         ? "cosine"
                                         : (schedule == LrScheduleKind::step ? "step" : "constant")},
                        {"view_px", view_px},
                        {"seed", seed}};
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open loss csv: " + path.string());
  os << "step,loss,lr\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.8f\n", static_cast<long long>(r.step),
                  static_cast<double>(r.loss), r.lr);
    os << buf;
  }
}

ContrastiveTrainer::ContrastiveTrainer(PretrainConfig cfg, EncoderConfig enc_cfg)
    : cfg_(cfg),
      enc_cfg_(enc_cfg),
      pair_(MomentumPair::make(enc_cfg,
                               cfg.workflow == Workflow::v2 ? HeadKind::mlp2 : HeadKind::identity,
                               enc_cfg.embedding_dim, cfg.key_momentum, cfg.seed)),
      queue_(cfg.queue_size, enc_cfg.embedding_dim),
      opt_(pair_.query_params(), SGDConfig{cfg.base_lr, cfg.momentum, cfg.weight_decay, cfg.batch_size}) {
  cfg_.validate();
  enc_cfg_.validate();
}

double ContrastiveTrainer::lr_at(int64_t step) const {
  switch (cfg_.schedule) {
    case LrScheduleKind::cosine: return cosine_lr(step, cfg_.steps, cfg_.base_lr);
    case LrScheduleKind::step: return step_lr(step, cfg_.steps, cfg_.base_lr);
    case LrScheduleKind::constant: return cfg_.base_lr;
  }
  return cfg_.base_lr;
}

std::vector<TrainLogRow> ContrastiveTrainer::run(const BatchSource& source) {
  AugmentRecipe recipe = cfg_.recipe();
  int64_t warmup = cfg_.queue_size / cfg_.batch_size;
  for (int64_t w = 0; w < warmup; ++w) {
    auto images = source(w);
    pretrain_step(images, pair_, queue_, recipe, opt_, 0.0, cfg_.tau, cfg_.clip_norm,
                  mix_seed(cfg_.seed, 0x7761726Dull + static_cast<uint64_t>(w)));
  }
  std::vector<TrainLogRow> log;
  log.reserve(static_cast<size_t>(cfg_.steps));
  for (int64_t step = 0; step < cfg_.steps; ++step) {
    auto images = source(warmup + step);
    double lr = lr_at(step);
    auto stats = pretrain_step(images, pair_, queue_, recipe, opt_, lr, cfg_.tau, cfg_.clip_norm,
                               mix_seed(cfg_.seed, 0x73746570ull + static_cast<uint64_t>(step)));
    log.push_back({step, stats.loss, lr});
  }
  return log;
}

void ContrastiveTrainer::save_checkpoint(const std::filesystem::path& path, int64_t step) const {
  nlohmann::json cfg;
  cfg["pretrain"] = cfg_.to_json();
  cfg["encoder"] = enc_cfg_.to_json();
  auto params = const_cast<ContrastiveTrainer*>(this)->pair_.query_params();
  geossl::save_checkpoint(path, cfg, step, params);
}

}  // namespace geossl
