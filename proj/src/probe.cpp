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

#include "geossl/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "geossl/augment.hpp"
#include "geossl/error.hpp"

namespace geossl {

FrozenRepresentation::FrozenRepresentation(Encoder& encoder, FeatureMode mode)
    : encoder_(&encoder), mode_(mode) {
  if (mode_ == FeatureMode::concat_last4) {
    if (encoder.config().architecture != Architecture::tiny_transformer)
      throw ConfigError("concat_last4 requires a tiny_transformer encoder");
    if (encoder.config().tf_blocks < 4)
      throw ConfigError("concat_last4 requires at least 4 transformer blocks");
  }
}

int64_t FrozenRepresentation::feature_dim() const {
  if (mode_ == FeatureMode::final_embedding) return encoder_->config().embedding_dim;
  return 4LL * encoder_->config().tf_width;
}

Tensor FrozenRepresentation::extract_batch(const Tensor& images) const {
  Tape t;
  Var x = t.leaf(images, false);
  if (mode_ == FeatureMode::final_embedding) {
    Var e = encoder_->forward(t, x);
    return t.value(e);
  }
  auto blocks = encoder_->forward_blocks(t, x);
  size_t nb = blocks.size();
  Var cat = blocks[nb - 4];
  for (size_t i = nb - 3; i < nb; ++i) cat = t.concat_cols(cat, blocks[i]);
  return t.value(cat);
}

Tensor FrozenRepresentation::extract(const std::vector<Tensor>& images, int batch_size) const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  int64_t n = static_cast<int64_t>(images.size());
  Tensor out({n, feature_dim()});
  int64_t f = feature_dim();
  for (int64_t start = 0; start < n; start += batch_size) {
    int64_t count = std::min<int64_t>(batch_size, n - start);
    std::vector<Tensor> chunk(images.begin() + start, images.begin() + start + count);
    Tensor batch = extract_batch(stack_images(chunk));
    std::memcpy(out.data() + start * f, batch.data(),
                sizeof(float) * static_cast<size_t>(count * f));
  }
  return out;
}

void ProbeSchedule::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(factor > 0.0)) throw ConfigError("factor must be positive");
  if (!(feature_scale > 0.0)) throw ConfigError("feature_scale must be positive");
}

nlohmann::json ProbeSchedule::to_json() const {
  return nlohmann::json{{"epochs", epochs},
                        {"base_lr", base_lr},
                        {"batch_size", batch_size},
                        {"milestones", milestones},
                        {"factor", factor},
                        {"momentum", momentum},
                        {"weight_decay", weight_decay},
                        {"standardize", standardize},
                        {"feature_scale", feature_scale},
                        {"seed", seed}};
}

namespace {

Tensor normalize_features(const Tensor& features, const LinearHead& head) {
  if (head.feat_mean.empty()) {
    if (head.feature_scale == 1.0) return features;
    Tensor out = features;
    for (int64_t i = 0; i < out.numel(); ++i)
      out[i] = static_cast<float>(out[i] * head.feature_scale);
    return out;
  }
  int64_t n = features.dim(0), f = features.dim(1);
  Tensor out({n, f});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < f; ++j)
      out[i * f + j] = static_cast<float>(
          (features[i * f + j] - head.feat_mean[j]) / head.feat_std[j] * head.feature_scale);
  return out;
}

}  // namespace

LinearHead train_probe_features(const Tensor& features, const std::vector<int>& labels,
                                int64_t classes, const ProbeSchedule& schedule) {
  schedule.validate();
  if (features.rank() != 2) throw ShapeError("features must be [n,F]");
  int64_t n = features.dim(0), f = features.dim(1);
  if (static_cast<int64_t>(labels.size()) != n) throw ConfigError("label count mismatch");
  if (classes < 1) throw ConfigError("class count must be positive");
  for (int y : labels)
    if (y < 0 || y >= classes) throw ConfigError("label out of range for class count");

  LinearHead head;
  head.feature_scale = schedule.feature_scale;
  if (schedule.standardize) {
    head.feat_mean = Tensor::zeros({f});
    head.feat_std = Tensor::zeros({f});
    for (int64_t j = 0; j < f; ++j) {
      double mu = 0.0;
      for (int64_t i = 0; i < n; ++i) mu += features[i * f + j];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        double c = features[i * f + j] - mu;
        var += c * c;
      }
      var /= static_cast<double>(n);
      head.feat_mean[j] = static_cast<float>(mu);
      head.feat_std[j] = static_cast<float>(std::sqrt(var) + 1e-8);
    }
  }

  Rng rng(mix_seed(schedule.seed, 0x70726F62));
  Parameter w(kaiming_uniform({classes, f}, f, rng), "probe.w");
  Parameter b(Tensor::zeros({classes}), "probe.b");
  std::vector<Parameter*> params{&w, &b};
  SgdOptimizer opt(params, SGDConfig{schedule.base_lr, schedule.momentum, schedule.weight_decay,
                                     schedule.batch_size});

  Tensor normed = normalize_features(features, [&] {
    LinearHead h;
    h.feat_mean = head.feat_mean;
    h.feat_std = head.feat_std;
    h.feature_scale = head.feature_scale;
    return h;
  }());

  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    double lr = step_lr(epoch, schedule.epochs, schedule.base_lr, schedule.milestones,
                        schedule.factor);
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(0, i))]);
    for (int64_t start = 0; start < n; start += schedule.batch_size) {
      int64_t count = std::min<int64_t>(schedule.batch_size, n - start);
      Tensor fb({count, f});
      std::vector<int64_t> yb(static_cast<size_t>(count));
      for (int64_t i = 0; i < count; ++i) {
        int64_t src = order[static_cast<size_t>(start + i)];
        std::memcpy(fb.data() + i * f, normed.data() + src * f,
                    sizeof(float) * static_cast<size_t>(f));
        yb[static_cast<size_t>(i)] = labels[static_cast<size_t>(src)];
      }
      Tape t;
      Var x = t.leaf(std::move(fb), false);
      Var logits = t.add_bias(t.matmul_nt(x, t.param(w)), t.param(b));
      Var loss = t.softmax_xent(logits, std::move(yb));
      opt.zero_grad();
      t.backward(loss);
      t.sync_param_grads();
      opt.step(lr);
    }
  }

  head.weight = w.value;
  head.bias = b.value;
  return head;
}

LinearHead train_probe(const FrozenRepresentation& rep, const std::vector<Tensor>& images,
                       const std::vector<int>& labels, int64_t classes,
                       const ProbeSchedule& schedule) {
  uint64_t before = rep.checksum();
  Tensor features = rep.extract(images);
  LinearHead head = train_probe_features(features, labels, classes, schedule);
  if (rep.checksum() != before)
    throw StateError("frozen contract violated: encoder changed during probing");
  return head;
}

Tensor apply_head(const LinearHead& head, const Tensor& features) {
  if (features.rank() != 2 || features.dim(1) != head.feature_dim())
    throw ShapeError("apply_head: feature dim mismatch");
  Tensor normed = normalize_features(features, head);
  int64_t n = normed.dim(0), f = normed.dim(1), c = head.classes();
  Tensor logits({n, c});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < c; ++k) {
      double acc = head.bias[k];
      for (int64_t j = 0; j < f; ++j) acc += static_cast<double>(normed[i * f + j]) * head.weight[k * f + j];
      logits[i * c + k] = static_cast<float>(acc);
    }
  return logits;
}

ProbeResult evaluate(const LinearHead& head, const Tensor& features,
                     const std::vector<int>& labels) {
  int64_t n = features.dim(0);
  if (n == 0) throw ConfigError("evaluate: empty test set");
  if (static_cast<int64_t>(labels.size()) != n) throw ConfigError("evaluate: label count mismatch");
  int64_t c = head.classes();
  Tensor logits = apply_head(head, features);

  ProbeResult res;
  res.n_test = n;
  res.per_class.assign(static_cast<size_t>(c), 0.0);
  res.per_class_count.assign(static_cast<size_t>(c), 0);
  std::vector<int64_t> correct(static_cast<size_t>(c), 0);
  int64_t total_correct = 0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    float best_v = logits[i * c];
    for (int64_t k = 1; k < c; ++k)
      if (logits[i * c + k] > best_v) {  // ties keep the lowest index
        best_v = logits[i * c + k];
        best = k;
      }
    int y = labels[static_cast<size_t>(i)];
    res.per_class_count[static_cast<size_t>(y)]++;
    if (best == y) {
      correct[static_cast<size_t>(y)]++;
      ++total_correct;
    }
  }
  for (int64_t k = 0; k < c; ++k)
    res.per_class[static_cast<size_t>(k)] =
        res.per_class_count[static_cast<size_t>(k)] == 0
            ? 0.0
            : static_cast<double>(correct[static_cast<size_t>(k)]) /
                  static_cast<double>(res.per_class_count[static_cast<size_t>(k)]);
  res.top1 = static_cast<double>(total_correct) / static_cast<double>(n);
  return res;
}

ProbeResult evaluate_probe(const LinearHead& head, const FrozenRepresentation& rep,
                           const std::vector<Tensor>& images, const std::vector<int>& labels) {
  uint64_t before = rep.checksum();
  Tensor features = rep.extract(images);
  ProbeResult res = evaluate(head, features, labels);
  res.checksum_before = before;
  res.checksum_after = rep.checksum();
  return res;
}

nlohmann::json ProbeResult::to_json() const {
  return nlohmann::json{{"top1", top1},
                        {"n_test", n_test},
                        {"per_class", per_class},
                        {"per_class_count", per_class_count},
                        {"checksum_before", checksum_before},
                        {"checksum_after", checksum_after},
                        {"config", config_snapshot}};
}

void ProbeResult::save_json(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open probe json: " + path.string());
  os << to_json().dump(2) << "\n";
}

void ProbeResult::save_per_class_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open per-class csv: " + path.string());
  os << "class,accuracy,count\n";
  char buf[64];
  for (size_t k = 0; k < per_class.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%lld\n", k, per_class[k],
                  static_cast<long long>(per_class_count[k]));
    os << buf;
  }
}

}  // namespace geossl
