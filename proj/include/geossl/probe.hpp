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
#include <vector>

#include "geossl/nn.hpp"

namespace geossl {

enum class FeatureMode { final_embedding, concat_last4 };

/// Read-only view of an encoder used for frozen evaluation. The checksum is
/// the contract: it must be identical before and after probe training.
class FrozenRepresentation {
 public:
  FrozenRepresentation(Encoder& encoder, FeatureMode mode);

  int64_t feature_dim() const;
  FeatureMode mode() const { return mode_; }
  uint64_t checksum() const { return encoder_->checksum(); }
  const EncoderConfig& encoder_config() const { return encoder_->config(); }

  /// Deterministic features; the encoder is never modified.
  Tensor extract(const std::vector<Tensor>& images, int batch_size = 64) const;
  Tensor extract_batch(const Tensor& images) const;  // [b,s,s,3] -> [b,F]

 private:
  Encoder* encoder_;
  FeatureMode mode_;
};

struct ProbeSchedule {
  int epochs = 100;
  double base_lr = 30.0;
  int batch_size = 256;
  std::vector<double> milestones = {0.6, 0.8};
  double factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool standardize = true;
  /// Extra uniform scale applied after per-dimension standardization. The
  /// large probe learning rate presumes small frozen-feature magnitudes, so
  /// standardized features are shrunk back to that regime by default.
  double feature_scale = 0.1;
  uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

/// The only trainable state during probing, plus the feature normalization
/// constants it was trained with.
struct LinearHead {
  Tensor weight;     // [C, F]
  Tensor bias;       // [C]
  Tensor feat_mean;  // [F] (empty when standardization is off)
  Tensor feat_std;   // [F]
  double feature_scale = 1.0;

  int64_t classes() const { return weight.dim(0); }
  int64_t feature_dim() const { return weight.dim(1); }
};

struct ProbeResult {
  double top1 = 0.0;
  std::vector<double> per_class;
  std::vector<int64_t> per_class_count;
  int64_t n_test = 0;
  uint64_t checksum_before = 0;
  uint64_t checksum_after = 0;
  nlohmann::json config_snapshot;

  nlohmann::json to_json() const;
  void save_json(const std::filesystem::path& path) const;
  void save_per_class_csv(const std::filesystem::path& path) const;
};

/// Trains the linear layer on cached features (categorical cross-entropy,
/// step-decayed SGD).
LinearHead train_probe_features(const Tensor& features, const std::vector<int>& labels,
                                int64_t classes, const ProbeSchedule& schedule);

/// Extracts features once, trains the head, and enforces the frozen
/// contract (checksum must not move).
LinearHead train_probe(const FrozenRepresentation& rep, const std::vector<Tensor>& images,
                       const std::vector<int>& labels, int64_t classes,
                       const ProbeSchedule& schedule);

/// Logits for (optionally standardized) features.
Tensor apply_head(const LinearHead& head, const Tensor& features);

/// Top-1 accuracy with argmax ties broken toward the lowest class index.
ProbeResult evaluate(const LinearHead& head, const Tensor& features,
                     const std::vector<int>& labels);

ProbeResult evaluate_probe(const LinearHead& head, const FrozenRepresentation& rep,
                           const std::vector<Tensor>& images, const std::vector<int>& labels);

}  // namespace geossl
