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
#include <memory>
#include <vector>

#include "json.hpp"

#include "geossl/autodiff.hpp"
#include "geossl/rng.hpp"
#include "geossl/tensor.hpp"

namespace geossl {

struct ConvSpec {
  int filters = 16;
  int kernel = 3;
  int stride = 2;
};

enum class Architecture { small_conv, tiny_transformer };

/// Small parameterized encoder: either a conv stack with global average
/// pooling or a patch transformer that exposes per-block outputs.
struct EncoderConfig {
  int input_size = 32;
  std::vector<ConvSpec> conv_layers = {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}};
  int embedding_dim = 128;
  Architecture architecture = Architecture::small_conv;
  /// Channel layer-norm after each conv block. Per-sample, so nothing leaks
  /// across the batch.
  bool conv_channel_norm = true;

  // tiny_transformer knobs
  int tf_blocks = 4;
  int tf_width = 64;
  int tf_patch = 8;
  int tf_mlp_ratio = 2;

  void validate() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

class Encoder {
 public:
  virtual ~Encoder() = default;

  /// images: [b, s, s, 3] with values in [0,1] -> [b, embedding_dim]
  virtual Var forward(Tape& tape, Var images) = 0;

  /// Per-block pooled outputs; only the transformer provides these.
  virtual std::vector<Var> forward_blocks(Tape& tape, Var images);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  const EncoderConfig& config() const { return config_; }

  /// Copies parameter values from an identically configured encoder.
  void copy_state_from(const Encoder& other);
  void set_trainable(bool trainable);

  /// FNV-1a over all parameter bytes in declaration order.
  uint64_t checksum() const;

 protected:
  explicit Encoder(EncoderConfig cfg) : config_(std::move(cfg)) {}
  Parameter& add_param(Tensor value, std::string name);

  EncoderConfig config_;
  std::vector<std::unique_ptr<Parameter>> params_;
};

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg, uint64_t seed);

/// v ← momentum·v + grad + weight_decay·w;  w ← w − lr·v
struct SGDConfig {
  double base_lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 32;

  void validate() const;
};

class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Parameter*> params, SGDConfig cfg);

  void zero_grad();
  void step(double lr_now);

  const SGDConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> velocity_;
  SGDConfig cfg_;
};

/// base_lr · ½(1 + cos(π·step/total)); step must lie in [0, total].
double cosine_lr(int64_t step, int64_t total_steps, double base_lr);

/// base_lr · factor^(milestones passed); milestones are fractions of the
/// total epoch count.
double step_lr(int64_t epoch, int64_t total_epochs, double base_lr,
               const std::vector<double>& milestones = {0.6, 0.8}, double factor = 0.1);

/// Scales all gradients so their joint L2 norm is at most max_norm.
/// Returns the pre-clip norm.
double clip_global_norm(const std::vector<Parameter*>& params, double max_norm);

/// Kaiming-uniform fan-in init for a [fan_in, fan_out] matrix.
Tensor kaiming_uniform(std::vector<int64_t> shape, int64_t fan_in, Rng& rng);

void l2_normalize_rows_inplace(Tensor& t, float eps = 1e-12f);

uint64_t params_checksum(const std::vector<const Parameter*>& params);

/// Binary checkpoint: u64 little-endian header length, JSON header
/// (config, step, parameter names/shapes), then raw float32 blobs in
/// declaration order.
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config,
                     int64_t step, const std::vector<Parameter*>& params);

struct CheckpointInfo {
  nlohmann::json config;
  int64_t step = 0;
  nlohmann::json params;  // [{name, shape}] in blob order
};

CheckpointInfo load_checkpoint(const std::filesystem::path& path, std::vector<Parameter*>& params);

/// Reads only the header of a checkpoint file.
CheckpointInfo peek_checkpoint(const std::filesystem::path& path);

}  // namespace geossl
