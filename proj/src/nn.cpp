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

#include "geossl/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "geossl/error.hpp"

namespace geossl {

using nlohmann::json;

void EncoderConfig::validate() const {
  if (embedding_dim < 8) throw ConfigError("embedding_dim must be >= 8");
  if (input_size < 8) throw ConfigError("input_size must be >= 8");
  if (architecture == Architecture::small_conv && conv_layers.empty())
    throw ConfigError("small_conv needs at least one conv layer");
  if (architecture == Architecture::tiny_transformer) {
    if (tf_blocks < 1 || tf_width < 8) throw ConfigError("bad transformer dims");
    if (input_size % tf_patch != 0) throw ConfigError("patch must divide input_size");
  }
}

json EncoderConfig::to_json() const {
  json layers = json::array();
  for (const auto& l : conv_layers) layers.push_back({l.filters, l.kernel, l.stride});
  return json{{"input_size", input_size},
              {"conv_layers", layers},
              {"conv_channel_norm", conv_channel_norm},
              {"embedding_dim", embedding_dim},
              {"architecture", architecture == Architecture::small_conv ? "small_conv" : "tiny_transformer"},
              {"tf_blocks", tf_blocks},
              {"tf_width", tf_width},
              {"tf_patch", tf_patch},
              {"tf_mlp_ratio", tf_mlp_ratio}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.input_size = j.at("input_size").get<int>();
  c.conv_layers.clear();
  for (const auto& l : j.at("conv_layers"))
    c.conv_layers.push_back({l.at(0).get<int>(), l.at(1).get<int>(), l.at(2).get<int>()});
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.conv_channel_norm = j.value("conv_channel_norm", true);
  c.architecture = j.at("architecture").get<std::string>() == "small_conv"
                       ? Architecture::small_conv
                       : Architecture::tiny_transformer;
  c.tf_blocks = j.value("tf_blocks", 4);
  c.tf_width = j.value("tf_width", 64);
  c.tf_patch = j.value("tf_patch", 8);
  c.tf_mlp_ratio = j.value("tf_mlp_ratio", 2);
  return c;
}

Tensor kaiming_uniform(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_f(static_cast<float>(-bound), static_cast<float>(bound));
  return t;
}

void l2_normalize_rows_inplace(Tensor& t, float eps) {
  if (t.rank() != 2) throw ShapeError("l2_normalize_rows_inplace expects [n,d]");
  int64_t m = t.dim(0), d = t.dim(1);
  for (int64_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) acc += static_cast<double>(t[i * d + j]) * t[i * d + j];
    double r = std::sqrt(acc);
    if (r < eps) r = eps;
    for (int64_t j = 0; j < d; ++j) t[i * d + j] = static_cast<float>(t[i * d + j] / r);
  }
}

std::vector<Parameter*> Encoder::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> Encoder::parameters() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void Encoder::copy_state_from(const Encoder& other) {
  if (params_.size() != other.params_.size()) throw ConfigError("encoder architectures differ");
  for (size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i]->value.same_shape(other.params_[i]->value))
      throw ConfigError("encoder parameter shapes differ");
    params_[i]->value = other.params_[i]->value;
  }
}

void Encoder::set_trainable(bool trainable) {
  for (auto& p : params_) p->trainable = trainable;
}

uint64_t Encoder::checksum() const { return params_checksum(parameters()); }

Parameter& Encoder::add_param(Tensor value, std::string name) {
  params_.push_back(std::make_unique<Parameter>(std::move(value), std::move(name)));
  return *params_.back();
}

std::vector<Var> Encoder::forward_blocks(Tape&, Var) {
  throw ConfigError("per-block outputs are only available for tiny_transformer encoders");
}

uint64_t params_checksum(const std::vector<const Parameter*>& params) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (const Parameter* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    size_t n = static_cast<size_t>(p->value.numel()) * sizeof(float);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ull;
    }
  }
  return h;
}

namespace {

class ConvEncoder final : public Encoder {
 public:
  ConvEncoder(EncoderConfig cfg, uint64_t seed) : Encoder(std::move(cfg)) {
    config_.validate();
    Rng rng(mix_seed(seed, 0x636f6e76));
    int ch = 3;
    int sz = config_.input_size;
    int idx = 0;
    for (const auto& l : config_.conv_layers) {
      int64_t kkc = static_cast<int64_t>(l.kernel) * l.kernel * ch;
      add_param(kaiming_uniform({kkc, l.filters}, kkc, rng), "conv" + std::to_string(idx) + ".w");
      add_param(Tensor::zeros({l.filters}), "conv" + std::to_string(idx) + ".b");
      if (config_.conv_channel_norm) {
        add_param(Tensor::full({l.filters}, 1.0f), "conv" + std::to_string(idx) + ".ln.g");
        add_param(Tensor::zeros({l.filters}), "conv" + std::to_string(idx) + ".ln.b");
      }
      int pad = l.kernel / 2;
      sz = (sz + 2 * pad - l.kernel) / l.stride + 1;
      ch = l.filters;
      ++idx;
    }
    add_param(kaiming_uniform({ch, config_.embedding_dim}, ch, rng), "proj.w");
    final_spatial_ = sz;
    final_channels_ = ch;
  }

  Var forward(Tape& t, Var images) override {
    const Tensor& x = t.value(images);
    if (x.rank() != 4 || x.dim(1) != config_.input_size || x.dim(2) != config_.input_size ||
        x.dim(3) != 3)
      throw ShapeError("conv encoder: batch must be [b," + std::to_string(config_.input_size) +
                       "," + std::to_string(config_.input_size) + ",3], got " + x.shape_str());
    Var h = images;
    size_t pi = 0;
    for (const auto& l : config_.conv_layers) {
      Var w = t.param(*params_[pi++]);
      Var b = t.param(*params_[pi++]);
      h = t.conv2d(h, w, b, l.kernel, l.stride, l.kernel / 2);
      if (config_.conv_channel_norm) {
        Var g = t.param(*params_[pi++]);
        Var bb = t.param(*params_[pi++]);
        h = t.layer_norm(h, g, bb);
      }
      h = t.relu(h);
    }
    const Tensor& hv = t.value(h);
    int64_t bq = hv.dim(0);
    h = t.view(h, {bq, hv.dim(1) * hv.dim(2), hv.dim(3)});
    h = t.mean_axis1(h);  // global average pool
    Var proj = t.param(*params_[pi]);
    return t.matmul(h, proj);
  }

 private:
  int final_spatial_ = 0;
  int final_channels_ = 0;
};

class TinyTransformer final : public Encoder {
 public:
  TinyTransformer(EncoderConfig cfg, uint64_t seed) : Encoder(std::move(cfg)) {
    config_.validate();
    Rng rng(mix_seed(seed, 0x74666d72));
    int w = config_.tf_width;
    int64_t d0 = static_cast<int64_t>(config_.tf_patch) * config_.tf_patch * 3;
    int64_t tmax = static_cast<int64_t>(config_.input_size / config_.tf_patch) *
                   (config_.input_size / config_.tf_patch);
    max_tokens_ = tmax;
    add_param(kaiming_uniform({d0, w}, d0, rng), "embed.w");
    add_param(Tensor::zeros({w}), "embed.b");
    add_param(kaiming_uniform({tmax, w}, w, rng), "pos");
    for (int bi = 0; bi < config_.tf_blocks; ++bi) {
      std::string pre = "block" + std::to_string(bi) + ".";
      add_param(Tensor::full({w}, 1.0f), pre + "ln1.g");
      add_param(Tensor::zeros({w}), pre + "ln1.b");
      add_param(kaiming_uniform({w, w}, w, rng), pre + "wq");
      add_param(Tensor::zeros({w}), pre + "bq");
      add_param(kaiming_uniform({w, w}, w, rng), pre + "wk");
      add_param(Tensor::zeros({w}), pre + "bk");
      add_param(kaiming_uniform({w, w}, w, rng), pre + "wv");
      add_param(Tensor::zeros({w}), pre + "bv");
      add_param(kaiming_uniform({w, w}, w, rng), pre + "wo");
      add_param(Tensor::zeros({w}), pre + "bo");
      add_param(Tensor::full({w}, 1.0f), pre + "ln2.g");
      add_param(Tensor::zeros({w}), pre + "ln2.b");
      int hidden = w * config_.tf_mlp_ratio;
      add_param(kaiming_uniform({w, hidden}, w, rng), pre + "mlp1.w");
      add_param(Tensor::zeros({hidden}), pre + "mlp1.b");
      add_param(kaiming_uniform({hidden, w}, hidden, rng), pre + "mlp2.w");
      add_param(Tensor::zeros({w}), pre + "mlp2.b");
    }
    add_param(Tensor::full({w}, 1.0f), "ln_f.g");
    add_param(Tensor::zeros({w}), "ln_f.b");
    add_param(kaiming_uniform({w, config_.embedding_dim}, w, rng), "proj.w");
  }

  Var forward(Tape& t, Var images) override {
    auto blocks = forward_blocks_impl(t, images, nullptr);
    return blocks;
  }

  std::vector<Var> forward_blocks(Tape& t, Var images) override {
    std::vector<Var> pooled;
    forward_blocks_impl(t, images, &pooled);
    return pooled;
  }

 private:
  Var forward_blocks_impl(Tape& t, Var images, std::vector<Var>* pooled_out) {
    const Tensor& x = t.value(images);
    if (x.rank() != 4 || x.dim(3) != 3) throw ShapeError("transformer: batch must be [b,s,s,3]");
    int64_t s = x.dim(1);
    if (x.dim(2) != s || s % config_.tf_patch != 0)
      throw ShapeError("transformer: input must be square and divisible by patch");
    int64_t b = x.dim(0);
    int64_t ntok = (s / config_.tf_patch) * (s / config_.tf_patch);
    if (ntok > max_tokens_) throw ShapeError("transformer: input larger than configured size");
    int64_t w = config_.tf_width;

    size_t pi = 0;
    Var embed_w = t.param(*params_[pi++]);
    Var embed_b = t.param(*params_[pi++]);
    Var pos = t.param(*params_[pi++]);

    Var h = t.patchify(images, config_.tf_patch);        // [b, ntok, d0]
    h = t.view(h, {b * ntok, t.value(h).dim(2)});
    h = t.add_bias(t.matmul(h, embed_w), embed_b);       // [b*ntok, w]
    // Positional term: first ntok rows of the learned table.
    Var ptab = t.slice_rows(pos, 0, ntok);               // [ntok, w]
    h = t.view(h, {b, ntok * w});
    Var prow = t.view(ptab, {1, ntok * w});
    // broadcast add over the batch
    h = addBroadcastRow(t, h, prow, b);
    h = t.view(h, {b, ntok, w});

    float scale = 1.0f / std::sqrt(static_cast<float>(w));
    for (int bi = 0; bi < config_.tf_blocks; ++bi) {
      Var ln1g = t.param(*params_[pi++]);
      Var ln1b = t.param(*params_[pi++]);
      Var wq = t.param(*params_[pi++]);
      Var bq = t.param(*params_[pi++]);
      Var wk = t.param(*params_[pi++]);
      Var bk = t.param(*params_[pi++]);
      Var wv = t.param(*params_[pi++]);
      Var bv = t.param(*params_[pi++]);
      Var wo = t.param(*params_[pi++]);
      Var bo = t.param(*params_[pi++]);
      Var ln2g = t.param(*params_[pi++]);
      Var ln2b = t.param(*params_[pi++]);
      Var m1w = t.param(*params_[pi++]);
      Var m1b = t.param(*params_[pi++]);
      Var m2w = t.param(*params_[pi++]);
      Var m2b = t.param(*params_[pi++]);

      Var xn = t.layer_norm(h, ln1g, ln1b);
      Var flat = t.view(xn, {b * ntok, w});
      Var q = t.view(t.add_bias(t.matmul(flat, wq), bq), {b, ntok, w});
      Var k = t.view(t.add_bias(t.matmul(flat, wk), bk), {b, ntok, w});
      Var v = t.view(t.add_bias(t.matmul(flat, wv), bv), {b, ntok, w});
      Var scores = t.scale(t.bmm_nt(q, k), scale);       // [b, ntok, ntok]
      Var attn = t.view(t.softmax_rows(t.view(scores, {b * ntok, ntok})), {b, ntok, ntok});
      Var y = t.bmm(attn, v);                            // [b, ntok, w]
      y = t.view(t.add_bias(t.matmul(t.view(y, {b * ntok, w}), wo), bo), {b, ntok, w});
      h = t.add(h, y);

      Var hn = t.layer_norm(h, ln2g, ln2b);
      Var m = t.view(hn, {b * ntok, w});
      m = t.gelu(t.add_bias(t.matmul(m, m1w), m1b));
      m = t.add_bias(t.matmul(m, m2w), m2b);
      h = t.add(h, t.view(m, {b, ntok, w}));

      if (pooled_out) pooled_out->push_back(t.mean_axis1(h));
    }

    Var lnfg = t.param(*params_[pi++]);
    Var lnfb = t.param(*params_[pi++]);
    Var proj = t.param(*params_[pi++]);
    Var hf = t.layer_norm(h, lnfg, lnfb);
    Var pooled = t.mean_axis1(hf);                        // [b, w]
    return t.matmul(pooled, proj);
  }

  // x: [b, k] + row: [1, k] replicated over the batch.
  static Var addBroadcastRow(Tape& t, Var x, Var row, int64_t b) {
    // Implemented with matmul against a column of ones so the gradient
    // reaches the row parameter without a dedicated op.
    Tensor ones({b, 1});
    ones.fill(1.0f);
    Var onescol = t.leaf(std::move(ones), false);
    Var tiled = t.matmul(onescol, row);  // [b, k]
    return t.add(x, tiled);
  }

  int64_t max_tokens_ = 0;
};

}  // namespace

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg, uint64_t seed) {
  cfg.validate();
  if (cfg.architecture == Architecture::small_conv)
    return std::make_unique<ConvEncoder>(cfg, seed);
  return std::make_unique<TinyTransformer>(cfg, seed);
}

void SGDConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
  if (weight_decay < 0.0 || !std::isfinite(weight_decay))
    throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

SgdOptimizer::SgdOptimizer(std::vector<Parameter*> params, SGDConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  velocity_.reserve(params_.size());
  for (const Parameter* p : params_) velocity_.push_back(Tensor::zeros(p->value.shape()));
}

void SgdOptimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void SgdOptimizer::step(double lr_now) {
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    Tensor& v = velocity_[i];
    for (int64_t j = 0; j < p.value.numel(); ++j) {
      double vel = cfg_.momentum * v[j] + p.grad[j] + cfg_.weight_decay * p.value[j];
      v[j] = static_cast<float>(vel);
      p.value[j] = static_cast<float>(p.value[j] - lr_now * vel);
    }
  }
}

double cosine_lr(int64_t step, int64_t total_steps, double base_lr) {
  if (total_steps <= 0) throw ConfigError("total_steps must be positive");
  if (step < 0 || step > total_steps) throw ConfigError("step outside [0, total_steps]");
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps)));
}

double step_lr(int64_t epoch, int64_t total_epochs, double base_lr,
               const std::vector<double>& milestones, double factor) {
  if (total_epochs <= 0) throw ConfigError("total_epochs must be positive");
  if (epoch < 0 || epoch >= total_epochs) throw ConfigError("epoch outside [0, total_epochs)");
  int passed = 0;
  for (double m : milestones)
    if (static_cast<double>(epoch) + 1e-9 >= m * static_cast<double>(total_epochs)) ++passed;
  return base_lr * std::pow(factor, passed);
}

double clip_global_norm(const std::vector<Parameter*>& params, double max_norm) {
  double acc = 0.0;
  for (const Parameter* p : params)
    for (int64_t i = 0; i < p->grad.numel(); ++i)
      acc += static_cast<double>(p->grad[i]) * p->grad[i];
  double norm = std::sqrt(acc);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (const Parameter* p : params) {
      Tensor& g = const_cast<Parameter*>(p)->grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = static_cast<float>(g[i] * s);
    }
  }
  return norm;
}

namespace {

void write_u64le(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("checkpoint truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const json& config, int64_t step,
                     const std::vector<Parameter*>& params) {
  json header;
  header["config"] = config;
  header["step"] = step;
  json plist = json::array();
  for (const Parameter* p : params) plist.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  header["params"] = plist;
  std::string hs = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  write_u64le(os, hs.size());
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const Parameter* p : params)
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.numel() * sizeof(float)));
  if (!os) throw IoError("checkpoint write failed: " + path.string());
}

CheckpointInfo load_checkpoint(const std::filesystem::path& path, std::vector<Parameter*>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  uint64_t hlen = read_u64le(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw IoError("checkpoint header truncated");
  json header = json::parse(hs);
  const json& plist = header.at("params");
  if (plist.size() != params.size()) throw ConfigError("checkpoint parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    auto shape = plist[i].at("shape").get<std::vector<int64_t>>();
    if (shape != params[i]->value.shape()) throw ConfigError("checkpoint shape mismatch at " + params[i]->name);
    is.read(reinterpret_cast<char*>(params[i]->value.data()),
            static_cast<std::streamsize>(params[i]->value.numel() * sizeof(float)));
    if (!is) throw IoError("checkpoint blob truncated at " + params[i]->name);
  }
  CheckpointInfo info;
  info.config = header.at("config");
  info.step = header.at("step").get<int64_t>();
  info.params = header.at("params");
  return info;
}

CheckpointInfo peek_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  uint64_t hlen = read_u64le(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw IoError("checkpoint header truncated");
  json header = json::parse(hs);
  CheckpointInfo info;
  info.config = header.at("config");
  info.step = header.at("step").get<int64_t>();
  info.params = header.at("params");
  return info;
}

}  // namespace geossl
