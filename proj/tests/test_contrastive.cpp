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

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "geossl/contrastive.hpp"
#include "geossl/error.hpp"
#include "geossl/tiles.hpp"
#include "support.hpp"

using namespace geossl;
using namespace geossl::testing;

namespace {

Tensor basis_rows(int64_t n, int64_t d, int64_t first_axis) {
  Tensor t({n, d});
  for (int64_t i = 0; i < n; ++i) t[i * d + (first_axis + i) % d] = 1.0f;
  return t;
}

}  // namespace

TEST_CASE("negative queue FIFO") {
  SUBCASE("two half-capacity enqueues fill the queue and wrap the cursor") {
    NegativeQueue q(4, 3);
    q.enqueue(basis_rows(2, 3, 0));
    CHECK(q.write_cursor() == 2);
    CHECK_FALSE(q.full());
    q.enqueue(basis_rows(2, 3, 1));
    CHECK(q.write_cursor() == 0);
    CHECK(q.full());
    CHECK(q.occupancy() == 4);
  }
  SUBCASE("K/B consecutive enqueues overwrite every slot exactly once") {
    NegativeQueue q(8, 4);
    for (int round = 0; round < 2; ++round) q.enqueue(basis_rows(4, 4, round));
    // Slots 0..3 from round 0, slots 4..7 from round 1.
    for (int64_t slot = 0; slot < 8; ++slot) {
      int64_t round = slot / 4;
      int64_t within = slot % 4;
      for (int64_t j = 0; j < 4; ++j) {
        float want = ((round + within) % 4 == j) ? 1.0f : 0.0f;
        CHECK(q.entries()[slot * 4 + j] == want);
      }
    }
  }
  SUBCASE("stored rows are bitwise equal to inputs") {
    Rng rng(3);
    Tensor keys = random_unit_rows(4, 16, rng);
    NegativeQueue q(4, 16);
    q.enqueue(keys);
    for (int64_t i = 0; i < keys.numel(); ++i) CHECK(q.entries()[i] == keys[i]);
  }
  SUBCASE("oversized batches rejected") {
    NegativeQueue q(4, 8);
    Rng rng(4);
    CHECK_THROWS_AS(q.enqueue(random_unit_rows(5, 8, rng)), ConfigError);
  }
  SUBCASE("non-normalized keys rejected when debug checks are on") {
    NegativeQueue q(4, 8);
    Tensor bad({2, 8});
    bad.fill(2.0f);
    CHECK_THROWS_AS(q.enqueue(bad), ValidationError);
  }
}

TEST_CASE("info_nce closed forms") {
  SUBCASE("query equals positive, queue orthogonal, tau=0.07, K=8") {
    int64_t d = 16, k = 8;
    Tensor q = basis_rows(1, d, 0);
    Tensor queue = basis_rows(k, d, 1);  // all orthogonal to q
    Tape t;
    Var loss = info_nce_loss(t, t.leaf(q, true), t.leaf(q, false), queue, 0.07);
    // Closed form: log(1 + K exp(-1/tau)) ~= 4.99896e-6.
    double expected = std::log1p(8.0 * std::exp(-1.0 / 0.07));
    CHECK(expected == doctest::Approx(4.999e-6).epsilon(1e-3));
    CHECK(t.value(loss)[0] == doctest::Approx(expected).epsilon(1e-4));
  }
  SUBCASE("all similarities equal gives ln(K+1)") {
    int64_t d = 4, k = 6;
    Tensor q = basis_rows(1, d, 0);
    Tensor queue({k, d});
    for (int64_t i = 0; i < k; ++i) queue[i * d] = 1.0f;  // same direction as q
    Tape t;
    Var loss = info_nce_loss(t, t.leaf(q, true), t.leaf(q, false), queue, 0.2);
    CHECK(t.value(loss)[0] == doctest::Approx(std::log(7.0)).epsilon(1e-6));
  }
  SUBCASE("matches the brute-force oracle on fuzzed inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      int64_t b = 1 + rng.uniform_int(0, 7);
      int64_t d = 4 + rng.uniform_int(0, 28);
      int64_t k = 1 + rng.uniform_int(0, 63);
      double tau = rng.uniform(0.05, 1.0);
      Tensor q = random_unit_rows(b, d, rng);
      Tensor kpos = random_unit_rows(b, d, rng);
      Tensor queue = random_unit_rows(k, d, rng);
      Tape t;
      Var loss = info_nce_loss(t, t.leaf(q, true), t.leaf(kpos, false), queue, tau);
      double oracle = info_nce_oracle(q, kpos, queue, tau);
      CHECK(std::abs(t.value(loss)[0] - oracle) < 1e-6);
    }
  }
  SUBCASE("invariant under queue row permutation") {
    Rng rng(6);
    Tensor q = random_unit_rows(4, 8, rng);
    Tensor kpos = random_unit_rows(4, 8, rng);
    Tensor queue = random_unit_rows(16, 8, rng);
    Tensor shuffled = queue;
    std::vector<int64_t> perm(16);
    for (int64_t i = 0; i < 16; ++i) perm[static_cast<size_t>(i)] = i;
    for (int64_t i = 15; i > 0; --i)
      std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.uniform_int(0, i))]);
    for (int64_t i = 0; i < 16; ++i)
      for (int64_t j = 0; j < 8; ++j)
        shuffled[i * 8 + j] = queue[perm[static_cast<size_t>(i)] * 8 + j];

    Tape t1, t2;
    float a = t1.value(info_nce_loss(t1, t1.leaf(q, true), t1.leaf(kpos, false), queue, 0.2))[0];
    float b = t2.value(info_nce_loss(t2, t2.leaf(q, true), t2.leaf(kpos, false), shuffled, 0.2))[0];
    CHECK(std::abs(a - b) < 1e-6);
  }
  SUBCASE("contract checks") {
    Tensor q({2, 4});
    q.fill(3.0f);  // not unit
    Tape t;
    CHECK_THROWS_AS(info_nce_loss(t, t.leaf(q, true), t.leaf(q, false), basis_rows(2, 4, 0), 0.2),
                    ValidationError);
    Tensor u = basis_rows(2, 4, 0);
    Tape t2;
    CHECK_THROWS_AS(info_nce_loss(t2, t2.leaf(u, true), t2.leaf(u, false), basis_rows(2, 4, 0), 0.0),
                    ConfigError);
  }
  SUBCASE("gradient flows to q and k_pos but not the queue") {
    Rng rng(7);
    Tensor q = random_unit_rows(3, 8, rng);
    Tensor kpos = random_unit_rows(3, 8, rng);
    Tensor queue = random_unit_rows(8, 8, rng);
    // FD perturbations knock rows off unit norm; the contract check must
    // not fire during the sweep.
    set_debug_checks(false);
    auto r = grad_check({q, kpos}, [&queue](Tape& t, const std::vector<Var>& v) {
      return info_nce_loss(t, v[0], v[1], queue, 0.3);
    }, 2e-2, 2e-3, 0.05);
    set_debug_checks(true);
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
}

TEST_CASE("momentum update") {
  auto make_param = [](std::vector<float> v) {
    int64_t n = static_cast<int64_t>(v.size());
    return Parameter(Tensor::from_values({n}, std::move(v)), "p");
  };
  SUBCASE("m=1 leaves the key untouched, bitwise") {
    Parameter k = make_param({0.25f, -1.5f, 3.0f});
    Parameter q = make_param({9.0f, 9.0f, 9.0f});
    Parameter* kp = &k;
    Parameter* qp = &q;
    momentum_update(std::span<Parameter* const>(&kp, 1), std::span<Parameter* const>(&qp, 1), 1.0);
    CHECK(k.value[0] == 0.25f);
    CHECK(k.value[1] == -1.5f);
    CHECK(k.value[2] == 3.0f);
  }
  SUBCASE("m=0 copies the query exactly") {
    Parameter k = make_param({1.0f, 2.0f});
    Parameter q = make_param({-0.5f, 4.0f});
    Parameter* kp = &k;
    Parameter* qp = &q;
    momentum_update(std::span<Parameter* const>(&kp, 1), std::span<Parameter* const>(&qp, 1), 0.0);
    CHECK(k.value[0] == -0.5f);
    CHECK(k.value[1] == 4.0f);
  }
  SUBCASE("fixed query: difference decays geometrically") {
    Parameter k = make_param({1.0f});
    Parameter q = make_param({0.0f});
    Parameter* kp = &k;
    Parameter* qp = &q;
    double m = 0.999;
    for (int step = 1; step <= 200; ++step) {
      momentum_update(std::span<Parameter* const>(&kp, 1), std::span<Parameter* const>(&qp, 1), m);
      double expected = std::pow(m, step);
      CHECK(std::abs(k.value[0] - expected) < 1e-5);
    }
  }
  SUBCASE("mismatched lists rejected") {
    Parameter k = make_param({1.0f});
    Parameter* kp = &k;
    CHECK_THROWS_AS(
        momentum_update(std::span<Parameter* const>(&kp, 1), std::span<Parameter* const>(), 0.9),
        ConfigError);
  }
}

namespace {

struct TinyDataset {
  DatasetManifest manifest;
  std::vector<Tensor> tiles;           // raw train tiles
  std::vector<int> labels;
  BatchSource source(int batch, uint64_t seed) {
    auto tiles_copy = tiles;
    int n = static_cast<int>(tiles.size());
    return [tiles_copy, n, batch, seed](int64_t ordinal) {
      Rng rng(mix_seed(seed, static_cast<uint64_t>(ordinal)));
      std::vector<Tensor> out;
      out.reserve(static_cast<size_t>(batch));
      for (int i = 0; i < batch; ++i)
        out.push_back(tiles_copy[static_cast<size_t>(rng.uniform_int(0, n - 1))]);
      return out;
    };
  }
};

TinyDataset tiny_synthetic_dataset(int cities, int per_city, Domain domain, uint64_t seed) {
  TinyDataset ds;
  ManifestOptions opts;
  opts.size_px = 48;
  ds.manifest = build_manifest(make_synthetic_cities(cities, seed), per_city, 0.75, seed, opts);
  TileLoadOptions load;
  auto idx = domain_record_indices(ds.manifest, domain);
  std::vector<int64_t> wanted;
  for (size_t i = 0; i < idx.size(); ++i) {
    const auto& rec = ds.manifest.records[static_cast<size_t>(idx[i])];
    if (rec.split == Split::train) wanted.push_back(static_cast<int64_t>(i));
  }
  auto imgs = load_batch(ds.manifest, wanted, domain, load);
  for (auto& img : imgs) ds.tiles.push_back(image_to_tensor(img));
  return ds;
}

// Mean within-class and between-class cosine similarity of embeddings.
std::pair<double, double> class_similarities(const Tensor& emb, const std::vector<int>& labels) {
  int64_t n = emb.dim(0), d = emb.dim(1);
  Tensor norm = emb;
  l2_normalize_rows_inplace(norm);
  double within = 0, between = 0;
  int64_t nw = 0, nb = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      double dot = 0;
      for (int64_t k = 0; k < d; ++k) dot += static_cast<double>(norm[i * d + k]) * norm[j * d + k];
      if (labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)]) {
        within += dot;
        ++nw;
      } else {
        between += dot;
        ++nb;
      }
    }
  return {within / std::max<int64_t>(1, nw), between / std::max<int64_t>(1, nb)};
}

}  // namespace

TEST_CASE("pretrain_step contracts") {
  EncoderConfig enc;
  enc.input_size = 16;
  enc.conv_layers = {{8, 3, 2}, {16, 3, 2}};
  enc.embedding_dim = 16;

  PretrainConfig cfg = PretrainConfig::v2_defaults();
  cfg.batch_size = 4;
  cfg.queue_size = 16;
  cfg.view_px = 16;
  cfg.steps = 4;
  cfg.seed = 3;

  ContrastiveTrainer trainer(cfg, enc);
  Rng rng(8);
  std::vector<Tensor> images;
  for (int i = 0; i < 4; ++i) images.push_back(random_tensor({48, 48, 3}, rng, 0.0f, 1.0f));

  SUBCASE("warmup fills the queue without touching weights") {
    uint64_t before = trainer.query_encoder().checksum();
    SgdOptimizer opt(trainer.pair().query_params(), SGDConfig{0.1, 0.9, 0.0, 4});
    auto stats =
        pretrain_step(images, trainer.pair(), trainer.queue(), cfg.recipe(), opt, 0.1, cfg.tau,
                      5.0, 99);
    CHECK(stats.warmup);
    CHECK(trainer.queue().occupancy() == 4);
    CHECK(trainer.query_encoder().checksum() == before);
  }
}

TEST_CASE("pretrain loop: stop-gradient, loss band, learning trend") {
  set_debug_checks(true);
  EncoderConfig enc;
  enc.input_size = 24;
  enc.conv_layers = {{8, 3, 2}, {16, 3, 2}, {32, 3, 2}};
  enc.embedding_dim = 64;

  PretrainConfig cfg = PretrainConfig::v2_defaults();
  cfg.steps = 200;
  cfg.batch_size = 16;
  cfg.queue_size = 256;
  cfg.view_px = 24;
  cfg.base_lr = 0.08;
  cfg.seed = 11;

  auto ds = tiny_synthetic_dataset(8, 16, Domain::satellite, 5);
  ContrastiveTrainer trainer(cfg, enc);
  auto log = trainer.run(ds.source(cfg.batch_size, 21));
  REQUIRE(log.size() == 200);

  SUBCASE("key side never accumulates gradient") {
    for (Parameter* p : trainer.pair().key_params())
      for (int64_t i = 0; i < p->grad.numel(); ++i) CHECK(p->grad[i] == 0.0f);
  }
  SUBCASE("queue stays full with unit-norm entries") {
    CHECK(trainer.queue().full());
    const Tensor& e = trainer.queue().entries();
    for (int64_t i = 0; i < e.dim(0); ++i) {
      double acc = 0;
      for (int64_t j = 0; j < e.dim(1); ++j) acc += static_cast<double>(e[i * 64 + j]) * e[i * 64 + j];
      CHECK(std::abs(std::sqrt(acc) - 1.0) < 1e-5);
    }
  }
  SUBCASE("initial loss sits in the near-uniform band") {
    // At random init similarities are nearly uniform, so the loss is close
    // to ln(K+1).
    double band = std::log(static_cast<double>(cfg.queue_size) + 1.0);
    CHECK(log[0].loss > 0.5 * band);
    CHECK(log[0].loss < 1.5 * band);
  }
  SUBCASE("median loss decreases from the first 50 to the last 50 steps") {
    auto median = [](std::vector<float> v) {
      std::sort(v.begin(), v.end());
      return v[v.size() / 2];
    };
    std::vector<float> first, last;
    for (int i = 0; i < 50; ++i) first.push_back(log[static_cast<size_t>(i)].loss);
    for (int i = 150; i < 200; ++i) last.push_back(log[static_cast<size_t>(i)].loss);
    CHECK(median(last) < median(first));
  }
  SUBCASE("embeddings separate the synthetic classes") {
    auto ds_labels = std::vector<int>();
    std::vector<Tensor> views;
    {
      auto pool = domain_record_indices(ds.manifest, Domain::satellite);
      TileLoadOptions load;
      std::vector<int64_t> wanted;
      std::vector<std::string> names;
      for (const auto& c : ds.manifest.cities) names.push_back(c.name);
      std::sort(names.begin(), names.end());
      std::unordered_map<std::string, int> label;
      for (size_t i = 0; i < names.size(); ++i) label[names[i]] = static_cast<int>(i);
      for (size_t i = 0; i < pool.size(); ++i) {
        const auto& rec = ds.manifest.records[static_cast<size_t>(pool[i])];
        if (rec.split != Split::test) continue;
        wanted.push_back(static_cast<int64_t>(i));
        ds_labels.push_back(label[rec.city_name]);
      }
      auto imgs = load_batch(ds.manifest, wanted, Domain::satellite, load);
      for (auto& img : imgs) {
        Tensor t = image_to_tensor(img);
        // deterministic center view at encoder size
        int64_t side = std::min(t.dim(0), t.dim(1));
        (void)side;
        views.push_back(resize_bilinear(t, 24, 24));
      }
    }
    Tape t;
    Var x = t.leaf(stack_images(views), false);
    Var e = trainer.query_encoder().forward(t, x);
    auto [within, between] = class_similarities(t.value(e), ds_labels);
    CHECK(within > between);
  }
}
