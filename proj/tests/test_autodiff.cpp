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

#include "doctest.h"

#include "geossl/autodiff.hpp"
#include "geossl/error.hpp"
#include "support.hpp"

using namespace geossl;
using namespace geossl::testing;

namespace {

// Random projection to a scalar so every output coordinate contributes.
Var project(Tape& t, Var x, uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(t.value(x).shape(), rng, 0.5f, 1.5f);
  return t.sum(t.mul(x, t.leaf(std::move(w), false)));
}

}  // namespace

TEST_CASE("elementwise and linear op gradients") {
  Rng rng(101);
  SUBCASE("add/sub/mul/scale") {
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto r = grad_check({a, b}, [](Tape& t, const std::vector<Var>& v) {
      Var s = t.add(v[0], v[1]);
      s = t.sub(s, t.mul(v[0], v[1]));
      return project(t, t.scale(s, 0.7f), 5);
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
  SUBCASE("matmul / matmul_nt") {
    auto a = random_tensor({3, 5}, rng);
    auto b = random_tensor({5, 4}, rng);
    auto c = random_tensor({4, 5}, rng);
    auto r = grad_check({a, b, c}, [](Tape& t, const std::vector<Var>& v) {
      Var y = t.matmul(v[0], v[1]);       // [3,4]
      Var z = t.matmul_nt(v[0], v[2]);    // [3,4]
      return project(t, t.add(y, z), 6);
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
  SUBCASE("bmm / bmm_nt") {
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({2, 4, 3}, rng);
    auto r = grad_check({a, b}, [](Tape& t, const std::vector<Var>& v) {
      Var y = t.bmm(v[0], v[1]);      // [2,3,3]
      Var z = t.bmm_nt(v[0], v[0]);   // [2,3,3]
      return project(t, t.add(y, z), 7);
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
  SUBCASE("add_bias") {
    auto x = random_tensor({4, 6}, rng);
    auto b = random_tensor({6}, rng);
    auto r = grad_check({x, b}, [](Tape& t, const std::vector<Var>& v) {
      return project(t, t.add_bias(v[0], v[1]), 8);
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
}

TEST_CASE("activation gradients") {
  Rng rng(102);
  SUBCASE("relu off-kink") {
    auto x = random_tensor_off_kink({5, 5}, rng, 0.05f);
    auto r = grad_check({x}, [](Tape& t, const std::vector<Var>& v) {
      return project(t, t.relu(v[0]), 9);
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
  SUBCASE("gelu") {
    auto x = random_tensor({5, 5}, rng, -2.0f, 2.0f);
    auto r = grad_check({x}, [](Tape& t, const std::vector<Var>& v) {
      return project(t, t.gelu(v[0]), 10);
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
}

TEST_CASE("shape op gradients") {
  Rng rng(103);
  SUBCASE("view + concat_cols + slice_rows") {
    auto a = random_tensor({4, 6}, rng);
    auto b = random_tensor({4, 3}, rng);
    auto r = grad_check({a, b}, [](Tape& t, const std::vector<Var>& v) {
      Var y = t.concat_cols(v[0], v[1]);      // [4,9]
      Var s = t.slice_rows(y, 1, 2);          // [2,9]
      return project(t, t.view(s, {3, 6}), 11);
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
  SUBCASE("patchify") {
    auto x = random_tensor({2, 8, 8, 3}, rng);
    auto r = grad_check({x}, [](Tape& t, const std::vector<Var>& v) {
      return project(t, t.patchify(v[0], 4), 12);
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
}

TEST_CASE("reduction and normalization gradients") {
  Rng rng(104);
  SUBCASE("mean_axis1 / sum / mean / row_dot") {
    auto a = random_tensor({3, 4, 5}, rng);
    auto b = random_tensor({3, 5}, rng);
    auto r = grad_check({a, b}, [](Tape& t, const std::vector<Var>& v) {
      Var m = t.mean_axis1(v[0]);                   // [3,5]
      Var d = t.row_dot(m, v[1]);                   // [3,1]
      return t.add(t.mean(d), t.scale(t.sum(v[1]), 0.01f));
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
  SUBCASE("l2_normalize_rows") {
    auto x = random_tensor({4, 6}, rng, 0.3f, 1.5f);
    auto r = grad_check({x}, [](Tape& t, const std::vector<Var>& v) {
      return project(t, t.l2_normalize_rows(v[0]), 13);
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
  SUBCASE("softmax_rows") {
    auto x = random_tensor({4, 7}, rng, -2.0f, 2.0f);
    auto r = grad_check({x}, [](Tape& t, const std::vector<Var>& v) {
      return project(t, t.softmax_rows(v[0]), 14);
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
  SUBCASE("layer_norm") {
    auto x = random_tensor({3, 8}, rng, -1.5f, 1.5f);
    auto g = random_tensor({8}, rng, 0.5f, 1.5f);
    auto b = random_tensor({8}, rng);
    auto r = grad_check({x, g, b}, [](Tape& t, const std::vector<Var>& v) {
      return project(t, t.layer_norm(v[0], v[1], v[2]), 15);
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
}

TEST_CASE("conv2d gradients and shapes") {
  Rng rng(105);
  auto x = random_tensor({2, 6, 6, 2}, rng);
  auto w = random_tensor({3 * 3 * 2, 4}, rng, -0.5f, 0.5f);
  auto b = random_tensor({4}, rng);
  auto r = grad_check({x, w, b}, [](Tape& t, const std::vector<Var>& v) {
    return project(t, t.conv2d(v[0], v[1], v[2], 3, 2, 1), 16);
  });
  CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);

  Tape t;
  Var xv = t.leaf(x, false);
  Var wv = t.leaf(w, false);
  Var bv = t.leaf(b, false);
  Var y = t.conv2d(xv, wv, bv, 3, 2, 1);
  CHECK(t.value(y).shape() == std::vector<int64_t>{2, 3, 3, 4});
  CHECK_THROWS_AS(t.conv2d(xv, wv, t.leaf(Tensor::zeros({5}), false), 3, 2, 1), ShapeError);
}

TEST_CASE("loss op gradients") {
  Rng rng(106);
  SUBCASE("softmax_xent") {
    auto x = random_tensor({5, 6}, rng, -2.0f, 2.0f);
    std::vector<int64_t> labels = {0, 3, 5, 2, 1};
    auto r = grad_check({x}, [labels](Tape& t, const std::vector<Var>& v) {
      return t.softmax_xent(v[0], labels);
    });
    CHECK_MESSAGE(r.ok, r.where, " rel=", r.worst_rel);
  }
  SUBCASE("soft_xent") {
    auto x = random_tensor({4, 5}, rng, -2.0f, 2.0f);
    Rng prng(33);
    Tensor probs = random_tensor({4, 5}, prng, 0.05f, 1.0f);
    for (int64_t i = 0; i < 4; ++i) {
      float s = 0;
      for (int64_t j = 0; j < 5; ++j) s += probs[i * 5 + j];
      for (int64_t j = 0; j < 5; ++j) probs[i * 5 + j] /= s;
    }
    auto r = grad_check({x}, [probs](Tape& t, const std::vector<Var>& v) {
      return t.soft_xent(v[0], probs);
    });
    CHECK_MESSAGE(r.ok, r.worst_rel);
  }
}

TEST_CASE("softmax_xent matches a hand-rolled value") {
  Tape t;
  Tensor logits = Tensor::from_values({2, 3}, {1.0f, 2.0f, 3.0f, 0.0f, 0.0f, 0.0f});
  Var loss = t.softmax_xent(t.leaf(logits, false), {2, 0});
  // Row 0: lse = log(e^1 + e^2 + e^3), loss = lse - 3. Row 1: log(3).
  double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  double expected = ((lse - 3.0) + std::log(3.0)) / 2.0;
  CHECK(t.value(loss)[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("backward guards") {
  Tape t;
  CHECK_THROWS_AS(t.backward(Var{}), StateError);
  Var a = t.leaf(Tensor::from_values({2}, {1.0f, 2.0f}), true);
  CHECK_THROWS_AS(t.backward(a), ShapeError);  // not a scalar
  Var s = t.sum(a);
  t.backward(s);
  CHECK(t.grad_of(a)[0] == 1.0f);
  CHECK(t.grad_of(a)[1] == 1.0f);
  CHECK_THROWS_AS(t.backward(s), StateError);  // second sweep
}

TEST_CASE("gradients sum across shared parameter uses") {
  Parameter w(Tensor::from_values({2}, {1.0f, 2.0f}), "w");
  Tape t;
  Var a = t.param(w);
  Var b = t.param(w);  // same node
  CHECK(a.id == b.id);
  Var loss = t.sum(t.add(a, b));
  t.backward(loss);
  t.sync_param_grads();
  CHECK(w.grad[0] == 2.0f);  // used twice
}

TEST_CASE("no gradient flows into non-trainable parameters") {
  Parameter w(Tensor::from_values({2}, {1.0f, 2.0f}), "w", /*train=*/false);
  Tape t;
  Var a = t.param(w);
  Var loss = t.sum(a);
  t.backward(loss);
  t.sync_param_grads();
  CHECK(w.grad[0] == 0.0f);
  CHECK_FALSE(t.requires_grad(a));
}

TEST_CASE("forward determinism") {
  Rng rng(107);
  auto x = random_tensor({2, 8, 8, 3}, rng);
  auto w = random_tensor({27, 8}, rng);
  auto b = random_tensor({8}, rng);
  auto run = [&]() {
    Tape t;
    Var y = t.conv2d(t.leaf(x, false), t.leaf(w, false), t.leaf(b, false), 3, 1, 1);
    return t.value(t.sum(t.gelu(y)))[0];
  };
  float v1 = run();
  float v2 = run();
  CHECK(v1 == v2);  // bitwise
}
