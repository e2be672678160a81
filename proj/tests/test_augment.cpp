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

#include <cmath>

#include "doctest.h"
#include "geossl/augment.hpp"
#include "geossl/error.hpp"
#include "support.hpp"

using namespace geossl;
using namespace geossl::testing;

namespace {

Tensor constant_image(int h, int w, float r, float g, float b) {
  Tensor t({h, w, 3});
  for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
    t[i * 3] = r;
    t[i * 3 + 1] = g;
    t[i * 3 + 2] = b;
  }
  return t;
}

double image_mean(const Tensor& t) {
  double acc = 0;
  for (int64_t i = 0; i < t.numel(); ++i) acc += t[i];
  return acc / static_cast<double>(t.numel());
}

}  // namespace

TEST_CASE("random_resized_crop") {
  Rng rng(1);
  SUBCASE("shape contract") {
    Tensor img = random_tensor({256, 256, 3}, rng, 0.0f, 1.0f);
    Tensor out = random_resized_crop(img, 0.2, 1.0, 64, rng);
    CHECK(out.shape() == std::vector<int64_t>{64, 64, 3});
  }
  SUBCASE("full-scale fixed-aspect crop is a plain resize") {
    Tensor img = random_tensor({32, 32, 3}, rng, 0.0f, 1.0f);
    Rng r2(5);
    Tensor out = random_resized_crop(img, 1.0, 1.0, 32, r2, 1.0, 1.0);
    for (int64_t i = 0; i < img.numel(); ++i) CHECK(out[i] == img[i]);  // bit exact
  }
  SUBCASE("constant image stays constant") {
    Tensor img = constant_image(64, 64, 0.3f, 0.6f, 0.9f);
    Tensor out = random_resized_crop(img, 0.3, 0.9, 24, rng);
    for (int64_t i = 0; i < out.numel(); i += 3) {
      CHECK(out[i] == doctest::Approx(0.3f));
      CHECK(out[i + 1] == doctest::Approx(0.6f));
      CHECK(out[i + 2] == doctest::Approx(0.9f));
    }
  }
  SUBCASE("tiny images rejected, bad scales rejected") {
    Tensor small = constant_image(4, 4, 0, 0, 0);
    CHECK_THROWS_AS(random_resized_crop(small, 0.5, 1.0, 8, rng), ConfigError);
    Tensor img = constant_image(32, 32, 0, 0, 0);
    CHECK_THROWS_AS(random_resized_crop(img, 0.0, 1.0, 8, rng), ConfigError);
    CHECK_THROWS_AS(random_resized_crop(img, 0.5, 1.5, 8, rng), ConfigError);
  }
}

TEST_CASE("color_jitter") {
  Rng rng(2);
  SUBCASE("zero strengths are the identity") {
    Tensor img = random_tensor({16, 16, 3}, rng, 0.0f, 1.0f);
    Rng r2(9);
    Tensor out = color_jitter(img, 0, 0, 0, 0, r2);
    for (int64_t i = 0; i < img.numel(); ++i) CHECK(out[i] == img[i]);
  }
  SUBCASE("pure brightness at factor 2 doubles a gray image") {
    // Strength 1 gives factors in [0,2]; find a draw close to 2 by seeding.
    Tensor img = constant_image(8, 8, 0.25f, 0.25f, 0.25f);
    // brightness-only via the deterministic op order check: set other
    // strengths to zero so only brightness acts, then scan seeds for a
    // factor essentially equal to 2.
    bool found = false;
    for (uint64_t s = 0; s < 4000 && !found; ++s) {
      Rng r(s);
      Tensor out = color_jitter(img, 1.0, 0, 0, 0, r);
      if (std::abs(out[0] - 0.5f) < 2e-4f) {
        found = true;
        for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(0.5f).epsilon(1e-3));
      }
    }
    CHECK(found);
  }
  SUBCASE("outputs stay in [0,1] under fuzz") {
    for (uint64_t s = 0; s < 30; ++s) {
      Rng r(s);
      Tensor img = random_tensor({12, 12, 3}, r, 0.0f, 1.0f);
      Tensor out = color_jitter(img, 0.8, 0.8, 0.8, 0.4, r);
      for (int64_t i = 0; i < out.numel(); ++i) {
        CHECK(out[i] >= 0.0f);
        CHECK(out[i] <= 1.0f);
      }
    }
  }
  SUBCASE("hue above 0.5 rejected") {
    Tensor img = constant_image(8, 8, 0.5f, 0.5f, 0.5f);
    CHECK_THROWS_AS(color_jitter(img, 0, 0, 0, 0.6, rng), ConfigError);
  }
}

TEST_CASE("random_grayscale") {
  Rng rng(3);
  Tensor red = constant_image(8, 8, 1.0f, 0.0f, 0.0f);
  SUBCASE("p=0 never applies") {
    Tensor out = random_grayscale(red, 0.0, rng);
    CHECK(out[0] == 1.0f);
    CHECK(out[1] == 0.0f);
  }
  SUBCASE("p=1 maps red to luma 0.299 in all channels") {
    Tensor out = random_grayscale(red, 1.0, rng);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(0.299f));
  }
  SUBCASE("already gray images are fixed points") {
    Tensor gray = constant_image(8, 8, 0.42f, 0.42f, 0.42f);
    Tensor out = random_grayscale(gray, 1.0, rng);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(0.42f));
  }
}

TEST_CASE("gaussian_blur") {
  Rng rng(4);
  SUBCASE("constant images are unchanged") {
    Tensor img = constant_image(16, 16, 0.7f, 0.2f, 0.9f);
    Tensor out = gaussian_blur(img, 1.0, 1.0, rng);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(img[i]).epsilon(1e-6));
  }
  SUBCASE("mean is preserved on interior-dominated images") {
    Rng r(11);
    Tensor img = random_tensor({64, 64, 3}, r, 0.0f, 1.0f);
    Tensor out = gaussian_blur(img, 1.5, 1.5, r);
    CHECK(std::abs(image_mean(out) - image_mean(img)) < 1e-3);
  }
  SUBCASE("minimum sigma barely moves pixels") {
    Rng r(12);
    Tensor img = random_tensor({32, 32, 3}, r, 0.0f, 1.0f);
    Tensor out = gaussian_blur(img, 0.1, 0.1, r);
    // radius ceil(0.3) = 1; off-center weight exp(-50) is negligible.
    float worst = 0;
    for (int64_t i = 0; i < img.numel(); ++i) worst = std::max(worst, std::abs(out[i] - img[i]));
    CHECK(worst < 1e-4f);
  }
  SUBCASE("sigma range validated") {
    Tensor img = constant_image(16, 16, 0.5f, 0.5f, 0.5f);
    CHECK_THROWS_AS(gaussian_blur(img, 0.0, 1.0, rng), ConfigError);
    CHECK_THROWS_AS(gaussian_blur(img, 1.0, 6.0, rng), ConfigError);
  }
}

TEST_CASE("make_views") {
  Rng rng(5);
  Tensor img = random_tensor({64, 64, 3}, rng, 0.0f, 1.0f);

  SUBCASE("identical rng seeds reproduce view pairs") {
    Rng a(404), b(404);
    auto va = make_views(img, AugmentRecipe::v2(32), a);
    auto vb = make_views(img, AugmentRecipe::v2(32), b);
    REQUIRE(va.views.size() == vb.views.size());
    for (size_t i = 0; i < va.views.size(); ++i)
      for (int64_t j = 0; j < va.views[i].numel(); ++j) CHECK(va.views[i][j] == vb.views[i][j]);
  }
  SUBCASE("v1 and v2 emit exactly two equal-size views") {
    for (auto recipe : {AugmentRecipe::v1(32), AugmentRecipe::v2(32)}) {
      Rng r(6);
      auto vs = make_views(img, recipe, r);
      CHECK(vs.views.size() == 2);
      CHECK(vs.views[0].shape() == std::vector<int64_t>{32, 32, 3});
      CHECK(vs.views[1].shape() == std::vector<int64_t>{32, 32, 3});
    }
  }
  SUBCASE("dino emits 2 global + n local, locals smaller") {
    Rng r(7);
    auto vs = make_views(img, AugmentRecipe::dino(32, 16, 4), r);
    CHECK(vs.n_global == 2);
    REQUIRE(vs.views.size() == 6);
    CHECK(vs.views[0].dim(0) == 32);
    CHECK(vs.views[1].dim(0) == 32);
    for (int i = 2; i < 6; ++i) CHECK(vs.views[static_cast<size_t>(i)].dim(0) == 16);
  }
  SUBCASE("all outputs stay in [0,1]") {
    for (uint64_t s = 0; s < 20; ++s) {
      Rng r(s);
      auto vs = make_views(img, AugmentRecipe::v2(24), r);
      for (const auto& v : vs.views)
        for (int64_t i = 0; i < v.numel(); ++i) {
          CHECK(v[i] >= 0.0f);
          CHECK(v[i] <= 1.0f);
        }
    }
  }
  SUBCASE("local crops must be smaller than global") {
    auto bad = AugmentRecipe::dino(32, 32, 2);
    Rng r(8);
    CHECK_THROWS_AS(make_views(img, bad, r), ConfigError);
  }
}

TEST_CASE("identity recipe reproduces input bit-exactly on size-matched input") {
  Rng rng(9);
  Tensor img = random_tensor({32, 32, 3}, rng, 0.0f, 1.0f);
  AugmentRecipe identity = AugmentRecipe::v2(32);
  identity.crop_min = identity.crop_max = 1.0;
  identity.jitter_prob = 0.0;
  identity.grayscale_prob = 0.0;
  identity.blur_prob = 0.0;
  identity.hflip_prob = 0.0;
  // Pin the aspect ratio through the op directly: the recipe path uses
  // [3/4, 4/3], so call the crop op with a fixed aspect for the bit-exact
  // half of the check.
  Rng r2(1);
  Tensor out = random_resized_crop(img, 1.0, 1.0, 32, r2, 1.0, 1.0);
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(out[i] == img[i]);

  Rng r3(2);
  auto vs = make_views(img, identity, r3);
  // Aspect jitter can still pick non-square crops; sizes must match anyway.
  CHECK(vs.views[0].shape() == img.shape());
}

TEST_CASE("batch view generation is deterministic in (images, seed)") {
  Rng rng(10);
  std::vector<Tensor> images;
  for (int i = 0; i < 4; ++i) images.push_back(random_tensor({48, 48, 3}, rng, 0.0f, 1.0f));
  auto [a1, b1] = make_view_pair_batch(images, AugmentRecipe::v2(24), 999);
  auto [a2, b2] = make_view_pair_batch(images, AugmentRecipe::v2(24), 999);
  for (int64_t i = 0; i < a1.numel(); ++i) CHECK(a1[i] == a2[i]);
  for (int64_t i = 0; i < b1.numel(); ++i) CHECK(b1[i] == b2[i]);
  CHECK(a1.shape() == std::vector<int64_t>{4, 24, 24, 3});

  auto [a3, b3] = make_view_pair_batch(images, AugmentRecipe::v2(24), 1000);
  bool any_diff = false;
  for (int64_t i = 0; i < a1.numel(); ++i)
    if (a1[i] != a3[i]) any_diff = true;
  CHECK(any_diff);

  auto crops = make_multicrop_batch(images, AugmentRecipe::dino(24, 12, 3), 5);
  CHECK(crops.global_batches.size() == 2);
  CHECK(crops.local_batches.size() == 3);
  CHECK(crops.global_batches[0].shape() == std::vector<int64_t>{4, 24, 24, 3});
  CHECK(crops.local_batches[0].shape() == std::vector<int64_t>{4, 12, 12, 3});
}
