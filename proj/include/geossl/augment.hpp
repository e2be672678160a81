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

#include <utility>
#include <vector>

#include "geossl/rng.hpp"
#include "geossl/tensor.hpp"

namespace geossl {

enum class RecipeKind { v1, v2, dino };

/// Two-view / multi-crop augmentation recipe. Pipelines are pure functions
/// of (image, RNG stream); per-image substreams are derived by seed mixing
/// so batches stay deterministic under any evaluation order.
struct AugmentRecipe {
  RecipeKind kind = RecipeKind::v2;
  int out_px = 32;    // view size (global crop size for dino)
  int local_px = 16;  // dino local crop size
  int n_local = 4;

  double crop_min = 0.2, crop_max = 1.0;       // v1/v2 crop area range
  double global_min = 0.4, global_max = 1.0;   // dino global crops
  double local_min = 0.05, local_max = 0.4;    // dino local crops

  double jitter_prob = 0.8;
  double jitter_brightness = 0.4;
  double jitter_contrast = 0.4;
  double jitter_saturation = 0.4;
  double jitter_hue = 0.1;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1, blur_sigma_max = 2.0;
  double hflip_prob = 0.5;
  bool vflip_enabled = false;  // remote-sensing extension, off by default
  double vflip_prob = 0.5;

  static AugmentRecipe v1(int out_px);
  static AugmentRecipe v2(int out_px);
  static AugmentRecipe dino(int global_px, int local_px, int n_local = 4);

  void validate() const;
};

/// Crop a random area fraction with aspect jitter in [3/4, 4/3] and resize
/// bilinearly. Falls back to a center crop after 10 failed attempts.
Tensor random_resized_crop(const Tensor& img, double scale_min, double scale_max, int out_px,
                           Rng& rng, double aspect_min = 0.75, double aspect_max = 4.0 / 3.0);

/// Brightness/contrast/saturation/hue in RNG-shuffled order; multiplicative
/// factors in [max(0,1-s), 1+s], hue additive in [-h, h]; clamped to [0,1].
Tensor color_jitter(const Tensor& img, double brightness, double contrast, double saturation,
                    double hue, Rng& rng);

/// With probability p replaces RGB by its luma (0.299, 0.587, 0.114).
Tensor random_grayscale(const Tensor& img, double p, Rng& rng);

/// Separable Gaussian with sigma drawn from the range; radius ceil(3*sigma),
/// edges clamped.
Tensor gaussian_blur(const Tensor& img, double sigma_min, double sigma_max, Rng& rng);

Tensor horizontal_flip(const Tensor& img);
Tensor vertical_flip(const Tensor& img);
Tensor resize_bilinear(const Tensor& img, int out_h, int out_w);

struct ViewSet {
  std::vector<Tensor> views;
  int n_global = 0;  // the first n_global views are global crops
};

/// v1/v2 emit exactly two views; dino emits 2 global + n_local local crops.
ViewSet make_views(const Tensor& img, const AugmentRecipe& recipe, Rng& rng);

/// Stacks per-image view pairs into two [b, px, px, 3] batches.
std::pair<Tensor, Tensor> make_view_pair_batch(const std::vector<Tensor>& images,
                                               const AugmentRecipe& recipe, uint64_t seed);

struct MultiCropBatch {
  std::vector<Tensor> global_batches;  // 2 x [b, g, g, 3]
  std::vector<Tensor> local_batches;   // n_local x [b, l, l, 3]
};

MultiCropBatch make_multicrop_batch(const std::vector<Tensor>& images,
                                    const AugmentRecipe& recipe, uint64_t seed);

/// Stacks [h,w,3] images of equal size into [b,h,w,3].
Tensor stack_images(const std::vector<Tensor>& images);

}  // namespace geossl
