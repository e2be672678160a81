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

#include "geossl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "geossl/error.hpp"

namespace geossl {

namespace {

void check_image(const Tensor& img, const char* op) {
  if (img.rank() != 3 || img.dim(2) != 3 || img.dim(0) < 1 || img.dim(1) < 1)
    throw ShapeError(std::string(op) + ": expects [h,w,3]");
}

inline float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

void clamp_inplace(Tensor& t) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = clamp01(t[i]);
}

Tensor crop(const Tensor& img, int64_t x0, int64_t y0, int64_t cw, int64_t ch) {
  int64_t w = img.dim(1);
  Tensor out({ch, cw, 3});
  for (int64_t y = 0; y < ch; ++y)
    std::memcpy(out.data() + y * cw * 3, img.data() + ((y0 + y) * w + x0) * 3,
                sizeof(float) * static_cast<size_t>(cw * 3));
  return out;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b});
  float mn = std::min({r, g, b});
  v = mx;
  float d = mx - mn;
  s = mx <= 0.0f ? 0.0f : d / mx;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d + (g < b ? 6.0f : 0.0f);
  else if (mx == g)
    h = (b - r) / d + 2.0f;
  else
    h = (r - g) / d + 4.0f;
  h /= 6.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s <= 0.0f) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  float hh = h * 6.0f;
  int i = static_cast<int>(hh) % 6;
  float f = hh - std::floor(hh);
  float p = v * (1.0f - s);
  float q = v * (1.0f - s * f);
  float t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

constexpr float kLumaR = 0.299f, kLumaG = 0.587f, kLumaB = 0.114f;

}  // namespace

Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
  check_image(img, "resize_bilinear");
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: bad output size");
  int64_t h = img.dim(0), w = img.dim(1);
  Tensor out({out_h, out_w, 3});
  double sy = static_cast<double>(h) / out_h;
  double sx = static_cast<double>(w) / out_w;
  for (int64_t y = 0; y < out_h; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    if (fy < 0) fy = 0;
    if (fy > static_cast<double>(h - 1)) fy = static_cast<double>(h - 1);
    int64_t y0 = static_cast<int64_t>(fy);
    int64_t y1 = std::min(y0 + 1, h - 1);
    float wy = static_cast<float>(fy - static_cast<double>(y0));
    for (int64_t x = 0; x < out_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      if (fx < 0) fx = 0;
      if (fx > static_cast<double>(w - 1)) fx = static_cast<double>(w - 1);
      int64_t x0 = static_cast<int64_t>(fx);
      int64_t x1 = std::min(x0 + 1, w - 1);
      float wx = static_cast<float>(fx - static_cast<double>(x0));
      for (int64_t c = 0; c < 3; ++c) {
        float v00 = img[(y0 * w + x0) * 3 + c];
        float v01 = img[(y0 * w + x1) * 3 + c];
        float v10 = img[(y1 * w + x0) * 3 + c];
        float v11 = img[(y1 * w + x1) * 3 + c];
        float top = v00 + (v01 - v00) * wx;
        float bot = v10 + (v11 - v10) * wx;
        out[(y * out_w + x) * 3 + c] = top + (bot - top) * wy;
      }
    }
  }
  return out;
}

Tensor random_resized_crop(const Tensor& img, double scale_min, double scale_max, int out_px,
                           Rng& rng, double aspect_min, double aspect_max) {
  check_image(img, "random_resized_crop");
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0))
    throw ConfigError("random_resized_crop: scale range must lie in (0, 1]");
  if (img.dim(0) < 8 || img.dim(1) < 8) throw ConfigError("random_resized_crop: image below 8x8");
  int64_t h = img.dim(0), w = img.dim(1);
  double area = static_cast<double>(h) * static_cast<double>(w);

  for (int attempt = 0; attempt < 10; ++attempt) {
    double target = area * rng.uniform(scale_min, scale_max);
    double log_ar = rng.uniform(std::log(aspect_min), std::log(aspect_max));
    double ar = std::exp(log_ar);
    int64_t cw = static_cast<int64_t>(std::lround(std::sqrt(target * ar)));
    int64_t ch = static_cast<int64_t>(std::lround(std::sqrt(target / ar)));
    if (cw < 1 || ch < 1 || cw > w || ch > h) continue;
    int64_t x0 = rng.uniform_int(0, w - cw);
    int64_t y0 = rng.uniform_int(0, h - ch);
    return resize_bilinear(crop(img, x0, y0, cw, ch), out_px, out_px);
  }
  // Fallback: centered square crop.
  int64_t side = std::min(h, w);
  int64_t x0 = (w - side) / 2, y0 = (h - side) / 2;
  return resize_bilinear(crop(img, x0, y0, side, side), out_px, out_px);
}

Tensor color_jitter(const Tensor& img, double brightness, double contrast, double saturation,
                    double hue, Rng& rng) {
  check_image(img, "color_jitter");
  if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0)
    throw ConfigError("color_jitter: strengths must be >= 0");
  if (hue > 0.5) throw ConfigError("color_jitter: hue strength must be <= 0.5");

  int order[4] = {0, 1, 2, 3};
  for (int i = 3; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);

  Tensor out = img;
  int64_t n = out.dim(0) * out.dim(1);
  for (int oi = 0; oi < 4; ++oi) {
    switch (order[oi]) {
      case 0: {  // brightness
        float f = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - brightness), 1.0 + brightness));
        if (f != 1.0f) {
          for (int64_t i = 0; i < out.numel(); ++i) out[i] *= f;
          clamp_inplace(out);
        }
        break;
      }
      case 1: {  // contrast, blended against the mean luma
        float f = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - contrast), 1.0 + contrast));
        if (f != 1.0f) {
          double mean = 0.0;
          for (int64_t i = 0; i < n; ++i)
            mean += kLumaR * out[i * 3] + kLumaG * out[i * 3 + 1] + kLumaB * out[i * 3 + 2];
          float m = static_cast<float>(mean / static_cast<double>(n));
          for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] * f + m * (1.0f - f);
          clamp_inplace(out);
        }
        break;
      }
      case 2: {  // saturation, blended against per-pixel luma
        float f = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - saturation), 1.0 + saturation));
        if (f != 1.0f) {
          for (int64_t i = 0; i < n; ++i) {
            float luma = kLumaR * out[i * 3] + kLumaG * out[i * 3 + 1] + kLumaB * out[i * 3 + 2];
            for (int64_t c = 0; c < 3; ++c)
              out[i * 3 + c] = out[i * 3 + c] * f + luma * (1.0f - f);
          }
          clamp_inplace(out);
        }
        break;
      }
      default: {  // hue shift
        float d = static_cast<float>(rng.uniform(-hue, hue));
        if (d != 0.0f) {
          for (int64_t i = 0; i < n; ++i) {
            float hh, ss, vv;
            rgb_to_hsv(out[i * 3], out[i * 3 + 1], out[i * 3 + 2], hh, ss, vv);
            hsv_to_rgb(hh + d, ss, vv, out[i * 3], out[i * 3 + 1], out[i * 3 + 2]);
          }
          clamp_inplace(out);
        }
        break;
      }
    }
  }
  return out;
}

Tensor random_grayscale(const Tensor& img, double p, Rng& rng) {
  check_image(img, "random_grayscale");
  if (p < 0.0 || p > 1.0) throw ConfigError("random_grayscale: p must lie in [0,1]");
  bool apply = rng.uniform() < p;
  if (!apply) return img;
  Tensor out = img;
  int64_t n = out.dim(0) * out.dim(1);
  for (int64_t i = 0; i < n; ++i) {
    float luma = kLumaR * out[i * 3] + kLumaG * out[i * 3 + 1] + kLumaB * out[i * 3 + 2];
    out[i * 3] = out[i * 3 + 1] = out[i * 3 + 2] = luma;
  }
  return out;
}

Tensor gaussian_blur(const Tensor& img, double sigma_min, double sigma_max, Rng& rng) {
  check_image(img, "gaussian_blur");
  if (!(sigma_min > 0.0 && sigma_min <= sigma_max && sigma_max <= 5.0))
    throw ConfigError("gaussian_blur: sigma range must lie in (0, 5]");
  double sigma = rng.uniform(sigma_min, sigma_max);
  int radius = static_cast<int>(std::ceil(3.0 * sigma));

  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (static_cast<double>(i) * i) / (sigma * sigma));
    k[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;

  int64_t h = img.dim(0), w = img.dim(1);
  Tensor tmp({h, w, 3});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int64_t xi = std::clamp<int64_t>(x + i, 0, w - 1);
          acc += k[static_cast<size_t>(i + radius)] * img[(y * w + xi) * 3 + c];
        }
        tmp[(y * w + x) * 3 + c] = static_cast<float>(acc);
      }
  Tensor out({h, w, 3});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int64_t yi = std::clamp<int64_t>(y + i, 0, h - 1);
          acc += k[static_cast<size_t>(i + radius)] * tmp[(yi * w + x) * 3 + c];
        }
        out[(y * w + x) * 3 + c] = static_cast<float>(acc);
      }
  return out;
}

Tensor horizontal_flip(const Tensor& img) {
  check_image(img, "horizontal_flip");
  int64_t h = img.dim(0), w = img.dim(1);
  Tensor out({h, w, 3});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        out[(y * w + x) * 3 + c] = img[(y * w + (w - 1 - x)) * 3 + c];
  return out;
}

Tensor vertical_flip(const Tensor& img) {
  check_image(img, "vertical_flip");
  int64_t h = img.dim(0), w = img.dim(1);
  Tensor out({h, w, 3});
  for (int64_t y = 0; y < h; ++y)
    std::memcpy(out.data() + y * w * 3, img.data() + (h - 1 - y) * w * 3,
                sizeof(float) * static_cast<size_t>(w * 3));
  return out;
}

AugmentRecipe AugmentRecipe::v1(int out_px) {
  AugmentRecipe r;
  r.kind = RecipeKind::v1;
  r.out_px = out_px;
  r.jitter_prob = 1.0;
  r.jitter_brightness = r.jitter_contrast = r.jitter_saturation = r.jitter_hue = 0.4;
  r.blur_prob = 0.0;
  return r;
}

AugmentRecipe AugmentRecipe::v2(int out_px) {
  AugmentRecipe r;
  r.kind = RecipeKind::v2;
  r.out_px = out_px;
  return r;
}

AugmentRecipe AugmentRecipe::dino(int global_px, int local_px, int n_local) {
  AugmentRecipe r;
  r.kind = RecipeKind::dino;
  r.out_px = global_px;
  r.local_px = local_px;
  r.n_local = n_local;
  return r;
}

void AugmentRecipe::validate() const {
  if (out_px < 1) throw ConfigError("recipe: out_px must be positive");
  if (jitter_hue > 0.5) throw ConfigError("recipe: hue strength above 0.5");
  if (kind == RecipeKind::dino) {
    if (local_px >= out_px) throw ConfigError("recipe: local crops must be smaller than global");
    if (n_local < 0) throw ConfigError("recipe: n_local must be >= 0");
  }
}

namespace {

Tensor one_view(const Tensor& img, const AugmentRecipe& r, double smin, double smax, int px,
                Rng& rng) {
  Tensor v = random_resized_crop(img, smin, smax, px, rng);
  if (rng.uniform() < r.hflip_prob) v = horizontal_flip(v);
  if (r.vflip_enabled && rng.uniform() < r.vflip_prob) v = vertical_flip(v);
  if (rng.uniform() < r.jitter_prob)
    v = color_jitter(v, r.jitter_brightness, r.jitter_contrast, r.jitter_saturation, r.jitter_hue,
                     rng);
  v = random_grayscale(v, r.grayscale_prob, rng);
  if (r.blur_prob > 0.0 && rng.uniform() < r.blur_prob)
    v = gaussian_blur(v, r.blur_sigma_min, r.blur_sigma_max, rng);
  return v;
}

}  // namespace

ViewSet make_views(const Tensor& img, const AugmentRecipe& recipe, Rng& rng) {
  recipe.validate();
  ViewSet vs;
  if (recipe.kind == RecipeKind::dino) {
    vs.n_global = 2;
    for (int i = 0; i < 2; ++i)
      vs.views.push_back(
          one_view(img, recipe, recipe.global_min, recipe.global_max, recipe.out_px, rng));
    for (int i = 0; i < recipe.n_local; ++i)
      vs.views.push_back(
          one_view(img, recipe, recipe.local_min, recipe.local_max, recipe.local_px, rng));
  } else {
    vs.n_global = 2;
    for (int i = 0; i < 2; ++i)
      vs.views.push_back(one_view(img, recipe, recipe.crop_min, recipe.crop_max, recipe.out_px, rng));
  }
  return vs;
}

Tensor stack_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw ConfigError("stack_images: empty batch");
  int64_t h = images[0].dim(0), w = images[0].dim(1);
  Tensor out({static_cast<int64_t>(images.size()), h, w, 3});
  int64_t per = h * w * 3;
  for (size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(images[0])) throw ShapeError("stack_images: mixed sizes");
    std::memcpy(out.data() + static_cast<int64_t>(i) * per, images[i].data(),
                sizeof(float) * static_cast<size_t>(per));
  }
  return out;
}

std::pair<Tensor, Tensor> make_view_pair_batch(const std::vector<Tensor>& images,
                                               const AugmentRecipe& recipe, uint64_t seed) {
  if (recipe.kind == RecipeKind::dino)
    throw ConfigError("make_view_pair_batch is for v1/v2 recipes");
  std::vector<Tensor> a, b;
  a.reserve(images.size());
  b.reserve(images.size());
  for (size_t i = 0; i < images.size(); ++i) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
    ViewSet vs = make_views(images[i], recipe, rng);
    a.push_back(std::move(vs.views[0]));
    b.push_back(std::move(vs.views[1]));
  }
  return {stack_images(a), stack_images(b)};
}

MultiCropBatch make_multicrop_batch(const std::vector<Tensor>& images,
                                    const AugmentRecipe& recipe, uint64_t seed) {
  if (recipe.kind != RecipeKind::dino)
    throw ConfigError("make_multicrop_batch requires the dino recipe");
  std::vector<std::vector<Tensor>> globals(2), locals(static_cast<size_t>(recipe.n_local));
  for (size_t i = 0; i < images.size(); ++i) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
    ViewSet vs = make_views(images[i], recipe, rng);
    for (int g = 0; g < 2; ++g) globals[static_cast<size_t>(g)].push_back(std::move(vs.views[static_cast<size_t>(g)]));
    for (int l = 0; l < recipe.n_local; ++l)
      locals[static_cast<size_t>(l)].push_back(std::move(vs.views[static_cast<size_t>(2 + l)]));
  }
  MultiCropBatch out;
  for (auto& g : globals) out.global_batches.push_back(stack_images(g));
  for (auto& l : locals) out.local_batches.push_back(stack_images(l));
  return out;
}

}  // namespace geossl
