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

#include <filesystem>

#include "doctest.h"
#include "geossl/error.hpp"
#include "geossl/image.hpp"
#include "geossl/rng.hpp"

using namespace geossl;

namespace {

Image random_image(int w, int h, uint64_t seed) {
  Rng rng(seed);
  Image img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<size_t>(w) * h * 3);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  return img;
}

}  // namespace

TEST_CASE("png round trip is lossless") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    Image img = random_image(33, 17, seed);  // odd sizes on purpose
    auto bytes = encode_png(img);
    Image back = decode_png(bytes);
    CHECK(back == img);
  }
  Image flat = Image::filled(64, 64, 10, 200, 30);
  CHECK(decode_png(encode_png(flat)) == flat);
}

TEST_CASE("png decode rejects garbage") {
  CHECK_THROWS_AS(decode_png({1, 2, 3}), IoError);
  Image img = random_image(8, 8, 9);
  auto bytes = encode_png(img);
  bytes[20] ^= 0xFF;  // corrupt IHDR payload -> CRC mismatch
  CHECK_THROWS_AS(decode_png(bytes), IoError);
  auto truncated = encode_png(img);
  truncated.resize(truncated.size() / 2);
  CHECK_THROWS_AS(decode_png(truncated), IoError);
}

TEST_CASE("png files and atomic writes") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "geossl_test_png";
  fs::create_directories(dir);
  Image img = random_image(24, 24, 5);
  write_png_atomic(img, dir / "deep" / "tree" / "tile.png");
  CHECK(read_png(dir / "deep" / "tree" / "tile.png") == img);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);
}

TEST_CASE("image/tensor conversion") {
  Image img = random_image(6, 4, 12);
  Tensor t = image_to_tensor(img);
  CHECK(t.shape() == std::vector<int64_t>{4, 6, 3});
  for (int64_t i = 0; i < t.numel(); ++i) {
    CHECK(t[i] >= 0.0f);
    CHECK(t[i] <= 1.0f);
  }
  Image back = tensor_to_image(t);
  CHECK(back == img);  // 1/255 quantization round-trips exactly
}
