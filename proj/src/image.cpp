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

#include "geossl/image.hpp"

#include <unistd.h>
#include <zlib.h>

#include <cstring>
#include <fstream>

#include "geossl/error.hpp"

namespace geossl {

Image Image::filled(int w, int h, uint8_t r, uint8_t g, uint8_t b) {
  Image img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<size_t>(w) * h * 3);
  for (size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  }
  return img;
}

Tensor image_to_tensor(const Image& img) {
  if (!img.valid()) throw ValidationError("invalid image");
  Tensor t({img.height, img.width, 3});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(img.pixels[static_cast<size_t>(i)]) / 255.0f;
  return t;
}

Image tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || t.dim(2) != 3) throw ShapeError("tensor_to_image expects [h,w,3]");
  Image img;
  img.height = static_cast<int>(t.dim(0));
  img.width = static_cast<int>(t.dim(1));
  img.pixels.resize(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) {
    float v = t[i] * 255.0f + 0.5f;
    if (v < 0.0f) v = 0.0f;
    if (v > 255.0f) v = 255.0f;
    img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
  }
  return img;
}

namespace {

constexpr uint8_t kPngSig[8] = {0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A};

void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32be(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void write_chunk(std::vector<uint8_t>& out, const char type[4], const uint8_t* data, size_t len) {
  put_u32be(out, static_cast<uint32_t>(len));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  if (len > 0) out.insert(out.end(), data, data + len);
  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
  put_u32be(out, crc);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

std::vector<uint8_t> encode_png(const Image& img) {
  if (!img.valid()) throw ValidationError("encode_png: invalid image");
  const size_t stride = static_cast<size_t>(img.width) * 3;
  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.pixels.begin() + static_cast<long>(y * stride),
               img.pixels.begin() + static_cast<long>((y + 1) * stride));
  }

  uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_cap);
  if (compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw Error("encode_png: deflate failed");
  comp.resize(comp_cap);

  std::vector<uint8_t> out(kPngSig, kPngSig + 8);
  uint8_t ihdr[13];
  ihdr[0] = static_cast<uint8_t>(img.width >> 24);
  ihdr[1] = static_cast<uint8_t>(img.width >> 16);
  ihdr[2] = static_cast<uint8_t>(img.width >> 8);
  ihdr[3] = static_cast<uint8_t>(img.width);
  ihdr[4] = static_cast<uint8_t>(img.height >> 24);
  ihdr[5] = static_cast<uint8_t>(img.height >> 16);
  ihdr[6] = static_cast<uint8_t>(img.height >> 8);
  ihdr[7] = static_cast<uint8_t>(img.height);
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // color type: truecolor
  ihdr[10] = 0;  // compression
  ihdr[11] = 0;  // filter method
  ihdr[12] = 0;  // no interlace
  write_chunk(out, "IHDR", ihdr, sizeof(ihdr));
  write_chunk(out, "IDAT", comp.data(), comp.size());
  write_chunk(out, "IEND", nullptr, 0);
  return out;
}

Image decode_png(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
    throw IoError("decode_png: not a PNG stream");

  size_t pos = 8;
  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<uint8_t> idat;
  bool saw_ihdr = false, saw_iend = false;

  while (pos + 8 <= bytes.size()) {
    uint32_t len = get_u32be(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw IoError("decode_png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const uint8_t* data = bytes.data() + pos + 8;
    uint32_t expect = static_cast<uint32_t>(crc32(0L, bytes.data() + pos + 4, 4 + len));
    uint32_t stored = get_u32be(bytes.data() + pos + 8 + len);
    if (expect != stored) throw IoError("decode_png: chunk CRC mismatch");

    if (std::strncmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("decode_png: bad IHDR");
      width = static_cast<int>(get_u32be(data));
      height = static_cast<int>(get_u32be(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0) throw IoError("decode_png: interlaced PNGs unsupported");
      if (bit_depth != 8 || (color_type != 0 && color_type != 2 && color_type != 6))
        throw IoError("decode_png: only 8-bit gray/RGB/RGBA supported");
      saw_ihdr = true;
    } else if (std::strncmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::strncmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || width <= 0 || height <= 0)
    throw IoError("decode_png: malformed stream");

  int ch = color_type == 2 ? 3 : (color_type == 6 ? 4 : 1);
  size_t stride = static_cast<size_t>(width) * ch;
  uLongf raw_len = static_cast<uLongf>((stride + 1) * static_cast<size_t>(height));
  std::vector<uint8_t> raw(raw_len);
  int zrc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || raw_len != (stride + 1) * static_cast<size_t>(height))
    throw IoError("decode_png: inflate failed");

  // Undo per-row filters in place.
  std::vector<uint8_t> prev(stride, 0);
  std::vector<uint8_t> line(stride);
  Image img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<size_t>(width) * height * 3);

  for (int y = 0; y < height; ++y) {
    const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1);
    uint8_t filter = src[0];
    const uint8_t* f = src + 1;
    for (size_t i = 0; i < stride; ++i) {
      int a = i >= static_cast<size_t>(ch) ? line[i - ch] : 0;
      int b = prev[i];
      int c = i >= static_cast<size_t>(ch) ? prev[i - ch] : 0;
      int v;
      switch (filter) {
        case 0: v = f[i]; break;
        case 1: v = f[i] + a; break;
        case 2: v = f[i] + b; break;
        case 3: v = f[i] + (a + b) / 2; break;
        case 4: v = f[i] + paeth(a, b, c); break;
        default: throw IoError("decode_png: unknown filter type");
      }
      line[i] = static_cast<uint8_t>(v & 0xFF);
    }
    for (int x = 0; x < width; ++x) {
      uint8_t* dst = img.px(x, y);
      if (ch == 1) {
        dst[0] = dst[1] = dst[2] = line[static_cast<size_t>(x)];
      } else {
        dst[0] = line[static_cast<size_t>(x) * ch];
        dst[1] = line[static_cast<size_t>(x) * ch + 1];
        dst[2] = line[static_cast<size_t>(x) * ch + 2];
      }
    }
    std::swap(prev, line);
  }
  return img;
}

void write_png(const Image& img, const std::filesystem::path& path) {
  auto bytes = encode_png(img);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

Image read_png(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

void write_png_atomic(const Image& img, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(static_cast<unsigned long>(::getpid()));
  write_png(img, tmp);
  fs::rename(tmp, path);
}

}  // namespace geossl
