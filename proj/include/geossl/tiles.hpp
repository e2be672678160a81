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

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "geossl/geo.hpp"
#include "geossl/image.hpp"

namespace geossl {

using Rgb = std::array<uint8_t, 3>;

/// Five-color abstract map style. All colors must be pairwise distinct.
struct StyleSpec {
  Rgb road = {0, 0, 0};
  Rgb transit = {255, 165, 0};
  Rgb greenspace = {0, 128, 0};
  Rgb water = {0, 0, 255};
  Rgb background = {255, 255, 255};

  void validate() const;
  std::array<Rgb, 5> palette() const { return {road, transit, greenspace, water, background}; }
};

enum class Domain { satellite, map };
enum class Split { train, test };

std::string to_string(Domain d);
std::string to_string(Split s);
Domain domain_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct TileRecord {
  std::string city_name;
  SamplePoint point;
  Domain domain = Domain::satellite;
  Split split = Split::train;
  std::string cache_path;  // relative: <domain>/<city>/<index>.png
  int zoom = 16;
  int size_px = 256;
};

struct DatasetManifest {
  std::vector<City> cities;
  std::vector<TileRecord> records;
  int64_t samples_per_city = 0;
  double split_ratio = 0.8;
  uint64_t seed = 0;
  int zoom = 16;
  int size_px = 256;
  double radius_k = 0.05;
  std::vector<std::string> excluded;

  void validate() const;
  const City& city(const std::string& name) const;
};

/// Deterministic static-map request URL. Style clauses are emitted in a
/// fixed alphabetical feature order.
std::string build_request(const SamplePoint& point, Domain domain, int zoom, int size_px,
                          const StyleSpec& style, const std::string& api_key);

/// Procedural offline tile. Map domain uses exactly the five style colors;
/// satellite domain paints the same layout with noise-modulated tones.
/// Identical (city, point, seed) inputs give identical rasters; per-city
/// layout statistics come from a hash of (city name, seed).
Image render_synthetic_tile(const City& city, const SamplePoint& point, Domain domain,
                            const StyleSpec& style, int size_px, uint64_t seed);

struct ManifestOptions {
  int zoom = 16;
  int size_px = 256;
  double radius_k = 0.05;
  const WaterMask* water = nullptr;
  std::vector<std::string> blocklist;
  SampleOptions sampling;
};

/// Samples points per city, assigns per-city seeded train/test splits for
/// both domains, and records cache paths. Deterministic under (inputs, seed).
DatasetManifest build_manifest(const std::vector<City>& cities, int64_t samples_per_city,
                               double split_ratio, uint64_t seed,
                               const ManifestOptions& opts = {});

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

enum class TileMode { synthetic, cache_only, cache_or_synthetic };

struct TileLoadOptions {
  TileMode mode = TileMode::synthetic;
  std::filesystem::path cache_dir;
  StyleSpec style;
  std::optional<uint64_t> render_seed;  // defaults to the manifest seed
};

/// Indices into manifest.records restricted to one domain, in record order.
std::vector<int64_t> domain_record_indices(const DatasetManifest& m, Domain domain);

/// Loads tiles for `indices`, which index into the domain-filtered record
/// list. Images come back in index order.
std::vector<Image> load_batch(const DatasetManifest& m, std::span<const int64_t> indices,
                              Domain domain, const TileLoadOptions& opts = {});

/// Renders and writes every tile of a domain into the cache directory
/// (write-to-temp-then-rename). Returns the number of tiles written.
int64_t materialize_tiles(const DatasetManifest& m, Domain domain, const TileLoadOptions& opts);

/// Filesystem-safe city directory name.
std::string sanitize_city_name(const std::string& name);

/// Deterministic synthetic city roster for desk-scale benchmarks and tests.
std::vector<City> make_synthetic_cities(int count, uint64_t seed);

}  // namespace geossl
