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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace geossl {

inline constexpr double kEarthRadiusM = 6371000.0;
inline constexpr double kWebMercatorMaxLat = 85.05113;
inline constexpr double kEquatorCircumferencePerTile = 156543.03392;  // meters/px at zoom 0

struct City {
  std::string name;
  std::string country;
  double latitude = 0.0;
  double longitude = 0.0;
  int64_t population = 0;

  void validate() const;
};

struct SamplingDisc {
  double center_lat = 0.0;
  double center_lon = 0.0;
  double radius_m = 0.0;

  void validate() const;
};

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

/// Closed polygons in lat/lon space; closure is implicit (last vertex joins
/// the first). Containment uses the even-odd rule on the plane.
struct WaterMask {
  std::vector<std::vector<LatLon>> polygons;

  bool empty() const { return polygons.empty(); }
  void validate() const;
};

struct SamplePoint {
  double latitude = 0.0;
  double longitude = 0.0;
  std::string city_name;
};

/// radius = k · population^0.85
double compute_radius(int64_t population, double k);

/// Great-circle distance on a spherical Earth.
double haversine_m(double lat1, double lon1, double lat2, double lon2);

/// Closed-disc containment: distance <= radius.
bool point_in_disc(const SamplePoint& p, const SamplingDisc& d);

/// Even-odd containment in any mask polygon.
bool point_in_mask(const SamplePoint& p, const WaterMask& m);

struct SampleOptions {
  int64_t max_attempts_per_point = 10000;
};

/// Draws n area-uniform points inside the disc and outside the mask.
/// Identical seeds produce identical sequences.
std::vector<SamplePoint> sample_points(const SamplingDisc& d, const WaterMask& m, int64_t n,
                                       uint64_t seed, const std::string& city_name = "",
                                       const SampleOptions& opts = {});

/// Web-Mercator ground width of a tile: tile_px · 156543.03392 · cos(lat) / 2^zoom.
double ground_resolution(double latitude_deg, int zoom, int tile_px);

/// CSV with header `name,country,latitude,longitude,population`, UTF-8.
std::vector<City> load_cities_csv(const std::filesystem::path& path);

/// One polygon per line: comma-separated `lat lon` vertex pairs.
WaterMask load_water_mask(const std::filesystem::path& path);

}  // namespace geossl
