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

#include "geossl/geo.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "geossl/error.hpp"
#include "geossl/rng.hpp"

namespace geossl {

namespace {

constexpr double kDegToRad = M_PI / 180.0;
constexpr double kRadToDeg = 180.0 / M_PI;

void check_lat_lon(double lat, double lon, const std::string& what) {
  if (!(lat >= -90.0 && lat <= 90.0)) throw ValidationError(what + ": latitude out of range");
  if (!(lon >= -180.0 && lon <= 180.0)) throw ValidationError(what + ": longitude out of range");
}

// Minimal CSV field splitting with double-quote escaping.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

void City::validate() const {
  if (name.empty()) throw ValidationError("city name must be nonempty");
  check_lat_lon(latitude, longitude, "city " + name);
  if (population <= 0) throw ValidationError("city " + name + ": population must be positive");
}

void SamplingDisc::validate() const {
  check_lat_lon(center_lat, center_lon, "disc center");
  if (!(radius_m > 0.0) || !std::isfinite(radius_m))
    throw ValidationError("disc radius must be positive and finite");
}

void WaterMask::validate() const {
  for (const auto& ring : polygons)
    if (ring.size() < 3) throw ValidationError("water mask ring has fewer than 3 vertices");
}

double compute_radius(int64_t population, double k) {
  if (population < 1) throw ValidationError("population must be >= 1");
  if (!(k > 0.0) || !std::isfinite(k)) throw ValidationError("radius constant k must be positive");
  return k * std::pow(static_cast<double>(population), 0.85);
}

double haversine_m(double lat1, double lon1, double lat2, double lon2) {
  double phi1 = lat1 * kDegToRad;
  double phi2 = lat2 * kDegToRad;
  double dphi = (lat2 - lat1) * kDegToRad;
  double dlam = (lon2 - lon1) * kDegToRad;
  double a = std::sin(dphi / 2) * std::sin(dphi / 2) +
             std::cos(phi1) * std::cos(phi2) * std::sin(dlam / 2) * std::sin(dlam / 2);
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(a)));
}

bool point_in_disc(const SamplePoint& p, const SamplingDisc& d) {
  d.validate();
  check_lat_lon(p.latitude, p.longitude, "sample point");
  double dist = haversine_m(p.latitude, p.longitude, d.center_lat, d.center_lon);
  // Closed disc with 1e-9 relative slack so boundary points are admissible.
  return dist <= d.radius_m * (1.0 + 1e-9);
}

bool point_in_mask(const SamplePoint& p, const WaterMask& m) {
  m.validate();
  bool inside = false;
  for (const auto& ring : m.polygons) {
    size_t n = ring.size();
    bool in_ring = false;
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
      double yi = ring[i].lat, xi = ring[i].lon;
      double yj = ring[j].lat, xj = ring[j].lon;
      bool crosses = (yi > p.latitude) != (yj > p.latitude);
      if (crosses) {
        double x_at = xi + (p.latitude - yi) / (yj - yi) * (xj - xi);
        if (p.longitude < x_at) in_ring = !in_ring;
      }
    }
    if (in_ring) inside = !inside;  // even-odd across rings
  }
  return inside;
}

namespace {

// Spherical destination point: from (lat, lon) travel dist_m on bearing.
LatLon destination(double lat_deg, double lon_deg, double bearing_rad, double dist_m) {
  double delta = dist_m / kEarthRadiusM;
  double phi1 = lat_deg * kDegToRad;
  double lam1 = lon_deg * kDegToRad;
  double sin_phi2 = std::sin(phi1) * std::cos(delta) + std::cos(phi1) * std::sin(delta) * std::cos(bearing_rad);
  double phi2 = std::asin(std::clamp(sin_phi2, -1.0, 1.0));
  double y = std::sin(bearing_rad) * std::sin(delta) * std::cos(phi1);
  double x = std::cos(delta) - std::sin(phi1) * sin_phi2;
  double lam2 = lam1 + std::atan2(y, x);
  // wrap to [-180, 180]
  double lon2 = std::fmod(lam2 * kRadToDeg + 540.0, 360.0) - 180.0;
  return {phi2 * kRadToDeg, lon2};
}

}  // namespace

std::vector<SamplePoint> sample_points(const SamplingDisc& d, const WaterMask& m, int64_t n,
                                       uint64_t seed, const std::string& city_name,
                                       const SampleOptions& opts) {
  d.validate();
  m.validate();
  if (n < 1) throw ValidationError("sample count must be >= 1");

  Rng rng(seed);
  std::vector<SamplePoint> out;
  out.reserve(static_cast<size_t>(n));
  int64_t budget = opts.max_attempts_per_point * n;
  int64_t attempts = 0;
  while (static_cast<int64_t>(out.size()) < n) {
    if (attempts >= budget)
      throw SamplingError("disc fully masked: rejection budget exhausted for " +
                          (city_name.empty() ? std::string("disc") : city_name));
    ++attempts;
    // Area-uniform draw: radius grows as sqrt(u).
    double r = d.radius_m * std::sqrt(rng.uniform());
    double bearing = 2.0 * M_PI * rng.uniform();
    LatLon ll = destination(d.center_lat, d.center_lon, bearing, r);
    SamplePoint p{ll.lat, ll.lon, city_name};
    if (point_in_mask(p, m)) continue;
    out.push_back(std::move(p));
  }
  return out;
}

double ground_resolution(double latitude_deg, int zoom, int tile_px) {
  if (zoom < 0 || zoom > 22) throw ValidationError("zoom must lie in [0, 22]");
  if (tile_px <= 0) throw ValidationError("tile_px must be positive");
  if (std::abs(latitude_deg) >= kWebMercatorMaxLat)
    throw ValidationError("latitude outside the Web-Mercator projection");
  return static_cast<double>(tile_px) * kEquatorCircumferencePerTile *
         std::cos(latitude_deg * kDegToRad) / std::pow(2.0, zoom);
}

std::vector<City> load_cities_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open city CSV: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty city CSV: " + path.string());
  auto header = split_csv_line(line);
  const std::vector<std::string> expected = {"name", "country", "latitude", "longitude", "population"};
  if (header != expected)
    throw IoError("city CSV header must be `name,country,latitude,longitude,population`");

  std::vector<City> cities;
  std::set<std::string> seen;
  size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = split_csv_line(line);
    if (f.size() != 5)
      throw IoError("city CSV line " + std::to_string(lineno) + ": expected 5 fields");
    City c;
    c.name = f[0];
    c.country = f[1];
    try {
      c.latitude = std::stod(f[2]);
      c.longitude = std::stod(f[3]);
      c.population = std::stoll(f[4]);
    } catch (const std::exception&) {
      throw IoError("city CSV line " + std::to_string(lineno) + ": numeric parse failure");
    }
    c.validate();
    if (!seen.insert(c.name).second)
      throw ValidationError("duplicate city name in CSV: " + c.name);
    cities.push_back(std::move(c));
  }
  return cities;
}

WaterMask load_water_mask(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open water mask: " + path.string());
  WaterMask mask;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    std::vector<LatLon> ring;
    std::stringstream ss(line);
    std::string pair;
    while (std::getline(ss, pair, ',')) {
      std::istringstream ps(pair);
      LatLon v;
      if (!(ps >> v.lat >> v.lon))
        throw IoError("water mask line " + std::to_string(lineno) + ": expected `lat lon` pairs");
      ring.push_back(v);
    }
    if (ring.size() < 3)
      throw ValidationError("water mask line " + std::to_string(lineno) + ": ring needs >= 3 vertices");
    mask.polygons.push_back(std::move(ring));
  }
  return mask;
}

}  // namespace geossl
