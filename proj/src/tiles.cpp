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

#include "geossl/tiles.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "geossl/error.hpp"
#include "geossl/rng.hpp"

namespace geossl {

using nlohmann::json;

void StyleSpec::validate() const {
  auto p = palette();
  for (size_t i = 0; i < p.size(); ++i)
    for (size_t j = i + 1; j < p.size(); ++j)
      if (p[i] == p[j]) throw ValidationError("style colors must be pairwise distinct");
}

std::string to_string(Domain d) { return d == Domain::satellite ? "satellite" : "map"; }
std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Domain domain_from_string(const std::string& s) {
  if (s == "satellite") return Domain::satellite;
  if (s == "map") return Domain::map;
  throw ConfigError("unsupported domain: " + s);
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split: " + s);
}

std::string sanitize_city_name(const std::string& name) {
  std::string out;
  out.reserve(name.size());
  for (char c : name) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
              c == '.' || c == '-' || c == '_';
    out += ok ? c : '_';
  }
  return out.empty() ? "_" : out;
}

// ---------------------------------------------------------------------------
// request building

namespace {

std::string fmt_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string hex_color(const Rgb& c) {
  char buf[12];
  std::snprintf(buf, sizeof(buf), "0x%02X%02X%02X", c[0], c[1], c[2]);
  return buf;
}

}  // namespace

std::string build_request(const SamplePoint& point, Domain domain, int zoom, int size_px,
                          const StyleSpec& style, const std::string& api_key) {
  if (size_px <= 0) throw ConfigError("size_px must be positive");
  if (zoom < 0 || zoom > 22) throw ConfigError("zoom must lie in [0, 22]");
  if (api_key.empty()) throw ConfigError("api key required for online requests");
  style.validate();

  std::ostringstream os;
  os << "https://maps.googleapis.com/maps/api/staticmap?center=" << fmt_coord(point.latitude)
     << "," << fmt_coord(point.longitude) << "&zoom=" << zoom << "&size=" << size_px << "x"
     << size_px;
  if (domain == Domain::satellite) {
    os << "&maptype=satellite";
  } else {
    os << "&maptype=roadmap";
    // Fixed alphabetical feature order keeps the URL deterministic.
    os << "&style=feature:landscape|element:geometry|color:" << hex_color(style.background);
    os << "&style=feature:poi.park|element:geometry|color:" << hex_color(style.greenspace);
    os << "&style=feature:road|element:geometry|color:" << hex_color(style.road);
    os << "&style=feature:transit|element:geometry|color:" << hex_color(style.transit);
    os << "&style=feature:water|element:geometry|color:" << hex_color(style.water);
  }
  os << "&key=" << api_key;
  return os.str();
}

// ---------------------------------------------------------------------------
// synthetic renderer

namespace {

struct CityLayout {
  double spacing1 = 16, spacing2 = 16;
  double angle_rad = 0;
  int road_width = 1;
  double transit_spacing = 64;
  double transit_angle_rad = 0;
  int transit_width = 1;
  int parks_min = 0, parks_max = 2;
  double park_radius_frac = 0.08;
  double water_prob = 0.0;
  int tint_r = 0, tint_g = 0, tint_b = 0;
};

CityLayout city_layout(const City& city, uint64_t seed) {
  uint64_t h = mix_seed(seed, fnv1a64(city.name));
  CityLayout L;
  // City identity is carried by grid geometry: block spacing and street
  // orientation. Road width tracks spacing so the road-pixel density stays
  // in a narrow band and the classes cannot be separated by color or
  // density statistics alone.
  L.spacing1 = 12.0 + static_cast<double>(h % 21);         // 12..32 px blocks
  L.spacing2 = L.spacing1 * (0.9 + 0.2 * static_cast<double>((h >> 5) % 8) / 7.0);
  // Angles stay below 45 degrees; a horizontal flip folds the orientation
  // back onto itself, so flip-invariant features keep the city signal.
  L.angle_rad = static_cast<double>((h >> 10) % 45) * M_PI / 180.0;
  L.road_width = std::max(2, static_cast<int>(std::lround(L.spacing1 / 7.0)));
  L.transit_spacing = L.spacing1 * 4.0;
  L.transit_angle_rad = L.angle_rad + M_PI / 4.0;
  L.transit_width = 2;
  L.parks_min = 1;
  L.parks_max = 3;
  L.park_radius_frac = 0.09;
  L.water_prob = 0.25;
  L.tint_r = 0;
  L.tint_g = 0;
  L.tint_b = 0;
  return L;
}

uint64_t point_hash(const SamplePoint& p) {
  uint64_t a, b;
  std::memcpy(&a, &p.latitude, 8);
  std::memcpy(&b, &p.longitude, 8);
  uint64_t s = a * 0x9E3779B97F4A7C15ull ^ (b + 0xC2B2AE3D27D4EB4Full);
  return splitmix64(s);
}

// Stateless 2D noise in [0, 255] per channel lane.
inline uint64_t noise_at(uint64_t seed, int x, int y) {
  uint64_t s = seed + static_cast<uint64_t>(x) * 0x9E3779B97F4A7C15ull +
               static_cast<uint64_t>(y) * 0xC2B2AE3D27D4EB4Full;
  return splitmix64(s);
}

inline double line_dist(double coord, double spacing) {
  double m = std::fmod(coord, spacing);
  if (m < 0) m += spacing;
  return std::min(m, spacing - m);
}

enum class Klass : uint8_t { background, greenspace, water, road, transit };

uint8_t clamp_byte(int v) { return static_cast<uint8_t>(std::clamp(v, 0, 255)); }

}  // namespace

Image render_synthetic_tile(const City& city, const SamplePoint& point, Domain domain,
                            const StyleSpec& style, int size_px, uint64_t seed) {
  if (size_px <= 0) throw ConfigError("size_px must be positive");
  style.validate();
  CityLayout L = city_layout(city, seed);

  Rng rp(mix_seed(seed ^ 0xA5A5DEADBEEF5A5Aull, point_hash(point)));
  double phase1 = rp.uniform(0.0, L.spacing1);
  double phase2 = rp.uniform(0.0, L.spacing2);
  double phase_t = rp.uniform(0.0, L.transit_spacing);

  // Per-capture illumination nuisance for the satellite domain. The spread
  // stays inside the brightness-jitter range of the v1/v2 recipes, so it is
  // not a usable instance-discrimination shortcut, but it scrambles the raw
  // color statistics a linear probe over untrained features leans on.
  // Map tiles stay exact five-color rasters.
  double gain = rp.uniform(0.65, 1.35);

  struct Blob {
    double cx, cy, r2;
  };
  std::vector<Blob> parks;
  int n_parks = static_cast<int>(rp.uniform_int(L.parks_min, L.parks_max));
  for (int i = 0; i < n_parks; ++i) {
    double cx = rp.uniform(0.0, size_px);
    double cy = rp.uniform(0.0, size_px);
    double r = L.park_radius_frac * size_px * rp.uniform(0.7, 1.3);
    parks.push_back({cx, cy, r * r});
  }
  std::vector<Blob> waters;
  if (rp.bernoulli(L.water_prob)) {
    double cx = rp.uniform(-0.2, 1.2) * size_px;
    double cy = rp.uniform(-0.2, 1.2) * size_px;
    double r = rp.uniform(0.25, 0.5) * size_px;
    waters.push_back({cx, cy, r * r});
  }
  uint64_t noise_seed = rp.next_u64();

  double ca = std::cos(L.angle_rad), sa = std::sin(L.angle_rad);
  double ct = std::cos(L.transit_angle_rad), st = std::sin(L.transit_angle_rad);

  Image img;
  img.width = size_px;
  img.height = size_px;
  img.pixels.resize(static_cast<size_t>(size_px) * size_px * 3);

  for (int y = 0; y < size_px; ++y) {
    for (int x = 0; x < size_px; ++x) {
      double px = x + 0.5, py = y + 0.5;
      Klass k = Klass::background;
      for (const Blob& b : parks)
        if ((px - b.cx) * (px - b.cx) + (py - b.cy) * (py - b.cy) <= b.r2) k = Klass::greenspace;
      for (const Blob& b : waters)
        if ((px - b.cx) * (px - b.cx) + (py - b.cy) * (py - b.cy) <= b.r2) k = Klass::water;
      double u = px * ca + py * sa;
      double v = -px * sa + py * ca;
      if (line_dist(u + phase1, L.spacing1) < L.road_width * 0.5 ||
          line_dist(v + phase2, L.spacing2) < L.road_width * 0.5)
        k = Klass::road;
      double w = px * ct + py * st;
      if (line_dist(w + phase_t, L.transit_spacing) < L.transit_width * 0.5) k = Klass::transit;

      uint8_t* dst = img.px(x, y);
      if (domain == Domain::map) {
        const Rgb* c = nullptr;
        switch (k) {
          case Klass::background: c = &style.background; break;
          case Klass::greenspace: c = &style.greenspace; break;
          case Klass::water: c = &style.water; break;
          case Klass::road: c = &style.road; break;
          case Klass::transit: c = &style.transit; break;
        }
        dst[0] = (*c)[0];
        dst[1] = (*c)[1];
        dst[2] = (*c)[2];
      } else {
        int base_r, base_g, base_b, amp;
        switch (k) {
          case Klass::background:
            base_r = 152 + L.tint_r;
            base_g = 142 + L.tint_g;
            base_b = 120 + L.tint_b;
            amp = 10;
            break;
          case Klass::greenspace:
            base_r = 62;
            base_g = 104;
            base_b = 56;
            amp = 8;
            break;
          case Klass::water:
            base_r = 42;
            base_g = 60;
            base_b = 126;
            amp = 4;
            break;
          case Klass::road:
            base_r = 60;
            base_g = 60;
            base_b = 66;
            amp = 5;
            break;
          case Klass::transit:
          default:
            base_r = 120;
            base_g = 96;
            base_b = 72;
            amp = 5;
            break;
        }
        uint64_t nz = noise_at(noise_seed, x, y);
        int vr = base_r + static_cast<int>(nz % (2 * amp + 1)) - amp;
        int vg = base_g + static_cast<int>((nz >> 8) % (2 * amp + 1)) - amp;
        int vb = base_b + static_cast<int>((nz >> 16) % (2 * amp + 1)) - amp;
        dst[0] = clamp_byte(static_cast<int>(vr * gain));
        dst[1] = clamp_byte(static_cast<int>(vg * gain));
        dst[2] = clamp_byte(static_cast<int>(vb * gain));
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// manifests

void DatasetManifest::validate() const {
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ValidationError("split_ratio must be in (0,1)");
  std::set<std::string> names;
  for (const auto& c : cities) {
    c.validate();
    if (!names.insert(c.name).second) throw ValidationError("duplicate city in manifest: " + c.name);
  }
  std::unordered_map<std::string, int64_t> per_city_sat, per_city_map, per_city_train;
  std::set<std::string> paths;
  for (const auto& r : records) {
    if (!names.count(r.city_name))
      throw ValidationError("record references unknown city: " + r.city_name);
    if (!paths.insert(r.cache_path).second)
      throw ValidationError("duplicate cache path: " + r.cache_path);
    (r.domain == Domain::satellite ? per_city_sat : per_city_map)[r.city_name]++;
    if (r.domain == Domain::satellite && r.split == Split::train) per_city_train[r.city_name]++;
  }
  int64_t want_train = static_cast<int64_t>(std::floor(split_ratio * static_cast<double>(samples_per_city)));
  for (const auto& c : cities) {
    if (per_city_sat[c.name] != samples_per_city || per_city_map[c.name] != samples_per_city)
      throw ValidationError("city " + c.name + " does not have samples_per_city records per domain");
    if (per_city_train[c.name] != want_train)
      throw ValidationError("city " + c.name + " has wrong train split count");
  }
}

const City& DatasetManifest::city(const std::string& name) const {
  for (const auto& c : cities)
    if (c.name == name) return c;
  throw ValidationError("city not in manifest: " + name);
}

DatasetManifest build_manifest(const std::vector<City>& cities_in, int64_t samples_per_city,
                               double split_ratio, uint64_t seed, const ManifestOptions& opts) {
  if (samples_per_city < 2) throw ConfigError("samples_per_city must be >= 2");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split_ratio must be in (0,1)");

  DatasetManifest m;
  m.samples_per_city = samples_per_city;
  m.split_ratio = split_ratio;
  m.seed = seed;
  m.zoom = opts.zoom;
  m.size_px = opts.size_px;
  m.radius_k = opts.radius_k;

  std::set<std::string> blocked(opts.blocklist.begin(), opts.blocklist.end());
  for (const auto& c : cities_in) {
    c.validate();
    if (blocked.count(c.name)) {
      m.excluded.push_back(c.name);
      continue;
    }
    m.cities.push_back(c);
  }
  if (m.cities.empty()) throw ConfigError("no cities left after blocklist");

  WaterMask empty_mask;
  const WaterMask& mask = opts.water ? *opts.water : empty_mask;

  int64_t train_count =
      static_cast<int64_t>(std::floor(split_ratio * static_cast<double>(samples_per_city)));

  for (const auto& c : m.cities) {
    SamplingDisc disc{c.latitude, c.longitude, compute_radius(c.population, opts.radius_k)};
    auto pts = sample_points(disc, mask, samples_per_city, mix_seed(seed, fnv1a64(c.name)),
                             c.name, opts.sampling);

    // Per-city seeded shuffle decides which indices are train.
    std::vector<int64_t> order(static_cast<size_t>(samples_per_city));
    for (int64_t i = 0; i < samples_per_city; ++i) order[static_cast<size_t>(i)] = i;
    Rng srng(mix_seed(seed, fnv1a64(c.name) ^ 0x73706C6974ull));
    for (int64_t i = samples_per_city - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(srng.uniform_int(0, i))]);
    std::vector<Split> split_of(static_cast<size_t>(samples_per_city), Split::test);
    for (int64_t r = 0; r < train_count; ++r) split_of[static_cast<size_t>(order[static_cast<size_t>(r)])] = Split::train;

    std::string dir = sanitize_city_name(c.name);
    for (Domain d : {Domain::satellite, Domain::map}) {
      for (int64_t i = 0; i < samples_per_city; ++i) {
        TileRecord rec;
        rec.city_name = c.name;
        rec.point = pts[static_cast<size_t>(i)];
        rec.domain = d;
        rec.split = split_of[static_cast<size_t>(i)];
        rec.cache_path = to_string(d) + "/" + dir + "/" + std::to_string(i) + ".png";
        rec.zoom = opts.zoom;
        rec.size_px = opts.size_px;
        m.records.push_back(std::move(rec));
      }
    }
  }
  m.validate();
  return m;
}

json manifest_to_json(const DatasetManifest& m) {
  json cities = json::array();
  for (const auto& c : m.cities)
    cities.push_back({{"name", c.name},
                      {"country", c.country},
                      {"latitude", c.latitude},
                      {"longitude", c.longitude},
                      {"population", c.population}});
  json records = json::array();
  for (const auto& r : m.records)
    records.push_back({{"city", r.city_name},
                       {"lat", r.point.latitude},
                       {"lon", r.point.longitude},
                       {"domain", to_string(r.domain)},
                       {"split", to_string(r.split)},
                       {"path", r.cache_path},
                       {"zoom", r.zoom},
                       {"size_px", r.size_px}});
  return json{{"cities", cities},
              {"records", records},
              {"samples_per_city", m.samples_per_city},
              {"split_ratio", m.split_ratio},
              {"seed", m.seed},
              {"zoom", m.zoom},
              {"size_px", m.size_px},
              {"radius_k", m.radius_k},
              {"excluded", m.excluded}};
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  for (const auto& c : j.at("cities")) {
    City city;
    city.name = c.at("name").get<std::string>();
    city.country = c.at("country").get<std::string>();
    city.latitude = c.at("latitude").get<double>();
    city.longitude = c.at("longitude").get<double>();
    city.population = c.at("population").get<int64_t>();
    m.cities.push_back(std::move(city));
  }
  for (const auto& r : j.at("records")) {
    TileRecord rec;
    rec.city_name = r.at("city").get<std::string>();
    rec.point.latitude = r.at("lat").get<double>();
    rec.point.longitude = r.at("lon").get<double>();
    rec.point.city_name = rec.city_name;
    rec.domain = domain_from_string(r.at("domain").get<std::string>());
    rec.split = split_from_string(r.at("split").get<std::string>());
    rec.cache_path = r.at("path").get<std::string>();
    rec.zoom = r.at("zoom").get<int>();
    rec.size_px = r.at("size_px").get<int>();
    m.records.push_back(std::move(rec));
  }
  m.samples_per_city = j.at("samples_per_city").get<int64_t>();
  m.split_ratio = j.at("split_ratio").get<double>();
  m.seed = j.at("seed").get<uint64_t>();
  m.zoom = j.at("zoom").get<int>();
  m.size_px = j.at("size_px").get<int>();
  m.radius_k = j.at("radius_k").get<double>();
  m.excluded = j.value("excluded", std::vector<std::string>{});
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open manifest for writing: " + path.string());
  os << manifest_to_json(m).dump(2) << "\n";
  if (!os) throw IoError("manifest write failed: " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IoError("manifest parse failure: " + std::string(e.what()));
  }
  return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// batch loading

std::vector<int64_t> domain_record_indices(const DatasetManifest& m, Domain domain) {
  std::vector<int64_t> out;
  for (int64_t i = 0; i < static_cast<int64_t>(m.records.size()); ++i)
    if (m.records[static_cast<size_t>(i)].domain == domain) out.push_back(i);
  return out;
}

std::vector<Image> load_batch(const DatasetManifest& m, std::span<const int64_t> indices,
                              Domain domain, const TileLoadOptions& opts) {
  auto pool = domain_record_indices(m, domain);
  uint64_t rseed = opts.render_seed.value_or(m.seed);

  std::unordered_map<std::string, const City*> city_of;
  for (const auto& c : m.cities) city_of[c.name] = &c;

  std::vector<Image> out;
  out.reserve(indices.size());
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= static_cast<int64_t>(pool.size()))
      throw ConfigError("tile index out of range: " + std::to_string(idx));
    const TileRecord& rec = m.records[static_cast<size_t>(pool[static_cast<size_t>(idx)])];
    const City* city = city_of.at(rec.city_name);

    if (opts.mode != TileMode::synthetic && !opts.cache_dir.empty()) {
      auto path = opts.cache_dir / rec.cache_path;
      if (std::filesystem::exists(path)) {
        out.push_back(read_png(path));
        continue;
      }
      if (opts.mode == TileMode::cache_only)
        throw IoError("missing tile in cache-only mode: " + path.string());
    } else if (opts.mode == TileMode::cache_only) {
      throw IoError("cache-only mode requires a cache directory");
    }
    out.push_back(render_synthetic_tile(*city, rec.point, rec.domain, opts.style, rec.size_px, rseed));
  }
  return out;
}

int64_t materialize_tiles(const DatasetManifest& m, Domain domain, const TileLoadOptions& opts) {
  if (opts.cache_dir.empty()) throw ConfigError("materialize_tiles requires a cache directory");
  uint64_t rseed = opts.render_seed.value_or(m.seed);
  std::unordered_map<std::string, const City*> city_of;
  for (const auto& c : m.cities) city_of[c.name] = &c;

  int64_t written = 0;
  for (const auto& rec : m.records) {
    if (rec.domain != domain) continue;
    auto path = opts.cache_dir / rec.cache_path;
    if (std::filesystem::exists(path)) continue;
    Image img =
        render_synthetic_tile(*city_of.at(rec.city_name), rec.point, rec.domain, opts.style,
                              rec.size_px, rseed);
    write_png_atomic(img, path);
    ++written;
  }
  return written;
}

std::vector<City> make_synthetic_cities(int count, uint64_t seed) {
  if (count < 1) throw ConfigError("city count must be >= 1");
  Rng rng(mix_seed(seed, 0x63697479));
  std::vector<City> cities;
  cities.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    City c;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "city_%03d", i);
    c.name = buf;
    c.country = "synthetic";
    c.latitude = rng.uniform(-55.0, 65.0);
    c.longitude = rng.uniform(-170.0, 170.0);
    c.population = 300000 + static_cast<int64_t>(rng.uniform(0.0, 6000000.0));
    cities.push_back(std::move(c));
  }
  return cities;
}

}  // namespace geossl
