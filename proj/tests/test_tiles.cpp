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
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "geossl/error.hpp"
#include "geossl/rng.hpp"
#include "geossl/tiles.hpp"

using namespace geossl;

namespace {

std::vector<City> two_cities() {
  return {{"alpha", "xx", 10.0, 20.0, 500000}, {"bravo", "xx", -30.0, 150.0, 2500000}};
}

double road_fraction(const Image& img, const Rgb& road) {
  int64_t count = 0;
  for (size_t i = 0; i < img.pixels.size(); i += 3)
    if (img.pixels[i] == road[0] && img.pixels[i + 1] == road[1] && img.pixels[i + 2] == road[2])
      ++count;
  return static_cast<double>(count) / (static_cast<double>(img.pixels.size()) / 3);
}

}  // namespace

TEST_CASE("style spec") {
  StyleSpec def;
  def.validate();
  CHECK(def.road == Rgb{0, 0, 0});
  CHECK(def.transit == Rgb{255, 165, 0});
  CHECK(def.greenspace == Rgb{0, 128, 0});
  CHECK(def.water == Rgb{0, 0, 255});
  CHECK(def.background == Rgb{255, 255, 255});

  StyleSpec dup = def;
  dup.transit = dup.road;
  CHECK_THROWS_AS(dup.validate(), ValidationError);
}

TEST_CASE("build_request") {
  SamplePoint p{48.8566, 2.3522, "paris"};
  SUBCASE("map request carries zoom, size, and five style clauses") {
    std::string url = build_request(p, Domain::map, 16, 256, StyleSpec{}, "TESTKEY");
    CHECK(url.find("zoom=16") != std::string::npos);
    CHECK(url.find("size=256x256") != std::string::npos);
    CHECK(url.find("maptype=roadmap") != std::string::npos);
    size_t n = 0;
    for (size_t pos = url.find("style="); pos != std::string::npos;
         pos = url.find("style=", pos + 1))
      ++n;
    CHECK(n == 5);
    CHECK(url.find("color:0x000000") != std::string::npos);   // roads
    CHECK(url.find("color:0xFFA500") != std::string::npos);   // transit
    CHECK(url.find("color:0x008000") != std::string::npos);   // greenspace
    CHECK(url.find("color:0x0000FF") != std::string::npos);   // water
    CHECK(url.find("color:0xFFFFFF") != std::string::npos);   // background
  }
  SUBCASE("satellite request has no styles") {
    std::string url = build_request(p, Domain::satellite, 16, 256, StyleSpec{}, "TESTKEY");
    CHECK(url.find("maptype=satellite") != std::string::npos);
    CHECK(url.find("style=") == std::string::npos);
  }
  SUBCASE("deterministic") {
    CHECK(build_request(p, Domain::map, 16, 256, StyleSpec{}, "K") ==
          build_request(p, Domain::map, 16, 256, StyleSpec{}, "K"));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(build_request(p, Domain::map, 16, 0, StyleSpec{}, "K"), ConfigError);
    CHECK_THROWS_AS(build_request(p, Domain::map, 16, 256, StyleSpec{}, ""), ConfigError);
    CHECK_THROWS_AS(domain_from_string("aerial"), ConfigError);
  }
}

TEST_CASE("synthetic map tiles use exactly the style palette") {
  auto cities = two_cities();
  StyleSpec style;
  auto palette = style.palette();
  for (const auto& city : cities) {
    SamplePoint p{city.latitude + 0.01, city.longitude - 0.01, city.name};
    Image img = render_synthetic_tile(city, p, Domain::map, style, 64, 9);
    for (size_t i = 0; i < img.pixels.size(); i += 3) {
      Rgb px{img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]};
      bool in_palette = false;
      for (const auto& c : palette)
        if (c == px) in_palette = true;
      REQUIRE(in_palette);
    }
  }
}

TEST_CASE("synthetic tiles are deterministic and point-sensitive") {
  City city{"alpha", "xx", 10.0, 20.0, 500000};
  SamplePoint p1{10.01, 20.01, "alpha"};
  SamplePoint p2{10.02, 19.99, "alpha"};
  Image a = render_synthetic_tile(city, p1, Domain::satellite, StyleSpec{}, 64, 3);
  Image b = render_synthetic_tile(city, p1, Domain::satellite, StyleSpec{}, 64, 3);
  Image c = render_synthetic_tile(city, p2, Domain::satellite, StyleSpec{}, 64, 3);
  CHECK(a == b);
  CHECK_FALSE(a == c);
}

TEST_CASE("per-city road statistics separate cities") {
  auto cities = two_cities();
  StyleSpec style;
  Rng rng(77);
  std::vector<double> mean(2), stddev(2);
  for (size_t ci = 0; ci < 2; ++ci) {
    std::vector<double> fracs;
    for (int i = 0; i < 100; ++i) {
      SamplePoint p{cities[ci].latitude + rng.uniform(-0.05, 0.05),
                    cities[ci].longitude + rng.uniform(-0.05, 0.05), cities[ci].name};
      fracs.push_back(road_fraction(
          render_synthetic_tile(cities[ci], p, Domain::map, style, 64, 5), style.road));
    }
    double m = 0;
    for (double f : fracs) m += f;
    m /= static_cast<double>(fracs.size());
    double v = 0;
    for (double f : fracs) v += (f - m) * (f - m);
    mean[ci] = m;
    stddev[ci] = std::sqrt(v / static_cast<double>(fracs.size()));
  }
  CHECK(std::abs(mean[0] - mean[1]) > std::max(stddev[0], stddev[1]));
}

TEST_CASE("manifest construction and splits") {
  auto cities = two_cities();
  ManifestOptions opts;
  opts.size_px = 32;
  auto m = build_manifest(cities, 10, 0.8, 5, opts);

  CHECK(m.cities.size() == 2);
  CHECK(m.records.size() == 2 * 2 * 10);  // cities x domains x samples
  m.validate();

  SUBCASE("8/2 split per city per domain") {
    for (const auto& city : cities) {
      for (Domain d : {Domain::satellite, Domain::map}) {
        int train = 0, test = 0;
        for (const auto& r : m.records)
          if (r.city_name == city.name && r.domain == d)
            (r.split == Split::train ? train : test)++;
        CHECK(train == 8);
        CHECK(test == 2);
      }
    }
  }
  SUBCASE("splits agree across domains for the same index") {
    for (const auto& city : cities) {
      std::vector<Split> sat, mp;
      for (const auto& r : m.records) {
        if (r.city_name != city.name) continue;
        (r.domain == Domain::satellite ? sat : mp).push_back(r.split);
      }
      CHECK(sat == mp);
    }
  }
  SUBCASE("ratio 0.5 with 2 samples gives 1/1") {
    auto m2 = build_manifest(cities, 2, 0.5, 5, opts);
    int train = 0, test = 0;
    for (const auto& r : m2.records)
      if (r.city_name == "alpha" && r.domain == Domain::satellite)
        (r.split == Split::train ? train : test)++;
    CHECK(train == 1);
    CHECK(test == 1);
  }
  SUBCASE("validation knobs") {
    CHECK_THROWS_AS(build_manifest(cities, 1, 0.8, 5, opts), ConfigError);
    CHECK_THROWS_AS(build_manifest(cities, 10, 1.0, 5, opts), ConfigError);
  }
}

TEST_CASE("manifest serialization") {
  auto cities = two_cities();
  ManifestOptions opts;
  opts.size_px = 32;
  opts.blocklist = {"bravo"};
  auto m = build_manifest(cities, 4, 0.75, 9, opts);
  CHECK(m.cities.size() == 1);
  CHECK(m.excluded == std::vector<std::string>{"bravo"});

  SUBCASE("round trip preserves everything") {
    auto j = manifest_to_json(m);
    auto back = manifest_from_json(j);
    CHECK(manifest_to_json(back) == j);
    REQUIRE(back.records.size() == m.records.size());
    for (size_t i = 0; i < m.records.size(); ++i) {
      CHECK(back.records[i].point.latitude == m.records[i].point.latitude);
      CHECK(back.records[i].point.longitude == m.records[i].point.longitude);
      CHECK(back.records[i].cache_path == m.records[i].cache_path);
    }
  }
  SUBCASE("same seed serializes byte-identically") {
    auto m2 = build_manifest(cities, 4, 0.75, 9, opts);
    CHECK(manifest_to_json(m).dump() == manifest_to_json(m2).dump());
  }
  SUBCASE("file round trip") {
    namespace fs = std::filesystem;
    fs::path path = fs::temp_directory_path() / "geossl_test_manifest" / "m.json";
    save_manifest(m, path);
    auto back = load_manifest(path);
    CHECK(manifest_to_json(back).dump() == manifest_to_json(m).dump());
  }
}

TEST_CASE("load_batch contracts") {
  auto cities = two_cities();
  ManifestOptions opts;
  opts.size_px = 32;
  auto m = build_manifest(cities, 4, 0.75, 13, opts);
  TileLoadOptions load;  // synthetic

  SUBCASE("empty index list") { CHECK(load_batch(m, {}, Domain::map, load).empty()); }
  SUBCASE("single index has the shape contract") {
    std::vector<int64_t> idx = {0};
    auto imgs = load_batch(m, idx, Domain::map, load);
    REQUIRE(imgs.size() == 1);
    CHECK(imgs[0].width == 32);
    CHECK(imgs[0].height == 32);
  }
  SUBCASE("permuted indices permute the images") {
    std::vector<int64_t> fwd = {0, 1, 2, 3};
    std::vector<int64_t> rev = {3, 2, 1, 0};
    auto a = load_batch(m, fwd, Domain::satellite, load);
    auto b = load_batch(m, rev, Domain::satellite, load);
    REQUIRE(a.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(a[static_cast<size_t>(i)] == b[static_cast<size_t>(3 - i)]);
  }
  SUBCASE("out-of-range index raises") {
    std::vector<int64_t> idx = {99};
    CHECK_THROWS_AS(load_batch(m, idx, Domain::map, load), ConfigError);
  }
  SUBCASE("cache-only mode needs the cache") {
    namespace fs = std::filesystem;
    TileLoadOptions strict;
    strict.mode = TileMode::cache_only;
    strict.cache_dir = fs::temp_directory_path() / "geossl_test_missing_cache";
    std::vector<int64_t> idx = {0};
    CHECK_THROWS_AS(load_batch(m, idx, Domain::map, strict), IoError);
  }
}

TEST_CASE("cache idempotence") {
  namespace fs = std::filesystem;
  auto cities = two_cities();
  ManifestOptions opts;
  opts.size_px = 32;
  auto m = build_manifest(cities, 3, 0.67, 21, opts);

  TileLoadOptions load;
  load.mode = TileMode::cache_or_synthetic;
  load.cache_dir = fs::temp_directory_path() / "geossl_test_cache";
  fs::remove_all(load.cache_dir);

  int64_t written = materialize_tiles(m, Domain::map, load);
  CHECK(written == 2 * 3);
  CHECK(materialize_tiles(m, Domain::map, load) == 0);  // already cached

  std::vector<int64_t> idx = {0, 1, 2};
  auto from_cache = load_batch(m, idx, Domain::map, load);
  TileLoadOptions synth;  // render the same tiles directly
  auto rendered = load_batch(m, idx, Domain::map, synth);
  REQUIRE(from_cache.size() == rendered.size());
  for (size_t i = 0; i < rendered.size(); ++i) CHECK(from_cache[i] == rendered[i]);
}

TEST_CASE("synthetic city roster") {
  auto cities = make_synthetic_cities(20, 3);
  CHECK(cities.size() == 20);
  std::set<std::string> names;
  for (const auto& c : cities) {
    c.validate();
    names.insert(c.name);
    CHECK(c.population >= 300000);
  }
  CHECK(names.size() == 20);
  auto again = make_synthetic_cities(20, 3);
  CHECK(again[7].latitude == cities[7].latitude);
}

TEST_CASE("sanitize city names for cache paths") {
  CHECK(sanitize_city_name("Washington, D.C.") == "Washington__D.C.");
  CHECK(sanitize_city_name("a/b") == "a_b");
  CHECK(sanitize_city_name("") == "_");
}
