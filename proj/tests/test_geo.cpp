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
#include "geossl/geo.hpp"
#include "geossl/rng.hpp"

using namespace geossl;

TEST_CASE("compute_radius power law") {
  CHECK(compute_radius(1, 1.0) == doctest::Approx(1.0));

  // Long-double oracle: 0.05 * exp(0.85 * ln 300000) = 2262.1587...
  long double oracle = 0.05L * expl(0.85L * logl(300000.0L));
  CHECK(compute_radius(300000, 0.05) ==
        doctest::Approx(static_cast<double>(oracle)).epsilon(1e-12));
  CHECK(compute_radius(300000, 0.05) == doctest::Approx(2262.1587).epsilon(1e-6));

  // Doubling the population scales the radius by exactly 2^0.85.
  double ratio = std::pow(2.0, 0.85);
  for (int64_t p : {1000LL, 300000LL, 7500000LL}) {
    for (double k : {0.01, 0.05, 2.0}) {
      double r = compute_radius(2 * p, k) / compute_radius(p, k);
      CHECK(std::abs(r - ratio) < 1e-9);
    }
  }

  // Monotone in population.
  double prev = 0;
  for (int64_t p = 1; p < 100000; p = p * 3 + 1) {
    double r = compute_radius(p, 0.05);
    CHECK(r > prev);
    prev = r;
  }

  CHECK_THROWS_AS(compute_radius(0, 1.0), ValidationError);
  CHECK_THROWS_AS(compute_radius(10, 0.0), ValidationError);
  CHECK_THROWS_AS(compute_radius(10, -1.0), ValidationError);
}

TEST_CASE("point_in_disc") {
  SamplingDisc d{48.8566, 2.3522, 10.0};
  SUBCASE("center is inside") {
    CHECK(point_in_disc({d.center_lat, d.center_lon, ""}, d));
  }
  SUBCASE("one degree of latitude is far outside a 10 m disc") {
    // haversine gives ~111,195 m per degree of latitude
    double one_deg = haversine_m(d.center_lat, d.center_lon, d.center_lat + 1.0, d.center_lon);
    CHECK(one_deg == doctest::Approx(111194.93).epsilon(1e-4));
    CHECK_FALSE(point_in_disc({d.center_lat + 1.0, d.center_lon, ""}, d));
  }
  SUBCASE("boundary points are admissible (closed disc)") {
    SamplingDisc big{10.0, 20.0, 5000.0};
    // Walk north until distance is within 1e-9 relative of the radius.
    double dlat = 5000.0 / 111194.926644;
    SamplePoint p{10.0 + dlat, 20.0, ""};
    double dist = haversine_m(p.latitude, p.longitude, big.center_lat, big.center_lon);
    CHECK(std::abs(dist - big.radius_m) / big.radius_m < 1e-6);
    SamplingDisc exact{10.0, 20.0, dist * (1.0 - 1e-10)};
    CHECK(point_in_disc(p, exact));
  }
  SUBCASE("invalid disc rejected") {
    CHECK_THROWS_AS(point_in_disc({0, 0, ""}, SamplingDisc{0, 0, -1.0}), ValidationError);
  }
}

TEST_CASE("point_in_mask even-odd") {
  WaterMask square;
  square.polygons.push_back({{0, 0}, {0, 1}, {1, 1}, {1, 0}});

  CHECK_FALSE(point_in_mask({0.5, 0.5, ""}, WaterMask{}));  // empty mask
  CHECK(point_in_mask({0.5, 0.5, ""}, square));
  CHECK_FALSE(point_in_mask({2, 2, ""}, square));

  SUBCASE("hole via even-odd") {
    WaterMask ring = square;
    ring.polygons.push_back({{0.25, 0.25}, {0.25, 0.75}, {0.75, 0.75}, {0.75, 0.25}});
    CHECK_FALSE(point_in_mask({0.5, 0.5, ""}, ring));   // inside both -> outside
    CHECK(point_in_mask({0.1, 0.1, ""}, ring));          // inside outer only
  }
  SUBCASE("degenerate ring") {
    WaterMask bad;
    bad.polygons.push_back({{0, 0}, {1, 1}});
    CHECK_THROWS_AS(point_in_mask({0.5, 0.5, ""}, bad), ValidationError);
  }
}

TEST_CASE("sample_points containment and determinism") {
  SamplingDisc d{35.0, 139.0, 3000.0};
  SUBCASE("all points in disc, none in mask") {
    WaterMask mask;
    mask.polygons.push_back({{34.99, 138.99}, {34.99, 139.0}, {35.0, 139.0}, {35.0, 138.99}});
    auto pts = sample_points(d, mask, 500, 42, "tokyo-ish");
    CHECK(pts.size() == 500);
    for (const auto& p : pts) {
      CHECK(point_in_disc(p, d));
      CHECK_FALSE(point_in_mask(p, mask));
      CHECK(p.city_name == "tokyo-ish");
    }
  }
  SUBCASE("identical seeds reproduce bitwise") {
    auto a = sample_points(d, WaterMask{}, 50, 7);
    auto b = sample_points(d, WaterMask{}, 50, 7);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].latitude == b[i].latitude);
      CHECK(a[i].longitude == b[i].longitude);
    }
  }
  SUBCASE("different seeds differ in the first point") {
    int differing = 0;
    for (uint64_t s = 0; s < 1000; ++s) {
      auto a = sample_points(d, WaterMask{}, 1, s);
      auto b = sample_points(d, WaterMask{}, 1, s + 1000);
      if (a[0].latitude != b[0].latitude || a[0].longitude != b[0].longitude) ++differing;
    }
    CHECK(differing >= 999);
  }
  SUBCASE("fully masked disc raises") {
    WaterMask everything;
    everything.polygons.push_back({{-80, -170}, {-80, 170}, {80, 170}, {80, -170}});
    SampleOptions opts;
    opts.max_attempts_per_point = 50;
    CHECK_THROWS_AS(sample_points(d, everything, 3, 1, "", opts), SamplingError);
  }
  SUBCASE("area-uniform radial distribution") {
    auto pts = sample_points(d, WaterMask{}, 10000, 11);
    int inner = 0;
    for (const auto& p : pts)
      if (haversine_m(p.latitude, p.longitude, d.center_lat, d.center_lon) <= d.radius_m / 2)
        ++inner;
    double frac = inner / 10000.0;
    CHECK(frac == doctest::Approx(0.25).epsilon(0.08));  // (r/2)^2 / r^2, +-0.02 band
    CHECK(std::abs(frac - 0.25) < 0.02);
  }
}

TEST_CASE("ground_resolution") {
  CHECK(ground_resolution(0.0, 16, 256) == doctest::Approx(611.4962).epsilon(1e-6));
  CHECK(ground_resolution(60.0, 16, 256) == doctest::Approx(305.7481).epsilon(1e-6));
  CHECK(ground_resolution(0.0, 17, 256) ==
        doctest::Approx(ground_resolution(0.0, 16, 256) / 2).epsilon(1e-12));
  // Halving per zoom step, everywhere.
  for (int z = 0; z < 22; ++z)
    CHECK(ground_resolution(37.5, z + 1, 256) ==
          doctest::Approx(ground_resolution(37.5, z, 256) / 2).epsilon(1e-12));
  CHECK_THROWS_AS(ground_resolution(85.06, 16, 256), ValidationError);
  CHECK_THROWS_AS(ground_resolution(-89.0, 16, 256), ValidationError);
  CHECK_THROWS_AS(ground_resolution(0.0, 23, 256), ValidationError);
  CHECK_THROWS_AS(ground_resolution(0.0, 16, 0), ValidationError);
}

TEST_CASE("city CSV loading") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "geossl_test_csv";
  fs::create_directories(dir);
  fs::path csv = dir / "cities.csv";
  {
    std::ofstream os(csv);
    os << "name,country,latitude,longitude,population\n";
    os << "Paris,France,48.8566,2.3522,2161000\n";
    os << "\"Washington, D.C.\",USA,38.9072,-77.0369,705749\n";
  }
  auto cities = load_cities_csv(csv);
  REQUIRE(cities.size() == 2);
  CHECK(cities[0].name == "Paris");
  CHECK(cities[1].name == "Washington, D.C.");
  CHECK(cities[1].longitude == doctest::Approx(-77.0369));

  SUBCASE("duplicate names rejected") {
    std::ofstream os(csv);
    os << "name,country,latitude,longitude,population\n";
    os << "A,X,1,1,100\nA,Y,2,2,200\n";
    os.close();
    CHECK_THROWS_AS(load_cities_csv(csv), ValidationError);
  }
  SUBCASE("bad header rejected") {
    std::ofstream os(csv);
    os << "city,country,lat,lon,pop\n";
    os.close();
    CHECK_THROWS_AS(load_cities_csv(csv), IoError);
  }
  SUBCASE("out-of-range latitude rejected") {
    std::ofstream os(csv);
    os << "name,country,latitude,longitude,population\n";
    os << "Bad,X,91.0,0,100\n";
    os.close();
    CHECK_THROWS_AS(load_cities_csv(csv), ValidationError);
  }
}

TEST_CASE("water mask file loading") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "geossl_test_mask";
  fs::create_directories(dir);
  fs::path file = dir / "mask.txt";
  {
    std::ofstream os(file);
    os << "# lake\n";
    os << "0 0, 0 1, 1 1, 1 0\n";
    os << "5 5, 5 6, 6 6\n";
  }
  auto mask = load_water_mask(file);
  REQUIRE(mask.polygons.size() == 2);
  CHECK(mask.polygons[0].size() == 4);
  CHECK(mask.polygons[1].size() == 3);
  CHECK(point_in_mask({0.5, 0.5, ""}, mask));

  SUBCASE("short ring rejected") {
    std::ofstream os(file);
    os << "0 0, 1 1\n";
    os.close();
    CHECK_THROWS_AS(load_water_mask(file), ValidationError);
  }
}

TEST_CASE("annulus chi-square uniformity") {
  // 8 equal-area annuli: bounds r_i = R sqrt(i/8). With area-uniform
  // sampling the counts are multinomial-uniform; chi-square(7) at
  // alpha = 0.001 has critical value 24.322.
  SamplingDisc d{-20.0, 55.0, 8000.0};
  const int n = 80000;
  auto pts = sample_points(d, WaterMask{}, n, 20260808);
  int counts[8] = {0};
  for (const auto& p : pts) {
    double r = haversine_m(p.latitude, p.longitude, d.center_lat, d.center_lon);
    double u = (r / d.radius_m) * (r / d.radius_m);
    int bin = std::min(7, static_cast<int>(u * 8.0));
    counts[bin]++;
  }
  double expected = n / 8.0;
  double chi2 = 0.0;
  for (int counts_i : counts) {
    double dlt = counts_i - expected;
    chi2 += dlt * dlt / expected;
  }
  CHECK(chi2 < 24.322);
}
