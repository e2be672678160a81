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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "geossl/bench.hpp"
#include "geossl/error.hpp"

namespace py = pybind11;
using namespace geossl;

namespace {

Tensor tensor_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int64_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  std::vector<float> values(a.data(), a.data() + a.size());
  return Tensor::from_values(std::move(shape), std::move(values));
}

py::array_t<float> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> a(shape);
  std::copy(t.data(), t.data() + t.numel(), a.mutable_data());
  return a;
}

py::array_t<uint8_t> array_from_image(const Image& img) {
  py::array_t<uint8_t> a({static_cast<py::ssize_t>(img.height), static_cast<py::ssize_t>(img.width),
                          static_cast<py::ssize_t>(3)});
  std::copy(img.pixels.begin(), img.pixels.end(), a.mutable_data());
  return a;
}

double info_nce_value(const py::array_t<float, py::array::c_style | py::array::forcecast>& q,
                      const py::array_t<float, py::array::c_style | py::array::forcecast>& k,
                      const py::array_t<float, py::array::c_style | py::array::forcecast>& queue,
                      double tau) {
  Tape t;
  Var qv = t.leaf(tensor_from_array(q), true);
  Var kv = t.leaf(tensor_from_array(k), false);
  Var loss = info_nce_loss(t, qv, kv, tensor_from_array(queue), tau);
  return t.value(loss)[0];
}

py::array_t<float> teacher_distribution_py(
    const py::array_t<float, py::array::c_style | py::array::forcecast>& logits,
    const py::array_t<float, py::array::c_style | py::array::forcecast>& center, double tau_t) {
  return array_from_tensor(teacher_distribution(tensor_from_array(logits),
                                                tensor_from_array(center), tau_t));
}

py::array_t<double> sample_points_py(double lat, double lon, double radius_m, int64_t n,
                                     uint64_t seed) {
  SamplingDisc disc{lat, lon, radius_m};
  auto pts = sample_points(disc, WaterMask{}, n, seed);
  py::array_t<double> out({static_cast<py::ssize_t>(pts.size()), static_cast<py::ssize_t>(2)});
  auto* d = out.mutable_data();
  for (size_t i = 0; i < pts.size(); ++i) {
    d[2 * i] = pts[i].latitude;
    d[2 * i + 1] = pts[i].longitude;
  }
  return out;
}

py::array_t<uint8_t> render_tile_py(const std::string& city_name, int64_t population, double lat,
                                    double lon, const std::string& domain, int size_px,
                                    uint64_t seed) {
  City city{city_name, "", lat, lon, population};
  SamplePoint point{lat, lon, city_name};
  return array_from_image(render_synthetic_tile(city, point, domain_from_string(domain),
                                                StyleSpec{}, size_px, seed));
}

std::string build_manifest_json_py(int cities, int64_t samples_per_city, double split_ratio,
                                   uint64_t seed, int size_px) {
  auto roster = make_synthetic_cities(cities, seed);
  ManifestOptions opts;
  opts.size_px = size_px;
  auto manifest = build_manifest(roster, samples_per_city, split_ratio, seed, opts);
  return manifest_to_json(manifest).dump(2);
}

py::list make_views_list(const py::array_t<float, py::array::c_style | py::array::forcecast>& img,
                         const std::string& recipe_name, int out_px, uint64_t seed) {
  AugmentRecipe recipe;
  if (recipe_name == "v1")
    recipe = AugmentRecipe::v1(out_px);
  else if (recipe_name == "v2")
    recipe = AugmentRecipe::v2(out_px);
  else if (recipe_name == "dino")
    recipe = AugmentRecipe::dino(out_px, out_px / 2);
  else
    throw ConfigError("recipe must be v1, v2, or dino");
  Rng rng(seed);
  auto views = make_views(tensor_from_array(img), recipe, rng);
  py::list out;
  for (const auto& v : views.views) out.append(array_from_tensor(v));
  return out;
}

std::string run_experiment_py(const std::string& config_text, const std::string& section) {
  ConfigFile cf = ConfigFile::parse_string(config_text);
  ExperimentConfig cfg = ExperimentConfig::from_config(cf, section);
  auto report = run_experiment(cfg);
  return render_markdown(report);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "geossl core: geospatial sampling, synthetic tiles, and self-supervised training ops";

  py::register_exception<geossl::Error>(m, "GeosslError");

  m.def("compute_radius", &compute_radius, py::arg("population"), py::arg("k"),
        "k * population^0.85 in meters");
  m.def("haversine_m", &haversine_m, py::arg("lat1"), py::arg("lon1"), py::arg("lat2"),
        py::arg("lon2"));
  m.def("ground_resolution", &ground_resolution, py::arg("latitude_deg"), py::arg("zoom"),
        py::arg("tile_px"), "Web-Mercator ground width of a tile in meters");
  m.def("sample_points", &sample_points_py, py::arg("lat"), py::arg("lon"), py::arg("radius_m"),
        py::arg("n"), py::arg("seed"), "area-uniform points inside a disc as an [n,2] array");
  m.def("render_tile", &render_tile_py, py::arg("city_name"), py::arg("population"),
        py::arg("lat"), py::arg("lon"), py::arg("domain"), py::arg("size_px"), py::arg("seed"),
        "procedural synthetic tile as an [s,s,3] uint8 array");
  m.def("build_request", [](double lat, double lon, const std::string& domain, int zoom,
                            int size_px, const std::string& key) {
          SamplePoint p{lat, lon, ""};
          return build_request(p, domain_from_string(domain), zoom, size_px, StyleSpec{}, key);
        },
        py::arg("lat"), py::arg("lon"), py::arg("domain"), py::arg("zoom") = 16,
        py::arg("size_px") = 256, py::arg("api_key") = "KEY");
  m.def("build_manifest_json", &build_manifest_json_py, py::arg("cities"),
        py::arg("samples_per_city"), py::arg("split_ratio"), py::arg("seed"),
        py::arg("size_px") = 64, "synthetic-roster manifest as a JSON string");
  m.def("info_nce", &info_nce_value, py::arg("q"), py::arg("k_pos"), py::arg("queue"),
        py::arg("tau"), "InfoNCE loss over unit-normalized rows");
  m.def("teacher_distribution", &teacher_distribution_py, py::arg("logits"), py::arg("center"),
        py::arg("tau_t"), "centered, sharpened teacher softmax rows");
  m.def("cosine_lr", &cosine_lr, py::arg("step"), py::arg("total_steps"), py::arg("base_lr"));
  m.def("step_lr", [](int64_t e, int64_t total, double lr) { return step_lr(e, total, lr); },
        py::arg("epoch"), py::arg("total_epochs"), py::arg("base_lr"));
  m.def("make_views", &make_views_list, py::arg("image"), py::arg("recipe"), py::arg("out_px"),
        py::arg("seed"), "augmented views of an [h,w,3] float image in [0,1]");
  m.def("run_experiment", &run_experiment_py, py::arg("config_text"), py::arg("section") = "",
        "run a full experiment from config text; returns the markdown report");

  m.attr("__version__") = "0.1.0";
}
