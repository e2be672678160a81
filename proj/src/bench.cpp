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

#include "geossl/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "geossl/error.hpp"

namespace geossl {

// ---------------------------------------------------------------------------
// config file

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

ConfigFile ConfigFile::parse_string(const std::string& text) {
  ConfigFile cfg;
  std::string section;
  std::stringstream ss(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw IoError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw IoError("config line " + std::to_string(lineno) + ": empty key");
    cfg.values_[section + "." + key] = value;
  }
  return cfg;
}

ConfigFile ConfigFile::parse_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_string(ss.str());
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  return values_.count(section + "." + key) > 0 || values_.count("." + key) > 0;
}

std::string ConfigFile::get(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  auto it = values_.find(section + "." + key);
  if (it != values_.end()) return it->second;
  it = values_.find("." + key);
  if (it != values_.end()) return it->second;
  return fallback;
}

int64_t ConfigFile::get_int(const std::string& section, const std::string& key,
                            int64_t fallback) const {
  std::string v = get(section, key, "");
  if (v.empty()) return fallback;
  try {
    size_t pos = 0;
    int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an integer: " + v);
  }
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  std::string v = get(section, key, "");
  if (v.empty()) return fallback;
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: " + v);
  }
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  std::string v = get(section, key, "");
  if (v.empty()) return fallback;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + " is not a boolean: " + v);
}

void ConfigFile::set(const std::string& section, const std::string& key,
                     const std::string& value) {
  values_[section + "." + key] = value;
}

// ---------------------------------------------------------------------------
// experiment config

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::generalizability: return "generalizability";
    case ExperimentKind::abstraction: return "abstraction";
    case ExperimentKind::domain_gap: return "domain_gap";
  }
  return "?";
}

ExperimentKind experiment_from_string(const std::string& s) {
  if (s == "generalizability") return ExperimentKind::generalizability;
  if (s == "abstraction") return ExperimentKind::abstraction;
  if (s == "domain_gap") return ExperimentKind::domain_gap;
  throw ConfigError("unknown experiment: " + s);
}

ExperimentConfig ExperimentConfig::from_config(const ConfigFile& cfg, const std::string& section) {
  ExperimentConfig c;
  c.experiment = experiment_from_string(cfg.get(section, "experiment", section.empty() ? "generalizability" : section));
  if (cfg.has(section, "domains")) {
    c.domains.clear();
    for (const auto& d : split_list(cfg.get(section, "domains", "")))
      c.domains.push_back(domain_from_string(d));
  }
  if (cfg.has(section, "workflows")) {
    c.workflows.clear();
    for (const auto& w : split_list(cfg.get(section, "workflows", "")))
      c.workflows.push_back(workflow_from_string(w));
  }
  c.cities = static_cast<int>(cfg.get_int(section, "cities", c.cities));
  c.pretrain_cities = static_cast<int>(cfg.get_int(section, "pretrain_cities", c.pretrain_cities));
  c.require_holdout = cfg.get_bool(section, "require_holdout", c.require_holdout);
  c.samples_per_city = cfg.get_int(section, "samples_per_city", c.samples_per_city);
  c.split_ratio = cfg.get_double(section, "split_ratio", c.split_ratio);
  c.tile_px = static_cast<int>(cfg.get_int(section, "tile_px", c.tile_px));
  c.view_px = static_cast<int>(cfg.get_int(section, "view_px", c.view_px));
  c.pretrain_steps = cfg.get_int(section, "pretrain_steps", c.pretrain_steps);
  c.batch_size = static_cast<int>(cfg.get_int(section, "batch_size", c.batch_size));
  c.base_lr = cfg.get_double(section, "base_lr", c.base_lr);
  c.queue_size = cfg.get_int(section, "queue_size", c.queue_size);
  c.probe_epochs = static_cast<int>(cfg.get_int(section, "probe_epochs", c.probe_epochs));
  c.probe_lr = cfg.get_double(section, "probe_lr", c.probe_lr);
  c.probe_batch = static_cast<int>(cfg.get_int(section, "probe_batch", c.probe_batch));
  c.embedding_dim = static_cast<int>(cfg.get_int(section, "embedding_dim", c.embedding_dim));
  c.include_random_baseline =
      cfg.get_bool(section, "include_random_baseline", c.include_random_baseline);
  c.dino_steps = cfg.get_int(section, "dino_steps", c.dino_steps);
  c.dino_batch = static_cast<int>(cfg.get_int(section, "dino_batch", c.dino_batch));
  c.dino_pseudo_classes = cfg.get_int(section, "dino_pseudo_classes", c.dino_pseudo_classes);
  c.dino_n_local = static_cast<int>(cfg.get_int(section, "dino_n_local", c.dino_n_local));
  c.dino_local_px = static_cast<int>(cfg.get_int(section, "dino_local_px", c.dino_local_px));
  c.seed = static_cast<uint64_t>(cfg.get_int(section, "seed", static_cast<int64_t>(c.seed)));
  c.out_dir = cfg.get(section, "out_dir", c.out_dir.string());
  std::string csv = cfg.get(section, "cities_csv", "");
  if (!csv.empty()) c.cities_csv = csv;
  std::string cache = cfg.get(section, "cache_dir", "");
  if (!cache.empty()) c.cache_dir = cache;
  c.offline = cfg.get_bool(section, "offline", c.offline);
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (cities < 2) throw ConfigError("need at least 2 cities");
  if (pretrain_cities < 1 || pretrain_cities > cities)
    throw ConfigError("pretrain_cities must lie in [1, cities]");
  if (require_holdout && pretrain_cities == cities)
    throw ConfigError("holdout requested but the pretrain subset equals the full city set");
  if (domains.empty() || workflows.empty()) throw ConfigError("domains and workflows must be nonempty");
  if (experiment == ExperimentKind::abstraction)
    for (Domain d : domains)
      if (d != Domain::map) throw ConfigError("abstraction experiment runs on the map domain");
  if (samples_per_city < 2) throw ConfigError("samples_per_city must be >= 2");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split_ratio must be in (0,1)");
  if (pretrain_steps < 1 || probe_epochs < 0) throw ConfigError("bad budgets");
}

nlohmann::json ExperimentConfig::to_json() const {
  std::vector<std::string> ds, ws;
  for (Domain d : domains) ds.push_back(to_string(d));
  for (Workflow w : workflows) ws.push_back(to_string(w));
  return nlohmann::json{{"experiment", to_string(experiment)},
                        {"domains", ds},
                        {"workflows", ws},
                        {"cities", cities},
                        {"pretrain_cities", pretrain_cities},
                        {"samples_per_city", samples_per_city},
                        {"split_ratio", split_ratio},
                        {"tile_px", tile_px},
                        {"view_px", view_px},
                        {"pretrain_steps", pretrain_steps},
                        {"batch_size", batch_size},
                        {"base_lr", base_lr},
                        {"queue_size", queue_size},
                        {"probe_epochs", probe_epochs},
                        {"probe_lr", probe_lr},
                        {"embedding_dim", embedding_dim},
                        {"seed", seed}};
}

// ---------------------------------------------------------------------------
// samplers and split loading

BatchSampler::BatchSampler(const DatasetManifest& manifest, Domain domain, Split split,
                           std::vector<std::string> allowed_cities, int batch_size,
                           int /*view_source_px*/, const TileLoadOptions& load, uint64_t seed)
    : manifest_(&manifest), domain_(domain), batch_size_(batch_size), load_(load), seed_(seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  std::sort(allowed_cities.begin(), allowed_cities.end());
  classes_ = allowed_cities;
  for (size_t i = 0; i < classes_.size(); ++i) class_index_[classes_[i]] = static_cast<int>(i);

  auto pool = domain_record_indices(manifest, domain);
  for (size_t i = 0; i < pool.size(); ++i) {
    const TileRecord& rec = manifest.records[static_cast<size_t>(pool[i])];
    if (rec.split != split) continue;
    auto it = class_index_.find(rec.city_name);
    if (it == class_index_.end()) continue;
    pool_.push_back(static_cast<int64_t>(i));  // index into the domain-filtered list
    pool_labels_.push_back(it->second);
  }
  if (pool_.empty()) throw ConfigError("sampler pool is empty for the requested slice");
}

std::vector<Tensor> BatchSampler::draw(int64_t ordinal) { return draw_labeled(ordinal).first; }

std::pair<std::vector<Tensor>, std::vector<int>> BatchSampler::draw_labeled(int64_t ordinal) {
  Rng rng(mix_seed(seed_, static_cast<uint64_t>(ordinal)));
  std::vector<int64_t> picks(static_cast<size_t>(batch_size_));
  std::vector<int> labels(static_cast<size_t>(batch_size_));
  for (int i = 0; i < batch_size_; ++i) {
    int64_t j = rng.uniform_int(0, static_cast<int64_t>(pool_.size()) - 1);
    picks[static_cast<size_t>(i)] = pool_[static_cast<size_t>(j)];
    labels[static_cast<size_t>(i)] = pool_labels_[static_cast<size_t>(j)];
  }
  auto imgs = load_batch(*manifest_, picks, domain_, load_);

  auto domain_pool = domain_record_indices(*manifest_, domain_);
  std::vector<Tensor> out;
  out.reserve(imgs.size());
  for (size_t i = 0; i < imgs.size(); ++i) {
    const TileRecord& rec =
        manifest_->records[static_cast<size_t>(domain_pool[static_cast<size_t>(picks[i])])];
    if (!class_index_.count(rec.city_name))
      throw StateError("sampler yielded a tile from outside the allowed city set: " +
                       rec.city_name);
    served_[rec.city_name]++;
    ++total_;
    out.push_back(image_to_tensor(imgs[i]));
  }
  return {std::move(out), std::move(labels)};
}

int BatchSampler::label_of(const std::string& city) const {
  auto it = class_index_.find(city);
  if (it == class_index_.end()) throw ConfigError("city not in sampler classes: " + city);
  return it->second;
}

BatchSource BatchSampler::as_source() {
  return [this](int64_t ordinal) { return draw(ordinal); };
}

Tensor probe_view(const Tensor& img, int out_px) {
  int64_t h = img.dim(0), w = img.dim(1);
  int64_t side = std::min(h, w);
  auto crop_side = static_cast<int64_t>(std::lround(static_cast<double>(side) * 0.875));
  if (crop_side < 1) crop_side = 1;
  int64_t y0 = (h - crop_side) / 2, x0 = (w - crop_side) / 2;
  Tensor c({crop_side, crop_side, 3});
  for (int64_t y = 0; y < crop_side; ++y)
    for (int64_t x = 0; x < crop_side; ++x)
      for (int64_t ch = 0; ch < 3; ++ch)
        c[(y * crop_side + x) * 3 + ch] = img[((y0 + y) * w + x0 + x) * 3 + ch];
  return resize_bilinear(c, out_px, out_px);
}

LabeledImages load_split(const DatasetManifest& m, Domain domain, Split split,
                         const std::vector<std::string>& cities, int view_px,
                         const TileLoadOptions& load) {
  std::vector<std::string> sorted = cities;
  std::sort(sorted.begin(), sorted.end());
  std::unordered_map<std::string, int> label;
  for (size_t i = 0; i < sorted.size(); ++i) label[sorted[i]] = static_cast<int>(i);

  auto pool = domain_record_indices(m, domain);
  std::vector<int64_t> wanted;
  std::vector<int> labels;
  for (size_t i = 0; i < pool.size(); ++i) {
    const TileRecord& rec = m.records[static_cast<size_t>(pool[i])];
    if (rec.split != split) continue;
    auto it = label.find(rec.city_name);
    if (it == label.end()) continue;
    wanted.push_back(static_cast<int64_t>(i));
    labels.push_back(it->second);
  }
  auto imgs = load_batch(m, wanted, domain, load);

  LabeledImages out;
  out.class_names = sorted;
  out.labels = std::move(labels);
  out.images.reserve(imgs.size());
  for (auto& im : imgs) out.images.push_back(probe_view(image_to_tensor(im), view_px));
  return out;
}

// ---------------------------------------------------------------------------
// reports

std::vector<GapRow> domain_gap_table(const std::vector<ReportRow>& rows) {
  std::map<std::string, std::map<std::string, double>> acc;
  for (const auto& r : rows) acc[r.workflow][r.domain] = r.top1;
  std::vector<GapRow> out;
  for (const auto& [method, cells] : acc) {
    auto sat = cells.find("satellite");
    auto map_it = cells.find("map");
    if (sat == cells.end() || map_it == cells.end())
      throw ValidationError("incomplete results: method " + method +
                            " is missing a satellite or map accuracy");
    out.push_back({method, sat->second, map_it->second});
  }
  return out;
}

std::vector<GapRow> reference_gap_rows() {
  return {{"supervised", 0.99, 0.86}, {"self-supervised", 0.98, 0.67}};
}

std::vector<ReportRow> reference_table_rows() {
  // Full-scale published accuracies; steps column carries epochs here.
  return {
      {"generalizability", "satellite", "v1", 200, 200, 200, 0, 0.95},
      {"generalizability", "satellite", "v2", 200, 200, 200, 0, 0.99},
      {"generalizability", "satellite", "v1", 200, 200, 1690, 1490, 0.81},
      {"generalizability", "satellite", "v2", 200, 200, 1690, 1490, 0.95},
      {"generalizability", "satellite", "v2", 1690, 145, 1690, 0, 0.98},
      {"abstraction", "map", "v1", 1665, 200, 1665, 0, 0.67},
      {"abstraction", "map", "v2", 1665, 200, 1665, 0, 0.61},
      {"abstraction", "map", "dino", 1665, 180, 1665, 0, 0.36},
  };
}

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open report csv: " + path.string());
  os << "experiment,domain,workflow,pretrain_cities,steps,test_cities,unseen_cities,top1\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%lld,%lld,%lld,%lld,%.6f\n", r.experiment.c_str(),
                  r.domain.c_str(), r.workflow.c_str(), static_cast<long long>(r.pretrain_cities),
                  static_cast<long long>(r.steps), static_cast<long long>(r.test_cities),
                  static_cast<long long>(r.unseen_cities), r.top1);
    os << buf;
  }
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open report csv: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty report csv: " + path.string());
  std::vector<ReportRow> rows;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    auto f = split_list(line);
    if (f.size() != 8) throw IoError("bad report row: " + line);
    ReportRow r;
    r.experiment = f[0];
    r.domain = f[1];
    r.workflow = f[2];
    r.pretrain_cities = std::stoll(f[3]);
    r.steps = std::stoll(f[4]);
    r.test_cities = std::stoll(f[5]);
    r.unseen_cities = std::stoll(f[6]);
    r.top1 = std::stod(f[7]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_gap_csv(const std::filesystem::path& path, const std::vector<GapRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open gap csv: " + path.string());
  os << "method,satellite,map,difference\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f\n", r.method.c_str(), r.satellite, r.map,
                  r.difference());
    os << buf;
  }
}

std::string render_markdown(const ExperimentReport& report) {
  std::ostringstream os;
  os << "| Row | Experiment | Imagery | Workflow | Pretrain cities | Steps | Test cities | "
        "Accuracy |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  char buf[256];
  int row = 1;
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "| %d | %s | %s | %s | %lld | %lld | %lld | %.1f%% |\n", row++,
                  r.experiment.c_str(), r.domain.c_str(), r.workflow.c_str(),
                  static_cast<long long>(r.pretrain_cities), static_cast<long long>(r.steps),
                  static_cast<long long>(r.test_cities), 100.0 * r.top1);
    os << buf;
  }
  if (!report.gap.empty()) {
    os << "\n| Method | Satellite | Map | Difference (Satellite - Map) |\n";
    os << "|---|---|---|---|\n";
    for (const auto& g : report.gap) {
      std::snprintf(buf, sizeof(buf), "| %s | %.1f%% | %.1f%% | %.1f%% |\n", g.method.c_str(),
                    100.0 * g.satellite, 100.0 * g.map, 100.0 * g.difference());
      os << buf;
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// experiment plumbing

namespace {

std::vector<City> roster(const ExperimentConfig& cfg) {
  if (!cfg.cities_csv.empty()) {
    auto cities = load_cities_csv(cfg.cities_csv);
    if (static_cast<int>(cities.size()) < cfg.cities)
      throw ConfigError("city CSV has fewer cities than requested");
    cities.resize(static_cast<size_t>(cfg.cities));
    return cities;
  }
  return make_synthetic_cities(cfg.cities, cfg.seed);
}

TileLoadOptions make_load(const ExperimentConfig& cfg) {
  TileLoadOptions load;
  if (!cfg.cache_dir.empty()) {
    load.mode = TileMode::cache_or_synthetic;
    load.cache_dir = cfg.cache_dir;
  }
  return load;
}

std::vector<std::string> sorted_names(const std::vector<City>& cities) {
  std::vector<std::string> names;
  names.reserve(cities.size());
  for (const auto& c : cities) names.push_back(c.name);
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<std::string> pick_subset(std::vector<std::string> names, int count, uint64_t seed) {
  Rng rng(mix_seed(seed, 0x73756273));
  for (int64_t i = static_cast<int64_t>(names.size()) - 1; i > 0; --i)
    std::swap(names[static_cast<size_t>(i)], names[static_cast<size_t>(rng.uniform_int(0, i))]);
  names.resize(static_cast<size_t>(count));
  std::sort(names.begin(), names.end());
  return names;
}

EncoderConfig encoder_config_for(const ExperimentConfig& cfg, Workflow w) {
  EncoderConfig enc;
  enc.input_size = cfg.view_px;
  enc.embedding_dim = cfg.embedding_dim;
  if (w == Workflow::dino) {
    enc.architecture = Architecture::tiny_transformer;
    enc.tf_patch = cfg.view_px >= 32 ? 8 : 4;
  }
  return enc;
}

struct ProbeOutcome {
  ProbeResult result;
  LinearHead head;
};

ProbeOutcome probe_on(Encoder& encoder, const DatasetManifest& manifest, Domain domain,
                      const std::vector<std::string>& cities, const ExperimentConfig& cfg,
                      const TileLoadOptions& load, uint64_t seed) {
  FeatureMode mode = encoder.config().architecture == Architecture::tiny_transformer
                         ? FeatureMode::concat_last4
                         : FeatureMode::final_embedding;
  FrozenRepresentation rep(encoder, mode);

  auto train = load_split(manifest, domain, Split::train, cities, cfg.view_px, load);
  auto test = load_split(manifest, domain, Split::test, cities, cfg.view_px, load);

  ProbeSchedule sched;
  sched.epochs = cfg.probe_epochs;
  sched.base_lr = cfg.probe_lr;
  sched.batch_size = cfg.probe_batch;
  sched.seed = mix_seed(seed, 0x70726F62);

  uint64_t before = rep.checksum();
  LinearHead head =
      train_probe(rep, train.images, train.labels, static_cast<int64_t>(cities.size()), sched);
  ProbeOutcome out{evaluate_probe(head, rep, test.images, test.labels), std::move(head)};
  out.result.checksum_before = before;
  out.result.checksum_after = rep.checksum();
  out.result.config_snapshot = sched.to_json();
  return out;
}

std::filesystem::path leaf_dir(const ExperimentConfig& cfg, const std::string& workflow,
                               Domain domain) {
  return cfg.out_dir / to_string(cfg.experiment) / workflow / to_string(domain);
}

void write_leaf(const ExperimentConfig& cfg, const std::string& workflow, Domain domain,
                const std::vector<ReportRow>& rows, const std::vector<TrainLogRow>& loss,
                const ProbeResult& probe) {
  auto dir = leaf_dir(cfg, workflow, domain);
  std::filesystem::create_directories(dir);
  write_report_csv(dir / "report.csv", rows);
  if (!loss.empty()) write_loss_csv(dir / "loss.csv", loss);
  probe.save_json(dir / "probe.json");
  probe.save_per_class_csv(dir / "per_class.csv");
}

}  // namespace

SupervisedResult train_supervised(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                                  Domain domain, const std::vector<std::string>& cities,
                                  const TileLoadOptions& load) {
  uint64_t seed = mix_seed(cfg.seed, fnv1a64("supervised/" + to_string(domain)));
  EncoderConfig enc_cfg = encoder_config_for(cfg, Workflow::supervised);
  auto encoder = make_encoder(enc_cfg, seed);

  std::vector<std::string> classes = cities;
  std::sort(classes.begin(), classes.end());
  int64_t n_classes = static_cast<int64_t>(classes.size());

  Rng init_rng(mix_seed(seed, 0x73757048));
  Parameter head_w(kaiming_uniform({n_classes, enc_cfg.embedding_dim}, enc_cfg.embedding_dim,
                                   init_rng),
                   "sup.head.w");
  Parameter head_b(Tensor::zeros({n_classes}), "sup.head.b");

  auto params = encoder->parameters();
  params.push_back(&head_w);
  params.push_back(&head_b);
  SgdOptimizer opt(params, SGDConfig{cfg.base_lr, 0.9, 1e-4, cfg.batch_size});

  BatchSampler sampler(manifest, domain, Split::train, classes, cfg.batch_size, cfg.tile_px, load,
                       mix_seed(seed, 0x64617461));

  for (int64_t step = 0; step < cfg.pretrain_steps; ++step) {
    auto [images, labels] = sampler.draw_labeled(step);
    // Light train-time augmentation: random crop + horizontal flip.
    Rng arng(mix_seed(seed, 0x61756700ull + static_cast<uint64_t>(step)));
    std::vector<Tensor> views;
    views.reserve(images.size());
    for (auto& im : images) {
      Tensor v = random_resized_crop(im, 0.5, 1.0, cfg.view_px, arng);
      if (arng.uniform() < 0.5) v = horizontal_flip(v);
      views.push_back(std::move(v));
    }
    Tape t;
    Var x = t.leaf(stack_images(views), false);
    Var emb = encoder->forward(t, x);
    Var logits = t.add_bias(t.matmul_nt(emb, t.param(head_w)), t.param(head_b));
    std::vector<int64_t> labels64(labels.begin(), labels.end());
    Var loss = t.softmax_xent(logits, std::move(labels64));
    opt.zero_grad();
    t.backward(loss);
    t.sync_param_grads();
    clip_global_norm(params, 5.0);
    opt.step(cosine_lr(step, cfg.pretrain_steps, cfg.base_lr));
  }

  auto test = load_split(manifest, domain, Split::test, classes, cfg.view_px, load);
  FrozenRepresentation rep(*encoder, FeatureMode::final_embedding);
  Tensor feats = rep.extract(test.images);
  LinearHead head;
  head.weight = head_w.value;
  head.bias = head_b.value;
  head.feature_scale = 1.0;
  ProbeResult res = evaluate(head, feats, test.labels);

  SupervisedResult out;
  out.encoder = std::move(encoder);
  out.top1 = res.top1;
  return out;
}

namespace {

struct SslOutcome {
  std::unique_ptr<Encoder> encoder;  // owns the trained query/student encoder
  std::vector<TrainLogRow> loss;
  nlohmann::json served;  // tiles served per city during pretraining
  int64_t holdout_served = 0;
  std::filesystem::path checkpoint;
};

SslOutcome pretrain_ssl(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                        Domain domain, Workflow workflow,
                        const std::vector<std::string>& pretrain_set,
                        const std::vector<std::string>& holdout_set,
                        const TileLoadOptions& load) {
  uint64_t wf_seed = mix_seed(cfg.seed, fnv1a64(to_string(workflow) + "/" + to_string(domain)));
  EncoderConfig enc_cfg = encoder_config_for(cfg, workflow);

  BatchSampler sampler(manifest, domain, Split::train, pretrain_set,
                       workflow == Workflow::dino ? cfg.dino_batch : cfg.batch_size, cfg.tile_px,
                       load, mix_seed(wf_seed, 0x64617461));

  SslOutcome out;
  auto dir = leaf_dir(cfg, to_string(workflow), domain);
  std::filesystem::create_directories(dir);
  out.checkpoint = dir / "checkpoint.bin";

  if (workflow == Workflow::dino) {
    DinoConfig dc;
    dc.steps = cfg.dino_steps;
    dc.batch_size = cfg.dino_batch;
    dc.pseudo_classes = cfg.dino_pseudo_classes;
    dc.n_local = cfg.dino_n_local;
    dc.global_px = cfg.view_px;
    dc.local_px = cfg.dino_local_px;
    dc.seed = wf_seed;
    DinoTrainer trainer(dc, enc_cfg);
    out.loss = trainer.run([&sampler](int64_t ordinal) { return sampler.draw(ordinal); });
    trainer.save_checkpoint(out.checkpoint, dc.steps);
    // Move the student out by rebuilding and copying state.
    auto encoder = make_encoder(enc_cfg, wf_seed);
    encoder->copy_state_from(trainer.student_encoder());
    out.encoder = std::move(encoder);
  } else {
    PretrainConfig pc =
        workflow == Workflow::v1 ? PretrainConfig::v1_defaults() : PretrainConfig::v2_defaults();
    pc.steps = cfg.pretrain_steps;
    pc.batch_size = cfg.batch_size;
    pc.base_lr = cfg.base_lr;
    pc.queue_size = cfg.queue_size;
    pc.view_px = cfg.view_px;
    pc.seed = wf_seed;
    ContrastiveTrainer trainer(pc, enc_cfg);
    out.loss = trainer.run([&sampler](int64_t ordinal) { return sampler.draw(ordinal); });
    trainer.save_checkpoint(out.checkpoint, pc.steps);
    auto encoder = make_encoder(enc_cfg, wf_seed);
    encoder->copy_state_from(trainer.query_encoder());
    out.encoder = std::move(encoder);
  }

  nlohmann::json served = nlohmann::json::object();
  for (const auto& [city, count] : sampler.served_counts()) served[city] = count;
  out.served = served;
  for (const auto& h : holdout_set)
    if (sampler.served_counts().count(h))
      out.holdout_served += sampler.served_counts().at(h);
  return out;
}

}  // namespace

ExperimentReport run_generalizability(const ExperimentConfig& cfg) {
  cfg.validate();
  auto cities = roster(cfg);
  ManifestOptions mopt;
  mopt.size_px = cfg.tile_px;
  auto manifest = build_manifest(cities, cfg.samples_per_city, cfg.split_ratio, cfg.seed, mopt);
  TileLoadOptions load = make_load(cfg);

  auto all_names = sorted_names(manifest.cities);
  auto subset = pick_subset(all_names, cfg.pretrain_cities, cfg.seed);
  std::set<std::string> subset_set(subset.begin(), subset.end());
  std::vector<std::string> holdout;
  for (const auto& n : all_names)
    if (!subset_set.count(n)) holdout.push_back(n);

  ExperimentReport report;
  report.diagnostics = nlohmann::json::object();

  for (Workflow w : cfg.workflows) {
    if (w == Workflow::supervised)
      throw ConfigError("generalizability compares self-supervised workflows");
    for (Domain d : cfg.domains) {
      auto ssl = pretrain_ssl(cfg, manifest, d, w, subset, holdout, load);

      auto seen = probe_on(*ssl.encoder, manifest, d, subset, cfg,
                           load, mix_seed(cfg.seed, fnv1a64("seen")));
      auto all = probe_on(*ssl.encoder, manifest, d, all_names, cfg,
                          load, mix_seed(cfg.seed, fnv1a64("all")));

      std::vector<ReportRow> rows;
      rows.push_back({to_string(cfg.experiment), to_string(d), to_string(w),
                      static_cast<int64_t>(subset.size()), cfg.pretrain_steps,
                      static_cast<int64_t>(subset.size()), 0, seen.result.top1});
      rows.push_back({to_string(cfg.experiment), to_string(d), to_string(w),
                      static_cast<int64_t>(subset.size()), cfg.pretrain_steps,
                      static_cast<int64_t>(all_names.size()),
                      static_cast<int64_t>(all_names.size() - subset.size()), all.result.top1});
      write_leaf(cfg, to_string(w), d, rows, ssl.loss, all.result);
      seen.result.save_json(leaf_dir(cfg, to_string(w), d) / "probe_seen.json");

      std::string key = to_string(w) + "/" + to_string(d);
      report.diagnostics[key] = {{"served", ssl.served},
                                 {"holdout_served", ssl.holdout_served},
                                 {"probe_checksum_before", all.result.checksum_before},
                                 {"probe_checksum_after", all.result.checksum_after}};
      for (auto& r : rows) report.rows.push_back(r);
    }
  }

  if (cfg.include_random_baseline) {
    for (Domain d : cfg.domains) {
      EncoderConfig enc_cfg = encoder_config_for(cfg, Workflow::v2);
      auto rand_enc = make_encoder(enc_cfg, mix_seed(cfg.seed, 0x72616E64));
      auto res = probe_on(*rand_enc, manifest, d, all_names, cfg, load,
                          mix_seed(cfg.seed, fnv1a64("random")));
      ReportRow row{to_string(cfg.experiment), to_string(d), "random", 0, 0,
                    static_cast<int64_t>(all_names.size()),
                    static_cast<int64_t>(all_names.size()), res.result.top1};
      write_leaf(cfg, "random", d, {row}, {}, res.result);
      report.rows.push_back(row);
      report.diagnostics["random/" + to_string(d)] = {
          {"probe_checksum_before", res.result.checksum_before},
          {"probe_checksum_after", res.result.checksum_after}};
    }
  }

  auto exp_dir = cfg.out_dir / to_string(cfg.experiment);
  write_report_csv(exp_dir / "report.csv", report.rows);
  std::ofstream md(exp_dir / "report.md", std::ios::trunc);
  md << render_markdown(report);
  std::ofstream diag(exp_dir / "diagnostics.json", std::ios::trunc);
  diag << report.diagnostics.dump(2) << "\n";
  return report;
}

ExperimentReport run_abstraction(const ExperimentConfig& cfg) {
  cfg.validate();
  auto cities = roster(cfg);
  ManifestOptions mopt;
  mopt.size_px = cfg.tile_px;
  auto manifest = build_manifest(cities, cfg.samples_per_city, cfg.split_ratio, cfg.seed, mopt);
  TileLoadOptions load = make_load(cfg);
  auto all_names = sorted_names(manifest.cities);

  ExperimentReport report;
  report.diagnostics = nlohmann::json::object();
  for (Workflow w : cfg.workflows) {
    if (w == Workflow::supervised)
      throw ConfigError("abstraction compares self-supervised workflows");
    Domain d = Domain::map;
    auto ssl = pretrain_ssl(cfg, manifest, d, w, all_names, {}, load);
    auto res = probe_on(*ssl.encoder, manifest, d, all_names, cfg, load,
                        mix_seed(cfg.seed, fnv1a64("abstraction")));
    int64_t steps = w == Workflow::dino ? cfg.dino_steps : cfg.pretrain_steps;
    ReportRow row{to_string(cfg.experiment), to_string(d), to_string(w),
                  static_cast<int64_t>(all_names.size()), steps,
                  static_cast<int64_t>(all_names.size()), 0, res.result.top1};
    write_leaf(cfg, to_string(w), d, {row}, ssl.loss, res.result);
    report.rows.push_back(row);
    report.diagnostics[to_string(w) + "/map"] = {
        {"served", ssl.served},
        {"probe_checksum_before", res.result.checksum_before},
        {"probe_checksum_after", res.result.checksum_after}};
  }

  auto exp_dir = cfg.out_dir / to_string(cfg.experiment);
  write_report_csv(exp_dir / "report.csv", report.rows);
  std::ofstream md(exp_dir / "report.md", std::ios::trunc);
  md << render_markdown(report);
  std::ofstream diag(exp_dir / "diagnostics.json", std::ios::trunc);
  diag << report.diagnostics.dump(2) << "\n";
  return report;
}

ExperimentReport run_domain_gap(const ExperimentConfig& cfg) {
  cfg.validate();
  auto cities = roster(cfg);
  ManifestOptions mopt;
  mopt.size_px = cfg.tile_px;
  auto manifest = build_manifest(cities, cfg.samples_per_city, cfg.split_ratio, cfg.seed, mopt);
  TileLoadOptions load = make_load(cfg);
  auto all_names = sorted_names(manifest.cities);

  Workflow ssl_workflow = cfg.workflows[0];
  if (ssl_workflow == Workflow::supervised)
    throw ConfigError("domain_gap needs a self-supervised workflow to compare against");

  ExperimentReport report;
  report.diagnostics = nlohmann::json::object();
  std::vector<ReportRow> gap_inputs;
  for (Domain d : {Domain::satellite, Domain::map}) {
    auto sup = train_supervised(cfg, manifest, d, all_names, load);
    ReportRow sup_row{to_string(cfg.experiment), to_string(d), "supervised",
                      static_cast<int64_t>(all_names.size()), cfg.pretrain_steps,
                      static_cast<int64_t>(all_names.size()), 0, sup.top1};
    report.rows.push_back(sup_row);
    gap_inputs.push_back(sup_row);
    auto sup_dir = leaf_dir(cfg, "supervised", d);
    std::filesystem::create_directories(sup_dir);
    write_report_csv(sup_dir / "report.csv", {sup_row});

    auto ssl = pretrain_ssl(cfg, manifest, d, ssl_workflow, all_names, {}, load);
    auto res = probe_on(*ssl.encoder, manifest, d, all_names, cfg, load,
                        mix_seed(cfg.seed, fnv1a64("gap/" + to_string(d))));
    ReportRow ssl_row{to_string(cfg.experiment), to_string(d), "self-supervised",
                      static_cast<int64_t>(all_names.size()), cfg.pretrain_steps,
                      static_cast<int64_t>(all_names.size()), 0, res.result.top1};
    report.rows.push_back(ssl_row);
    gap_inputs.push_back(ssl_row);
    write_leaf(cfg, "self-supervised", d, {ssl_row}, ssl.loss, res.result);
  }
  report.gap = domain_gap_table(gap_inputs);

  auto exp_dir = cfg.out_dir / to_string(cfg.experiment);
  write_report_csv(exp_dir / "report.csv", report.rows);
  write_gap_csv(exp_dir / "gap.csv", report.gap);
  std::ofstream md(exp_dir / "report.md", std::ios::trunc);
  md << render_markdown(report);
  return report;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.experiment) {
    case ExperimentKind::generalizability: return run_generalizability(cfg);
    case ExperimentKind::abstraction: return run_abstraction(cfg);
    case ExperimentKind::domain_gap: return run_domain_gap(cfg);
  }
  throw ConfigError("unknown experiment kind");
}

std::string aggregate_results(const std::filesystem::path& results_dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(results_dir)) throw IoError("results directory does not exist: " + results_dir.string());

  ExperimentReport combined;
  std::vector<fs::path> report_files, gap_files;
  for (const auto& entry : fs::recursive_directory_iterator(results_dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename() == "report.csv") report_files.push_back(entry.path());
    if (entry.path().filename() == "gap.csv") gap_files.push_back(entry.path());
  }
  std::sort(report_files.begin(), report_files.end());
  std::sort(gap_files.begin(), gap_files.end());
  if (report_files.empty()) throw IoError("no report.csv files under " + results_dir.string());

  std::set<std::string> seen;
  for (const auto& f : report_files)
    for (auto& row : read_report_csv(f)) {
      char key[512];
      std::snprintf(key, sizeof(key), "%s|%s|%s|%lld|%lld|%lld", row.experiment.c_str(),
                    row.domain.c_str(), row.workflow.c_str(),
                    static_cast<long long>(row.pretrain_cities),
                    static_cast<long long>(row.steps), static_cast<long long>(row.test_cities));
      if (seen.insert(key).second) combined.rows.push_back(std::move(row));
    }
  for (const auto& f : gap_files) {
    std::ifstream is(f);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      auto fields = split_list(line);
      if (fields.size() != 4) continue;
      combined.gap.push_back({fields[0], std::stod(fields[1]), std::stod(fields[2])});
    }
  }

  std::ostringstream os;
  os << "# Experiment results\n\n" << render_markdown(combined);
  os << "\n# Full-scale reference results\n\n";
  ExperimentReport ref;
  ref.rows = reference_table_rows();
  ref.gap = reference_gap_rows();
  os << render_markdown(ref);
  os << "\nReference rows report epochs in the steps column and come from the published "
        "full-scale study; they are metadata, not desk-scale measurements.\n";
  return os.str();
}

}  // namespace geossl
