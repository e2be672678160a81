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

#include <map>
#include <memory>
#include <unordered_map>

#include "geossl/dino.hpp"
#include "geossl/probe.hpp"
#include "geossl/tiles.hpp"

namespace geossl {

/// Line-oriented `key = value` config with optional `[section]` headers.
/// Unsectioned keys are global; section keys shadow them.
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::filesystem::path& path);
  static ConfigFile parse_string(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

  void set(const std::string& section, const std::string& key, const std::string& value);

 private:
  std::map<std::string, std::string> values_;  // "section.key" or ".key"
};

enum class ExperimentKind { generalizability, abstraction, domain_gap };

std::string to_string(ExperimentKind k);
ExperimentKind experiment_from_string(const std::string& s);

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::generalizability;
  std::vector<Domain> domains = {Domain::satellite};
  std::vector<Workflow> workflows = {Workflow::v2};

  int cities = 20;
  int pretrain_cities = 10;  // generalizability subset size
  bool require_holdout = false;
  int64_t samples_per_city = 200;
  double split_ratio = 0.8;
  int tile_px = 64;
  int view_px = 32;

  int64_t pretrain_steps = 2000;
  int batch_size = 32;
  double base_lr = 0.06;
  int64_t queue_size = 1024;
  int probe_epochs = 100;
  double probe_lr = 30.0;
  int probe_batch = 256;

  int embedding_dim = 128;
  bool include_random_baseline = true;

  int64_t dino_steps = 600;
  int dino_batch = 16;
  int64_t dino_pseudo_classes = 256;
  int dino_n_local = 2;
  int dino_local_px = 16;

  uint64_t seed = 1;
  std::filesystem::path out_dir = "results";
  std::filesystem::path cities_csv;  // empty -> synthetic roster
  std::filesystem::path cache_dir;   // empty -> always synthetic render
  bool offline = true;

  static ExperimentConfig from_config(const ConfigFile& cfg, const std::string& section);
  void validate() const;
  nlohmann::json to_json() const;
};

/// Draws image batches from one (domain, split) slice of a manifest,
/// restricted to an allowed city set. Counts everything it serves and
/// refuses to yield a tile from outside the allowed set.
class BatchSampler {
 public:
  BatchSampler(const DatasetManifest& manifest, Domain domain, Split split,
               std::vector<std::string> allowed_cities, int batch_size, int view_source_px,
               const TileLoadOptions& load, uint64_t seed);

  std::vector<Tensor> draw(int64_t ordinal);
  std::pair<std::vector<Tensor>, std::vector<int>> draw_labeled(int64_t ordinal);

  /// Class index of a city within the allowed (sorted) set.
  int label_of(const std::string& city) const;
  const std::vector<std::string>& classes() const { return classes_; }

  const std::unordered_map<std::string, int64_t>& served_counts() const { return served_; }
  int64_t total_served() const { return total_; }

  BatchSource as_source();

 private:
  const DatasetManifest* manifest_;
  Domain domain_;
  std::vector<int64_t> pool_;  // indices into the domain-filtered record list
  std::vector<int> pool_labels_;
  std::vector<std::string> classes_;
  std::unordered_map<std::string, int> class_index_;
  int batch_size_;
  TileLoadOptions load_;
  uint64_t seed_;
  std::unordered_map<std::string, int64_t> served_;
  int64_t total_ = 0;
};

struct LabeledImages {
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::vector<std::string> class_names;
};

/// Deterministic probe view: center crop (fraction 0.875) then resize.
Tensor probe_view(const Tensor& img, int out_px);

/// Loads every tile of (domain, split) for the given cities as probe views
/// sized for the encoder.
LabeledImages load_split(const DatasetManifest& m, Domain domain, Split split,
                         const std::vector<std::string>& cities, int view_px,
                         const TileLoadOptions& load);

struct ReportRow {
  std::string experiment;
  std::string domain;
  std::string workflow;
  int64_t pretrain_cities = 0;
  int64_t steps = 0;
  int64_t test_cities = 0;
  int64_t unseen_cities = 0;
  double top1 = 0.0;
};

struct GapRow {
  std::string method;
  double satellite = 0.0;
  double map = 0.0;
  double difference() const { return satellite - map; }
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  std::vector<GapRow> gap;
  nlohmann::json diagnostics;  // served-tile counts, frozen-contract checksums
};

/// Groups per-(workflow, domain) accuracies into (method, satellite, map)
/// rows; a method missing either domain raises an incomplete-results error.
std::vector<GapRow> domain_gap_table(const std::vector<ReportRow>& rows);

/// Published full-scale reference accuracies, kept as report metadata.
std::vector<GapRow> reference_gap_rows();
std::vector<ReportRow> reference_table_rows();

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows);
std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);
void write_gap_csv(const std::filesystem::path& path, const std::vector<GapRow>& rows);
std::string render_markdown(const ExperimentReport& report);

struct SupervisedResult {
  std::unique_ptr<Encoder> encoder;
  double top1 = 0.0;
};

/// Desk-scale supervised baseline: the same encoder family trained
/// end-to-end with categorical cross-entropy on the train split.
SupervisedResult train_supervised(const ExperimentConfig& cfg, const DatasetManifest& manifest,
                                  Domain domain, const std::vector<std::string>& cities,
                                  const TileLoadOptions& load);

ExperimentReport run_generalizability(const ExperimentConfig& cfg);
ExperimentReport run_abstraction(const ExperimentConfig& cfg);
ExperimentReport run_domain_gap(const ExperimentConfig& cfg);
ExperimentReport run_experiment(const ExperimentConfig& cfg);

/// Aggregates report/gap CSV files under a results directory into one
/// markdown document. Throws when nothing is found.
std::string aggregate_results(const std::filesystem::path& results_dir);

}  // namespace geossl
