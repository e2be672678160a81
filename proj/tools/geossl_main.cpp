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

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "geossl/bench.hpp"
#include "geossl/error.hpp"
#include "geossl/fetch.hpp"

namespace {

using namespace geossl;

int cmd_manifest(const std::string& cities_csv, int synthetic, int64_t samples, double ratio,
                 uint64_t seed, int zoom, int size_px, double radius_k,
                 const std::string& water_file, const std::vector<std::string>& exclude,
                 const std::string& out) {
  std::vector<City> cities;
  if (!cities_csv.empty())
    cities = load_cities_csv(cities_csv);
  else if (synthetic > 0)
    cities = make_synthetic_cities(synthetic, seed);
  else
    throw ConfigError("provide --cities <csv> or --synthetic <count>");

  WaterMask mask;
  ManifestOptions opts;
  opts.zoom = zoom;
  opts.size_px = size_px;
  opts.radius_k = radius_k;
  opts.blocklist = exclude;
  if (!water_file.empty()) {
    mask = load_water_mask(water_file);
    opts.water = &mask;
  }
  auto manifest = build_manifest(cities, samples, ratio, seed, opts);
  save_manifest(manifest, out);
  std::cout << "manifest: " << manifest.cities.size() << " cities, " << manifest.records.size()
            << " records -> " << out << "\n";
  return 0;
}

int cmd_pretrain(const std::string& manifest_path, const std::string& workflow_s,
                 const std::string& domain_s, int64_t steps, int batch, double lr,
                 int64_t queue_size, int view_px, int embedding_dim, uint64_t seed,
                 const std::string& out_dir, const std::string& cache_dir) {
  auto manifest = load_manifest(manifest_path);
  Workflow workflow = workflow_from_string(workflow_s);
  Domain domain = domain_from_string(domain_s);

  TileLoadOptions load;
  if (!cache_dir.empty()) {
    load.mode = TileMode::cache_or_synthetic;
    load.cache_dir = cache_dir;
  }

  std::vector<std::string> names;
  for (const auto& c : manifest.cities) names.push_back(c.name);

  std::filesystem::path out(out_dir);
  std::filesystem::create_directories(out);

  if (workflow == Workflow::dino) {
    EncoderConfig enc;
    enc.input_size = view_px;
    enc.embedding_dim = embedding_dim;
    enc.architecture = Architecture::tiny_transformer;
    enc.tf_patch = view_px >= 32 ? 8 : 4;
    DinoConfig dc;
    dc.steps = steps;
    dc.batch_size = std::min(batch, 16);
    dc.global_px = view_px;
    dc.seed = seed;
    BatchSampler sampler(manifest, domain, Split::train, names, dc.batch_size, manifest.size_px,
                         load, mix_seed(seed, 0x64617461));
    DinoTrainer trainer(dc, enc);
    auto log = trainer.run([&sampler](int64_t ordinal) { return sampler.draw(ordinal); });
    write_loss_csv(out / "loss.csv", log);
    trainer.save_checkpoint(out / "checkpoint.bin", dc.steps);
  } else if (workflow == Workflow::v1 || workflow == Workflow::v2) {
    EncoderConfig enc;
    enc.input_size = view_px;
    enc.embedding_dim = embedding_dim;
    PretrainConfig pc =
        workflow == Workflow::v1 ? PretrainConfig::v1_defaults() : PretrainConfig::v2_defaults();
    pc.steps = steps;
    pc.batch_size = batch;
    pc.base_lr = lr;
    pc.queue_size = queue_size;
    pc.view_px = view_px;
    pc.seed = seed;
    BatchSampler sampler(manifest, domain, Split::train, names, batch, manifest.size_px, load,
                         mix_seed(seed, 0x64617461));
    ContrastiveTrainer trainer(pc, enc);
    auto log = trainer.run([&sampler](int64_t ordinal) { return sampler.draw(ordinal); });
    write_loss_csv(out / "loss.csv", log);
    trainer.save_checkpoint(out / "checkpoint.bin", pc.steps);
  } else {
    throw ConfigError("pretrain supports v1, v2, dino");
  }
  std::cout << "pretrain: " << steps << " steps -> " << (out / "checkpoint.bin").string() << "\n";
  return 0;
}

// Checkpoints store encoder parameters first, then any head parameters.
// Rebuild throwaway parameters for the head tail so the blob count matches.
std::unique_ptr<Encoder> encoder_from_checkpoint(const std::filesystem::path& path,
                                                 uint64_t seed) {
  auto info = peek_checkpoint(path);
  EncoderConfig enc = EncoderConfig::from_json(info.config.at("encoder"));
  auto encoder = make_encoder(enc, seed);

  std::vector<Parameter*> all = encoder->parameters();
  size_t encoder_count = all.size();
  std::vector<std::unique_ptr<Parameter>> scratch;
  const nlohmann::json& plist = info.params;
  for (size_t i = encoder_count; i < plist.size(); ++i) {
    auto shape = plist[i].at("shape").get<std::vector<int64_t>>();
    scratch.push_back(std::make_unique<Parameter>(Tensor::zeros(shape),
                                                  plist[i].at("name").get<std::string>()));
    all.push_back(scratch.back().get());
  }
  load_checkpoint(path, all);
  return encoder;
}

int cmd_probe(const std::string& manifest_path, const std::string& checkpoint,
              const std::string& domain_s, const std::string& mode_s, int probe_epochs,
              double probe_lr, uint64_t seed, const std::string& out_dir,
              const std::string& cache_dir) {
  auto manifest = load_manifest(manifest_path);
  Domain domain = domain_from_string(domain_s);
  auto encoder = encoder_from_checkpoint(checkpoint, seed);

  FeatureMode mode;
  if (mode_s == "final")
    mode = FeatureMode::final_embedding;
  else if (mode_s == "concat4")
    mode = FeatureMode::concat_last4;
  else
    throw ConfigError("mode must be final or concat4");

  TileLoadOptions load;
  if (!cache_dir.empty()) {
    load.mode = TileMode::cache_or_synthetic;
    load.cache_dir = cache_dir;
  }

  std::vector<std::string> names;
  for (const auto& c : manifest.cities) names.push_back(c.name);
  std::sort(names.begin(), names.end());

  int view_px = encoder->config().input_size;
  auto train = load_split(manifest, domain, Split::train, names, view_px, load);
  auto test = load_split(manifest, domain, Split::test, names, view_px, load);

  FrozenRepresentation rep(*encoder, mode);
  ProbeSchedule sched;
  sched.epochs = probe_epochs;
  sched.base_lr = probe_lr;
  sched.seed = seed;

  uint64_t before = rep.checksum();
  LinearHead head = train_probe(rep, train.images, train.labels,
                                static_cast<int64_t>(names.size()), sched);
  ProbeResult res = evaluate_probe(head, rep, test.images, test.labels);
  res.checksum_before = before;
  res.checksum_after = rep.checksum();
  res.config_snapshot = sched.to_json();

  std::filesystem::path out(out_dir);
  res.save_json(out / "probe.json");
  res.save_per_class_csv(out / "per_class.csv");
  std::cout << "probe: top1 " << res.top1 << " over " << res.n_test << " tiles -> "
            << (out / "probe.json").string() << "\n";
  return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& section, uint64_t seed_flag,
                   bool has_seed, const std::string& out_dir) {
  ConfigFile cf = config_path.empty() ? ConfigFile{} : ConfigFile::parse_file(config_path);
  if (has_seed) cf.set(section, "seed", std::to_string(seed_flag));
  if (!out_dir.empty()) cf.set(section, "out_dir", out_dir);
  ExperimentConfig cfg = ExperimentConfig::from_config(cf, section);
  auto report = run_experiment(cfg);
  std::cout << render_markdown(report);
  return 0;
}

int cmd_report(const std::string& results_dir, const std::string& out_file) {
  std::string md = aggregate_results(results_dir);
  if (!out_file.empty()) {
    std::ofstream os(out_file, std::ios::trunc);
    if (!os) throw IoError("cannot open report output: " + out_file);
    os << md;
  }
  std::cout << md;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"offline city-tile self-supervision benchmark"};
  app.require_subcommand(1);

  bool offline = true;
  app.add_flag("--offline,!--online", offline,
               "use the synthetic renderer (default) instead of live fetching");

  // manifest
  auto* manifest = app.add_subcommand("manifest", "build a dataset manifest");
  std::string m_cities, m_water, m_out = "manifest.json";
  int m_synth = 0, m_zoom = 16, m_size = 256;
  int64_t m_samples = 200;
  double m_ratio = 0.8, m_radius_k = 0.05;
  uint64_t m_seed = 1;
  std::vector<std::string> m_exclude;
  manifest->add_option("--cities", m_cities, "city CSV (name,country,latitude,longitude,population)");
  manifest->add_option("--synthetic", m_synth, "generate N synthetic cities instead");
  manifest->add_option("--samples", m_samples, "samples per city");
  manifest->add_option("--ratio", m_ratio, "train fraction");
  manifest->add_option("--seed", m_seed, "sampling seed");
  manifest->add_option("--zoom", m_zoom, "tile zoom level");
  manifest->add_option("--size", m_size, "tile size in pixels");
  manifest->add_option("--radius-k", m_radius_k, "radius power-law constant (m/person^0.85)");
  manifest->add_option("--water", m_water, "water mask polygon file");
  manifest->add_option("--exclude", m_exclude, "city names to blocklist");
  manifest->add_option("--out", m_out, "output manifest path");

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "run self-supervised pretraining");
  std::string p_manifest, p_workflow = "v2", p_domain = "satellite", p_out = "pretrain_out",
              p_cache;
  int64_t p_steps = 200, p_queue = 1024;
  int p_batch = 32, p_view = 32, p_dim = 128;
  double p_lr = 0.06;
  uint64_t p_seed = 1;
  pretrain->add_option("--manifest", p_manifest, "manifest path")->required();
  pretrain->add_option("--workflow", p_workflow, "v1 | v2 | dino");
  pretrain->add_option("--domain", p_domain, "satellite | map");
  pretrain->add_option("--steps", p_steps, "gradient steps");
  pretrain->add_option("--batch", p_batch, "batch size");
  pretrain->add_option("--lr", p_lr, "base learning rate");
  pretrain->add_option("--queue", p_queue, "negative queue size");
  pretrain->add_option("--view", p_view, "augmented view size");
  pretrain->add_option("--dim", p_dim, "embedding dimension");
  pretrain->add_option("--seed", p_seed, "seed");
  pretrain->add_option("--out", p_out, "output directory");
  pretrain->add_option("--cache", p_cache, "tile cache directory");

  // probe
  auto* probe = app.add_subcommand("probe", "train and evaluate a linear probe");
  std::string pr_manifest, pr_ckpt, pr_domain = "satellite", pr_mode = "final",
              pr_out = "probe_out", pr_cache;
  int pr_epochs = 100;
  double pr_lr = 30.0;
  uint64_t pr_seed = 1;
  probe->add_option("--manifest", pr_manifest, "manifest path")->required();
  probe->add_option("--checkpoint", pr_ckpt, "encoder checkpoint")->required();
  probe->add_option("--domain", pr_domain, "satellite | map");
  probe->add_option("--mode", pr_mode, "final | concat4");
  probe->add_option("--epochs", pr_epochs, "probe epochs");
  probe->add_option("--lr", pr_lr, "probe learning rate");
  probe->add_option("--seed", pr_seed, "seed");
  probe->add_option("--out", pr_out, "output directory");
  probe->add_option("--cache", pr_cache, "tile cache directory");

  // experiment
  auto* experiment = app.add_subcommand("experiment", "run a full experiment pipeline");
  std::string e_config, e_section = "", e_out;
  uint64_t e_seed = 0;
  bool e_has_seed = false;
  experiment->add_option("--config", e_config, "experiment config file");
  experiment->add_option("--section", e_section, "config section (experiment name)");
  auto* seed_opt = experiment->add_option("--seed", e_seed, "override seed");
  experiment->add_option("--out", e_out, "override results directory");

  // report
  auto* report = app.add_subcommand("report", "aggregate results into markdown");
  std::string r_results = "results", r_out;
  report->add_option("--results", r_results, "results directory");
  report->add_option("--out", r_out, "write markdown here as well");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (manifest->parsed())
      return cmd_manifest(m_cities, m_synth, m_samples, m_ratio, m_seed, m_zoom, m_size,
                          m_radius_k, m_water, m_exclude, m_out);
    if (pretrain->parsed())
      return cmd_pretrain(p_manifest, p_workflow, p_domain, p_steps, p_batch, p_lr, p_queue,
                          p_view, p_dim, p_seed, p_out, p_cache);
    if (probe->parsed())
      return cmd_probe(pr_manifest, pr_ckpt, pr_domain, pr_mode, pr_epochs, pr_lr, pr_seed,
                       pr_out, pr_cache);
    if (experiment->parsed()) {
      e_has_seed = seed_opt->count() > 0;
      return cmd_experiment(e_config, e_section, e_seed, e_has_seed, e_out);
    }
    if (report->parsed()) return cmd_report(r_results, r_out);
  } catch (const geossl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
