#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "daclab/dcl.hpp"

namespace daclab {

// Config/usage problem tied to a specific field; the CLI maps it to exit 2.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct StreamSpec {
  std::string dataset = "shapes";  // "shapes" | "idx"
  int n_tasks = 5;
  int classes_per_task = 2;
  // shapes
  std::uint64_t data_seed = 7;
  int n_classes = 10;
  int samples_per_class = 80;
  int image_size = 16;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
};

struct OODSpec {
  std::string kind = "single_image";  // single_image | image_folder | noise | real_data
  std::string path;
};

struct ExperimentConfig {
  std::string scheme = "sequential";  // sequential | independent | rehearsal_free_naive
  StreamSpec stream;
  ArchSpec arch;  // input dims and head width are derived from the stream
  AdaptConfig adapt;
  ConsolidationConfig consolidation;
  OODSpec ood;
  AugConfig aug;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "runs/out";
};

// Parse + validate; raises ConfigError naming the offending field. Path
// fields are checked for existence.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// Canonical re-serialization; parse(dump(cfg)) == cfg.
std::string experiment_config_json(const ExperimentConfig& cfg);

Dataset build_dataset(const ExperimentConfig& cfg);
std::vector<Experience> build_stream(const ExperimentConfig& cfg, const Dataset& dataset);
SchemeConfig build_scheme_config(const ExperimentConfig& cfg, const Dataset& dataset);
OODSource make_ood_source(const std::string& kind, const std::string& path);

struct SeedRunResult {
  RunArtifacts artifacts;
  double final_average_accuracy = 0;
  double wall_clock_seconds = 0;
};

// Execute one seed and write accuracy_matrix.csv, metrics.json,
// message_log.json, config.json and checkpoints/ into <out_dir>/seed_<seed>.
SeedRunResult run_one_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                           const std::string& out_dir);

std::string metrics_json(const ExperimentConfig& cfg, std::uint64_t seed,
                         const SeedRunResult& result);

// Procedurally generated structured poster, the default single-image source.
Image make_poster_image(std::uint64_t seed, int size);

}  // namespace daclab
