// daclab: config-driven distributed continual learning experiments.
//
//   daclab run <config>                       run the configured scheme per seed
//   daclab ablate-sources <config> --sources  compare consolidation data sources
//   daclab report <run_dir>                   linear-probe + CKA reports
//   daclab gen-assets <dir>                   write the default poster image and a sample config
//
// Exit codes: 0 success, 1 runtime failure, 2 config/usage error.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "daclab/config.hpp"
#include "daclab/serialize.hpp"

namespace fs = std::filesystem;
using namespace daclab;

namespace {

void write_text(const fs::path& p, const std::string& text) {
  write_file_bytes(p.string(), std::vector<std::uint8_t>(text.begin(), text.end()));
}

// DACLAB_SEED overrides the config's seed list with a single value.
void apply_seed_overrides(ExperimentConfig& cfg, std::uint64_t cli_seed, bool cli_seed_set) {
  if (cli_seed_set) {
    cfg.seeds = {cli_seed};
    return;
  }
  if (const char* env = std::getenv("DACLAB_SEED")) {
    char* end = nullptr;
    std::uint64_t v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      throw ConfigError("DACLAB_SEED", "must be an unsigned integer, got '" + std::string(env) +
                                           "'");
    cfg.seeds = {v};
  }
}

int cmd_run(const std::string& config_path, const std::string& out_override,
            std::uint64_t cli_seed, bool cli_seed_set) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  apply_seed_overrides(cfg, cli_seed, cli_seed_set);
  if (!out_override.empty()) cfg.output_dir = out_override;

  for (std::uint64_t seed : cfg.seeds) {
    auto result = run_one_seed(cfg, seed, cfg.output_dir);
    std::cout << "seed " << seed << ": final average accuracy "
              << format_fixed(result.final_average_accuracy, 4) << " ("
              << format_fixed(result.wall_clock_seconds, 1) << "s)\n";
  }
  std::cout << "artifacts written to " << cfg.output_dir << "\n";
  return 0;
}

int cmd_ablate_sources(const std::string& config_path, const std::vector<std::string>& sources,
                       const std::string& out_override, std::uint64_t cli_seed,
                       bool cli_seed_set) {
  ExperimentConfig base = load_experiment_config(config_path);
  apply_seed_overrides(base, cli_seed, cli_seed_set);
  if (!out_override.empty()) base.output_dir = out_override;
  if (sources.empty()) throw ConfigError("--sources", "at least one source required");

  std::string csv = "source,seed,avg_accuracy\n";
  std::string summary;
  for (const std::string& spec : sources) {
    std::string kind = spec, path;
    auto colon = spec.find(':');
    if (colon != std::string::npos) {
      kind = spec.substr(0, colon);
      path = spec.substr(colon + 1);
    }
    ExperimentConfig cfg = base;
    cfg.ood.kind = kind;
    cfg.ood.path = path.empty() ? base.ood.path : path;
    // re-validate the source against the experiment config rules
    cfg = parse_experiment_config(experiment_config_json(cfg));
    apply_seed_overrides(cfg, cli_seed, cli_seed_set);

    std::vector<double> cells;
    for (std::uint64_t seed : cfg.seeds) {
      auto result =
          run_one_seed(cfg, seed, (fs::path(base.output_dir) / ("source_" + kind)).string());
      cells.push_back(result.final_average_accuracy);
      csv += kind + "," + std::to_string(seed) + "," +
             format_fixed(result.final_average_accuracy) + "\n";
      std::cout << kind << " seed " << seed << ": "
                << format_fixed(result.final_average_accuracy, 4) << "\n";
    }
    double mean = 0;
    for (double v : cells) mean += v;
    mean /= double(cells.size());
    double var = 0;
    for (double v : cells) var += (v - mean) * (v - mean);
    double std_dev = cells.size() > 1 ? std::sqrt(var / double(cells.size() - 1)) : 0.0;
    summary += kind + ",mean±std," + format_fixed(mean) + "±" + format_fixed(std_dev) + "\n";
  }
  csv += summary;
  fs::create_directories(base.output_dir);
  write_text(fs::path(base.output_dir) / "source_ablation.csv", csv);
  std::cout << "ablation table written to "
            << (fs::path(base.output_dir) / "source_ablation.csv").string() << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir, const std::string& out_override) {
  fs::path dir(run_dir);
  if (!fs::exists(dir / "config.json"))
    throw ConfigError("<run_dir>", "missing config.json in " + run_dir);
  if (!fs::exists(dir / "checkpoints"))
    throw ConfigError("<run_dir>", "missing checkpoints in " + run_dir);

  ExperimentConfig cfg = load_experiment_config((dir / "config.json").string());
  Dataset dataset = build_dataset(cfg);
  auto stream = build_stream(cfg, dataset);

  std::vector<Model<float>> sc_models;
  for (int t = 1;; ++t) {
    fs::path p = dir / "checkpoints" / ("sc_task_" + std::to_string(t) + ".model");
    if (!fs::exists(p)) break;
    sc_models.push_back(load_model(p.string()));
  }
  if (sc_models.empty())
    throw ConfigError("<run_dir>", "no sc_task_*.model checkpoints in " + run_dir);

  fs::path out = out_override.empty() ? dir : fs::path(out_override);
  fs::create_directories(out);

  // linear probe per SC model over the whole stream, penultimate features
  std::string tap = penultimate_tap(sc_models[0].arch);
  std::string probe_csv = "task_id,probe_accuracy\n";
  for (std::size_t i = 0; i < sc_models.size(); ++i) {
    double acc = linear_probe(sc_models[i], tap, stream, ProbeConfig{}, 1);
    probe_csv += std::to_string(sc_models[i].heads[0].task_id) + "," + format_fixed(acc) + "\n";
    std::cout << "probe task " << sc_models[i].heads[0].task_id << ": " << format_fixed(acc, 4)
              << "\n";
  }
  write_text(out / "probe_accuracies.csv", probe_csv);

  // CKA between the first expert and every expert, on the last task's test set
  if (sc_models.size() >= 2) {
    auto taps = backbone_tap_names(sc_models[0].arch);
    auto records = cka_stream_report(sc_models, 0, stream.back(), taps);
    write_text(out / "cka_report.csv", cka_report_csv(records));
    std::cout << "cka report rows: " << records.size() << "\n";
  }
  std::cout << "reports written to " << out.string() << "\n";
  return 0;
}

int cmd_gen_assets(const std::string& dir) {
  fs::create_directories(dir);
  Image poster = make_poster_image(12, 64);
  write_ppm(poster, (fs::path(dir) / "poster.ppm").string());
  write_png(poster, (fs::path(dir) / "poster.png").string());

  ExperimentConfig cfg;
  cfg.ood.path = (fs::path(dir) / "poster.ppm").string();
  cfg.output_dir = (fs::path(dir) / "runs").string();
  cfg.adapt.iterations = 1500;
  cfg.adapt.batch_size = 32;
  cfg.adapt.optimizer = {OptimizerKind::sgd, 0.1, 0.9, 0.999, 1e-8};
  cfg.consolidation.iterations = 2000;
  cfg.consolidation.batch_size = 64;
  cfg.consolidation.optimizer.learning_rate = 1e-3;
  cfg.arch.hidden = {48, 24};
  cfg.stream.samples_per_class = 80;
  cfg.seeds = {1, 2, 3};
  write_text(fs::path(dir) / "example_config.json", experiment_config_json(cfg));
  std::cout << "assets written to " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"daclab: distributed continual learning laboratory"};
  app.require_subcommand(1);

  std::string config_path, run_dir, out_dir, assets_dir;
  std::vector<std::string> sources;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "run the configured experiment per seed");
  run->add_option("config", config_path, "experiment config (JSON)")->required();
  auto* run_seed = run->add_option("--seed", seed, "override the seed list with one seed");
  run->add_option("--out", out_dir, "override the output directory");

  auto* ablate = app.add_subcommand("ablate-sources", "compare consolidation data sources");
  ablate->add_option("config", config_path, "experiment config (JSON)")->required();
  ablate->add_option("--sources", sources, "comma separated kinds, e.g. single_image,noise")
      ->required()
      ->delimiter(',');
  auto* ablate_seed = ablate->add_option("--seed", seed, "override the seed list");
  ablate->add_option("--out", out_dir, "override the output directory");

  auto* report = app.add_subcommand("report", "probe + CKA reports for a finished run");
  report->add_option("run_dir", run_dir, "seed run directory (contains checkpoints/)")
      ->required();
  report->add_option("--out", out_dir, "directory for the report files");

  auto* gen = app.add_subcommand("gen-assets", "write the default poster image and sample config");
  gen->add_option("dir", assets_dir, "asset output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, seed, run_seed->count() > 0);
    if (ablate->parsed())
      return cmd_ablate_sources(config_path, sources, out_dir, seed, ablate_seed->count() > 0);
    if (report->parsed()) return cmd_report(run_dir, out_dir);
    if (gen->parsed()) return cmd_gen_assets(assets_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
