#include "daclab/config.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <json.hpp>

#include "daclab/serialize.hpp"
#include "daclab/util.hpp"

namespace daclab {

namespace {

using nlohmann::json;

const json* find(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

template <class T>
T get_or(const json& j, const char* key, const T& fallback, const std::string& field) {
  const json* v = find(j, key);
  if (!v) return fallback;
  try {
    return v->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(field, "has the wrong type");
  }
}

OptimizerConfig parse_optimizer(const json& j, const std::string& field,
                                const OptimizerConfig& defaults) {
  OptimizerConfig cfg = defaults;
  std::string kind = get_or<std::string>(j, "kind", cfg.kind == OptimizerKind::sgd ? "sgd" : "adam",
                                         field + ".kind");
  if (kind == "sgd") {
    cfg.kind = OptimizerKind::sgd;
  } else if (kind == "adam") {
    cfg.kind = OptimizerKind::adam;
  } else {
    throw ConfigError(field + ".kind", "must be 'sgd' or 'adam'");
  }
  cfg.learning_rate = get_or<double>(j, "learning_rate", cfg.learning_rate,
                                     field + ".learning_rate");
  cfg.beta1 = get_or<double>(j, "beta1", cfg.beta1, field + ".beta1");
  cfg.beta2 = get_or<double>(j, "beta2", cfg.beta2, field + ".beta2");
  cfg.epsilon = get_or<double>(j, "epsilon", cfg.epsilon, field + ".epsilon");
  if (cfg.learning_rate <= 0) throw ConfigError(field + ".learning_rate", "must be > 0");
  return cfg;
}

json optimizer_json(const OptimizerConfig& cfg) {
  return json{{"kind", cfg.kind == OptimizerKind::sgd ? "sgd" : "adam"},
              {"learning_rate", cfg.learning_rate},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"epsilon", cfg.epsilon}};
}

void require_file(const std::string& path, const std::string& field) {
  if (!std::filesystem::exists(path)) throw ConfigError(field, "path does not exist: " + path);
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  cfg.scheme = get_or<std::string>(j, "scheme", cfg.scheme, "scheme");
  if (cfg.scheme != "sequential" && cfg.scheme != "independent" &&
      cfg.scheme != "rehearsal_free_naive")
    throw ConfigError("scheme",
                      "must be 'sequential', 'independent' or 'rehearsal_free_naive'");

  if (const json* s = find(j, "stream")) {
    cfg.stream.dataset = get_or<std::string>(*s, "dataset", cfg.stream.dataset, "stream.dataset");
    cfg.stream.n_tasks = get_or<int>(*s, "n_tasks", cfg.stream.n_tasks, "stream.n_tasks");
    cfg.stream.classes_per_task = get_or<int>(*s, "classes_per_task", cfg.stream.classes_per_task,
                                              "stream.classes_per_task");
    cfg.stream.data_seed =
        get_or<std::uint64_t>(*s, "data_seed", cfg.stream.data_seed, "stream.data_seed");
    cfg.stream.n_classes = get_or<int>(*s, "n_classes", cfg.stream.n_classes, "stream.n_classes");
    cfg.stream.samples_per_class = get_or<int>(*s, "samples_per_class",
                                               cfg.stream.samples_per_class,
                                               "stream.samples_per_class");
    cfg.stream.image_size =
        get_or<int>(*s, "image_size", cfg.stream.image_size, "stream.image_size");
    cfg.stream.train_images =
        get_or<std::string>(*s, "train_images", "", "stream.train_images");
    cfg.stream.train_labels =
        get_or<std::string>(*s, "train_labels", "", "stream.train_labels");
    cfg.stream.test_images = get_or<std::string>(*s, "test_images", "", "stream.test_images");
    cfg.stream.test_labels = get_or<std::string>(*s, "test_labels", "", "stream.test_labels");
  }
  if (cfg.stream.dataset != "shapes" && cfg.stream.dataset != "idx")
    throw ConfigError("stream.dataset", "must be 'shapes' or 'idx'");
  if (cfg.stream.n_tasks < 1) throw ConfigError("stream.n_tasks", "must be >= 1");
  if (cfg.stream.classes_per_task < 2)
    throw ConfigError("stream.classes_per_task", "must be >= 2");
  if (cfg.stream.dataset == "shapes") {
    if (cfg.stream.n_classes < cfg.stream.n_tasks * cfg.stream.classes_per_task)
      throw ConfigError("stream.n_classes", "fewer classes than n_tasks * classes_per_task");
  } else {
    require_file(cfg.stream.train_images, "stream.train_images");
    require_file(cfg.stream.train_labels, "stream.train_labels");
    require_file(cfg.stream.test_images, "stream.test_images");
    require_file(cfg.stream.test_labels, "stream.test_labels");
  }

  if (const json* a = find(j, "arch")) {
    std::string kind = get_or<std::string>(*a, "kind", "mlp", "arch.kind");
    if (kind == "mlp") {
      cfg.arch.kind = ArchSpec::Kind::mlp;
    } else if (kind == "smallcnn") {
      cfg.arch.kind = ArchSpec::Kind::smallcnn;
    } else {
      throw ConfigError("arch.kind", "must be 'mlp' or 'smallcnn'");
    }
    cfg.arch.hidden = get_or<std::vector<int>>(*a, "hidden", cfg.arch.hidden, "arch.hidden");
    cfg.arch.taps =
        get_or<std::vector<std::string>>(*a, "taps", cfg.arch.taps, "arch.taps");
  }

  if (const json* a = find(j, "adapt")) {
    cfg.adapt.iterations =
        get_or<std::size_t>(*a, "iterations", cfg.adapt.iterations, "adapt.iterations");
    cfg.adapt.batch_size =
        get_or<std::size_t>(*a, "batch_size", cfg.adapt.batch_size, "adapt.batch_size");
    if (const json* o = find(*a, "optimizer"))
      cfg.adapt.optimizer = parse_optimizer(*o, "adapt.optimizer", cfg.adapt.optimizer);
  }
  if (cfg.adapt.iterations < 1) throw ConfigError("adapt.iterations", "must be >= 1");
  if (cfg.adapt.batch_size < 1) throw ConfigError("adapt.batch_size", "must be >= 1");

  if (const json* c = find(j, "consolidation")) {
    cfg.consolidation.lambda =
        get_or<double>(*c, "lambda", cfg.consolidation.lambda, "consolidation.lambda");
    cfg.consolidation.temperature = get_or<double>(*c, "temperature",
                                                   cfg.consolidation.temperature,
                                                   "consolidation.temperature");
    cfg.consolidation.t_squared_scaling =
        get_or<bool>(*c, "t_squared_scaling", cfg.consolidation.t_squared_scaling,
                     "consolidation.t_squared_scaling");
    cfg.consolidation.tap_layers = get_or<std::vector<std::string>>(
        *c, "taps", cfg.consolidation.tap_layers, "consolidation.taps");
    cfg.consolidation.iterations = get_or<std::size_t>(*c, "iterations",
                                                       cfg.consolidation.iterations,
                                                       "consolidation.iterations");
    cfg.consolidation.batch_size = get_or<std::size_t>(*c, "batch_size",
                                                       cfg.consolidation.batch_size,
                                                       "consolidation.batch_size");
    if (const json* o = find(*c, "optimizer"))
      cfg.consolidation.optimizer =
          parse_optimizer(*o, "consolidation.optimizer", cfg.consolidation.optimizer);
    std::string init =
        get_or<std::string>(*c, "student_init", "prev_cl", "consolidation.student_init");
    if (init == "prev_cl") {
      cfg.consolidation.student_init = ConsolidationConfig::StudentInit::prev_cl;
    } else if (init == "sc") {
      cfg.consolidation.student_init = ConsolidationConfig::StudentInit::sc;
    } else if (init == "random") {
      cfg.consolidation.student_init = ConsolidationConfig::StudentInit::random;
    } else {
      throw ConfigError("consolidation.student_init", "must be 'prev_cl', 'sc' or 'random'");
    }
  }
  if (cfg.consolidation.lambda < 0) throw ConfigError("consolidation.lambda", "must be >= 0");
  if (cfg.consolidation.temperature <= 0)
    throw ConfigError("consolidation.temperature", "must be > 0");
  if (cfg.consolidation.iterations < 1)
    throw ConfigError("consolidation.iterations", "must be >= 1");

  if (const json* o = find(j, "ood")) {
    cfg.ood.kind = get_or<std::string>(*o, "kind", cfg.ood.kind, "ood.kind");
    cfg.ood.path = get_or<std::string>(*o, "path", cfg.ood.path, "ood.path");
  }
  if (cfg.ood.kind != "single_image" && cfg.ood.kind != "image_folder" &&
      cfg.ood.kind != "noise" && cfg.ood.kind != "real_data")
    throw ConfigError("ood.kind",
                      "must be 'single_image', 'image_folder', 'noise' or 'real_data'");
  if (cfg.ood.kind == "single_image" || cfg.ood.kind == "image_folder")
    require_file(cfg.ood.path, "ood.path");

  if (const json* a = find(j, "aug")) {
    cfg.aug.crop_scale_min =
        get_or<double>(*a, "crop_scale_min", cfg.aug.crop_scale_min, "aug.crop_scale_min");
    cfg.aug.crop_scale_max =
        get_or<double>(*a, "crop_scale_max", cfg.aug.crop_scale_max, "aug.crop_scale_max");
    cfg.aug.rotation_deg =
        get_or<double>(*a, "rotation_deg", cfg.aug.rotation_deg, "aug.rotation_deg");
    cfg.aug.flip_p = get_or<double>(*a, "flip_p", cfg.aug.flip_p, "aug.flip_p");
    cfg.aug.jitter = get_or<double>(*a, "jitter", cfg.aug.jitter, "aug.jitter");
    cfg.aug.cutmix = get_or<bool>(*a, "cutmix", cfg.aug.cutmix, "aug.cutmix");
    cfg.aug.cutmix_beta =
        get_or<double>(*a, "cutmix_beta", cfg.aug.cutmix_beta, "aug.cutmix_beta");
  }
  try {
    AugConfig probe = cfg.aug;
    probe.out_h = 8;
    probe.out_w = 8;
    probe.validate();
  } catch (const std::exception& e) {
    throw ConfigError("aug", e.what());
  }

  cfg.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", cfg.seeds, "seeds");
  if (cfg.seeds.empty()) throw ConfigError("seeds", "must be non-empty");
  cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir, "output_dir");
  if (cfg.output_dir.empty()) throw ConfigError("output_dir", "must be non-empty");

  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("<config>", "no such file: " + path);
  auto bytes = read_file_bytes(path);
  return parse_experiment_config(std::string(bytes.begin(), bytes.end()));
}

std::string experiment_config_json(const ExperimentConfig& cfg) {
  json j;
  j["scheme"] = cfg.scheme;
  j["stream"] = {{"dataset", cfg.stream.dataset},
                 {"n_tasks", cfg.stream.n_tasks},
                 {"classes_per_task", cfg.stream.classes_per_task},
                 {"data_seed", cfg.stream.data_seed},
                 {"n_classes", cfg.stream.n_classes},
                 {"samples_per_class", cfg.stream.samples_per_class},
                 {"image_size", cfg.stream.image_size}};
  if (cfg.stream.dataset == "idx") {
    j["stream"]["train_images"] = cfg.stream.train_images;
    j["stream"]["train_labels"] = cfg.stream.train_labels;
    j["stream"]["test_images"] = cfg.stream.test_images;
    j["stream"]["test_labels"] = cfg.stream.test_labels;
  }
  j["arch"] = {{"kind", cfg.arch.kind == ArchSpec::Kind::mlp ? "mlp" : "smallcnn"},
               {"hidden", cfg.arch.hidden},
               {"taps", cfg.arch.taps}};
  j["adapt"] = {{"iterations", cfg.adapt.iterations},
                {"batch_size", cfg.adapt.batch_size},
                {"optimizer", optimizer_json(cfg.adapt.optimizer)}};
  const char* init_name = "prev_cl";
  if (cfg.consolidation.student_init == ConsolidationConfig::StudentInit::sc) init_name = "sc";
  if (cfg.consolidation.student_init == ConsolidationConfig::StudentInit::random)
    init_name = "random";
  j["consolidation"] = {{"lambda", cfg.consolidation.lambda},
                        {"temperature", cfg.consolidation.temperature},
                        {"t_squared_scaling", cfg.consolidation.t_squared_scaling},
                        {"taps", cfg.consolidation.tap_layers},
                        {"iterations", cfg.consolidation.iterations},
                        {"batch_size", cfg.consolidation.batch_size},
                        {"optimizer", optimizer_json(cfg.consolidation.optimizer)},
                        {"student_init", init_name}};
  j["ood"] = {{"kind", cfg.ood.kind}, {"path", cfg.ood.path}};
  j["aug"] = {{"crop_scale_min", cfg.aug.crop_scale_min},
              {"crop_scale_max", cfg.aug.crop_scale_max},
              {"rotation_deg", cfg.aug.rotation_deg},
              {"flip_p", cfg.aug.flip_p},
              {"jitter", cfg.aug.jitter},
              {"cutmix", cfg.aug.cutmix},
              {"cutmix_beta", cfg.aug.cutmix_beta}};
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  return j.dump(2) + "\n";
}

Dataset build_dataset(const ExperimentConfig& cfg) {
  if (cfg.stream.dataset == "shapes") {
    return shapes_dataset(cfg.stream.data_seed, cfg.stream.n_classes,
                          cfg.stream.samples_per_class, cfg.stream.image_size);
  }
  Dataset train = load_idx(cfg.stream.train_images, cfg.stream.train_labels);
  Dataset test = load_idx(cfg.stream.test_images, cfg.stream.test_labels);
  if (train.image_h != test.image_h || train.image_w != test.image_w)
    throw ConfigError("stream", "train/test image dimensions differ");
  Dataset merged = train;
  for (std::size_t i = 0; i < test.images.size(); ++i) {
    merged.images.push_back(test.images[i]);
    merged.labels.push_back(test.labels[i]);
    merged.test_indices.push_back(train.images.size() + i);
  }
  merged.n_classes = std::max(train.n_classes, test.n_classes);
  return merged;
}

std::vector<Experience> build_stream(const ExperimentConfig& cfg, const Dataset& dataset) {
  return make_split_stream(dataset, cfg.stream.n_tasks, cfg.stream.classes_per_task,
                           cfg.stream.data_seed);
}

OODSource make_ood_source(const std::string& kind, const std::string& path) {
  if (kind == "single_image") return OODSource::SingleImage(path);
  if (kind == "image_folder") return OODSource::ImageFolder(path);
  if (kind == "noise") return OODSource::Noise();
  if (kind == "real_data") return OODSource::RealData(nullptr);  // bound per step
  throw ConfigError("ood.kind", "unknown source kind '" + kind + "'");
}

SchemeConfig build_scheme_config(const ExperimentConfig& cfg, const Dataset& dataset) {
  SchemeConfig scheme;
  scheme.arch = cfg.arch;
  scheme.arch.in_c = dataset.image_c;
  scheme.arch.in_h = dataset.image_h;
  scheme.arch.in_w = dataset.image_w;
  scheme.arch.head_width = cfg.stream.classes_per_task;
  validate_arch(scheme.arch);
  scheme.adapt = cfg.adapt;
  scheme.consolidation = cfg.consolidation;
  scheme.source = make_ood_source(cfg.ood.kind, cfg.ood.path);
  scheme.aug = cfg.aug;
  scheme.aug.out_h = dataset.image_h;
  scheme.aug.out_w = dataset.image_w;
  return scheme;
}

SeedRunResult run_one_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                           const std::string& out_dir) {
  namespace fs = std::filesystem;
  auto t0 = std::chrono::steady_clock::now();

  Dataset dataset = build_dataset(cfg);
  auto stream = build_stream(cfg, dataset);
  SchemeConfig scheme = build_scheme_config(cfg, dataset);

  SeedRunResult result;
  if (cfg.scheme == "sequential") {
    result.artifacts = run_sequential(stream, scheme, seed);
  } else if (cfg.scheme == "independent") {
    result.artifacts = run_independent(stream, scheme, seed);
  } else {
    result.artifacts = naive_finetune_baseline(stream, scheme, seed);
  }
  result.final_average_accuracy =
      average_accuracy(result.artifacts.matrix, int(stream.size()));
  result.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::path seed_dir = fs::path(out_dir) / ("seed_" + std::to_string(seed));
  fs::create_directories(seed_dir / "checkpoints");

  auto write_text = [](const fs::path& p, const std::string& text) {
    write_file_bytes(p.string(), std::vector<std::uint8_t>(text.begin(), text.end()));
  };
  write_text(seed_dir / "accuracy_matrix.csv", result.artifacts.matrix.to_csv());
  write_text(seed_dir / "message_log.json", message_log_json(result.artifacts.log));
  write_text(seed_dir / "metrics.json", metrics_json(cfg, seed, result));
  write_text(seed_dir / "config.json", experiment_config_json(cfg));
  for (std::size_t i = 0; i < result.artifacts.cl_snapshots.size(); ++i)
    save_model(result.artifacts.cl_snapshots[i],
               (seed_dir / "checkpoints" / ("cl_step_" + std::to_string(i + 1) + ".model"))
                   .string());
  for (std::size_t i = 0; i < result.artifacts.sc_models.size(); ++i)
    save_model(result.artifacts.sc_models[i],
               (seed_dir / "checkpoints" /
                ("sc_task_" + std::to_string(result.artifacts.sc_models[i].heads[0].task_id) +
                 ".model"))
                   .string());
  return result;
}

std::string metrics_json(const ExperimentConfig& cfg, std::uint64_t seed,
                         const SeedRunResult& result) {
  const auto& matrix = result.artifacts.matrix;
  const int T = matrix.tasks();
  json avg = json::array();
  for (int t = 1; t <= T; ++t) avg.push_back(average_accuracy(matrix, t));
  json forg = json::array();
  double mean_forg = 0;
  for (int i = 1; i <= T; ++i) {
    double f = forgetting(matrix, i, T);
    forg.push_back(f);
    if (i < T) mean_forg += f;
  }
  if (T > 1) mean_forg /= double(T - 1);

  json adapt_reports = json::array();
  for (const auto& r : result.artifacts.adapt_reports)
    adapt_reports.push_back(
        {{"train_accuracy", r.train_accuracy}, {"test_accuracy", r.test_accuracy}});

  json j;
  j["schema_version"] = 1;
  j["scheme"] = cfg.scheme;
  j["seed"] = seed;
  j["n_tasks"] = T;
  j["average_accuracy_per_step"] = avg;
  j["final_average_accuracy"] = result.final_average_accuracy;
  j["forgetting_per_task"] = forg;
  j["mean_forgetting"] = mean_forg;  // over tasks 1..T-1
  j["adapt_reports"] = adapt_reports;
  j["wall_clock_seconds"] = result.wall_clock_seconds;
  return j.dump(2) + "\n";
}

Image make_poster_image(std::uint64_t seed, int size) {
  // colorful mosaic: gradient backdrop with a grid of textured shapes
  RandomStream rng(seed, "poster");
  Image img = Image::make(3, size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      img.at(0, y, x) = 0.25f + 0.5f * float(x) / size;
      img.at(1, y, x) = 0.25f + 0.5f * float(y) / size;
      img.at(2, y, x) = 0.35f;
    }
  const int cells = 4;
  const int cell = size / cells;
  for (int cy = 0; cy < cells; ++cy)
    for (int cx = 0; cx < cells; ++cx) {
      double hue = rng.uniform();
      double kind = rng.uniform();
      double r = 0, g = 0, b = 0;
      {
        double i = std::floor(hue * 6.0), f = hue * 6.0 - i;
        double p = 0.1, q = 1.0 - f * 0.9, t = 0.1 + f * 0.9;
        switch (int(i) % 6) {
          case 0: r = 1; g = t; b = p; break;
          case 1: r = q; g = 1; b = p; break;
          case 2: r = p; g = 1; b = t; break;
          case 3: r = p; g = q; b = 1; break;
          case 4: r = t; g = p; b = 1; break;
          case 5: r = 1; g = p; b = q; break;
        }
      }
      double ccy = cy * cell + cell / 2.0, ccx = cx * cell + cell / 2.0;
      double half = cell * rng.uniform(0.30, 0.46);
      for (int y = cy * cell; y < (cy + 1) * cell && y < size; ++y)
        for (int x = cx * cell; x < (cx + 1) * cell && x < size; ++x) {
          double u = (x - ccx) / half, v = (y - ccy) / half;
          bool in;
          if (kind < 0.33) {
            in = u * u + v * v <= 1.0;
          } else if (kind < 0.66) {
            in = std::fabs(u) <= 0.9 && std::fabs(v) <= 0.9;
          } else {
            in = std::fabs(u) + std::fabs(v) <= 1.1;
          }
          if (!in) continue;
          double stripe = (std::fmod(std::floor((u + 2.0) * 3.0), 2.0) == 0.0) ? 1.0 : 0.55;
          img.at(0, y, x) = float(r * stripe);
          img.at(1, y, x) = float(g * stripe);
          img.at(2, y, x) = float(b * stripe);
        }
    }
  return img;
}

}  // namespace daclab
