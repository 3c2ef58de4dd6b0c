#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "daclab/config.hpp"
#include "daclab/serialize.hpp"

extern std::string g_daclab_binary;

using namespace daclab;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, std::string* output = nullptr) {
  REQUIRE_FALSE(g_daclab_binary.empty());
  std::string cmd = g_daclab_binary + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string text;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) text += buf;
  int status = pclose(pipe);
  if (output) *output = text;
  return WEXITSTATUS(status);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path workspace() {
  auto dir = fs::temp_directory_path() / "daclab_cli_tests";
  fs::create_directories(dir);
  return dir;
}

// small but real experiment: 2 tasks, tiny budgets
std::string write_config(const fs::path& dir, const std::string& name,
                         const std::string& extra = "") {
  auto poster = dir / "poster.ppm";
  if (!fs::exists(poster)) write_ppm(make_poster_image(12, 48), poster.string());
  std::string text = R"({
    "scheme": "sequential",
    "stream": {"dataset": "shapes", "n_tasks": 2, "classes_per_task": 2,
               "n_classes": 4, "samples_per_class": 40, "image_size": 8, "data_seed": 3},
    "arch": {"kind": "mlp", "hidden": [24, 12]},
    "adapt": {"iterations": 300, "batch_size": 16,
              "optimizer": {"kind": "sgd", "learning_rate": 0.1}},
    "consolidation": {"iterations": 400, "batch_size": 32,
                      "optimizer": {"kind": "adam", "learning_rate": 0.001}},
    "ood": {"kind": "single_image", "path": ")" +
                     poster.string() + R"("},
    "seeds": [1],
    "output_dir": ")" + (dir / name).string() +
                     R"("
    )" + extra + R"(})";
  auto cfg_path = dir / (name + ".json");
  std::ofstream out(cfg_path);
  out << text;
  out.close();
  return cfg_path.string();
}

}  // namespace

TEST_CASE("cli run writes all artifact kinds") {
  auto dir = workspace();
  auto cfg = write_config(dir, "run1");
  std::string output;
  int code = run_cli("run " + cfg, &output);
  CAPTURE(output);
  CHECK(code == 0);

  fs::path seed_dir = dir / "run1" / "seed_1";
  CHECK(fs::exists(seed_dir / "accuracy_matrix.csv"));
  CHECK(fs::exists(seed_dir / "metrics.json"));
  CHECK(fs::exists(seed_dir / "message_log.json"));
  CHECK(fs::exists(seed_dir / "config.json"));
  CHECK(fs::exists(seed_dir / "checkpoints" / "cl_step_1.model"));
  CHECK(fs::exists(seed_dir / "checkpoints" / "cl_step_2.model"));
  CHECK(fs::exists(seed_dir / "checkpoints" / "sc_task_1.model"));
  CHECK(fs::exists(seed_dir / "checkpoints" / "sc_task_2.model"));

  SUBCASE("csv parses under its schema with finite values") {
    auto matrix = AccuracyMatrix::from_csv(read_text(seed_dir / "accuracy_matrix.csv"));
    CHECK(matrix.tasks() == 2);
    for (int t = 1; t <= 2; ++t)
      for (int i = 1; i <= t; ++i) {
        CHECK(std::isfinite(matrix.at(t, i)));
      }
  }
  SUBCASE("metrics json has the schema version and finite numbers") {
    auto metrics = nlohmann::json::parse(read_text(seed_dir / "metrics.json"));
    CHECK(metrics.at("schema_version").get<int>() == 1);
    CHECK(std::isfinite(metrics.at("final_average_accuracy").get<double>()));
    CHECK(metrics.at("average_accuracy_per_step").size() == 2);
  }
  SUBCASE("message log has two records per device") {
    auto log = nlohmann::json::parse(read_text(seed_dir / "message_log.json"));
    CHECK(log.size() == 4);
  }
}

TEST_CASE("two runs with the same config and seed are byte-identical") {
  auto dir = workspace();
  auto cfg_a = write_config(dir, "det_a");
  auto cfg_b = write_config(dir, "det_b");
  CHECK(run_cli("run " + cfg_a) == 0);
  CHECK(run_cli("run " + cfg_b) == 0);
  CHECK(read_text(dir / "det_a" / "seed_1" / "accuracy_matrix.csv") ==
        read_text(dir / "det_b" / "seed_1" / "accuracy_matrix.csv"));
  CHECK(read_text(dir / "det_a" / "seed_1" / "message_log.json") ==
        read_text(dir / "det_b" / "seed_1" / "message_log.json"));
}

TEST_CASE("config referencing a missing image exits 2 naming the field") {
  auto dir = workspace();
  auto cfg = write_config(dir, "badimg");
  // rewrite the ood path to a nonexistent file
  auto text = read_text(cfg);
  auto pos = text.find("poster.ppm");
  text.replace(pos, 10, "ghost0.ppm");
  std::ofstream(cfg) << text;
  std::string output;
  int code = run_cli("run " + cfg, &output);
  CHECK(code == 2);
  CHECK(output.find("ood.path") != std::string::npos);
}

TEST_CASE("malformed json exits 2; runtime usage errors are distinct") {
  auto dir = workspace();
  auto bad = dir / "broken.json";
  std::ofstream(bad) << "{ not json";
  std::string output;
  CHECK(run_cli("run " + bad.string(), &output) == 2);
  CHECK(run_cli("report " + (dir / "no_such_dir").string(), &output) == 2);
  CHECK(run_cli("run " + (dir / "missing_config.json").string(), &output) == 2);
}

TEST_CASE("DACLAB_SEED overrides the seed list") {
  auto dir = workspace();
  auto cfg = write_config(dir, "envseed");
  std::string output;
  int code = run_cli("run " + cfg + " --seed 9", &output);
  CHECK(code == 0);
  CHECK(fs::exists(dir / "envseed" / "seed_9"));
  CHECK_FALSE(fs::exists(dir / "envseed" / "seed_1"));

  // environment variable path
  std::string cmd = "DACLAB_SEED=11 " + g_daclab_binary + " run " + cfg + " > /dev/null 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);
  CHECK(fs::exists(dir / "envseed" / "seed_11"));
}

TEST_CASE("ablate-sources emits per-cell rows plus summaries") {
  auto dir = workspace();
  auto cfg = write_config(dir, "ablate", R"(, "seeds": [1, 2])");
  std::string output;
  int code =
      run_cli("ablate-sources " + cfg + " --sources single_image,noise --out " +
                  (dir / "ablate_out").string(),
              &output);
  CAPTURE(output);
  CHECK(code == 0);

  auto csv = read_text(dir / "ablate_out" / "source_ablation.csv");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "source,seed,avg_accuracy");
  int data_rows = 0, summary_rows = 0;
  double single_sum = 0, single_vals = 0, single_mean = -1;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    if (line.find("mean±std") != std::string::npos) {
      ++summary_rows;
      if (line.rfind("single_image,", 0) == 0) {
        auto tail = line.substr(line.rfind(',') + 1);
        single_mean = std::stod(tail.substr(0, tail.find("±")));
      }
    } else {
      ++data_rows;
      if (line.rfind("single_image,", 0) == 0) {
        single_sum += std::stod(line.substr(line.rfind(',') + 1));
        single_vals += 1;
      }
    }
  }
  CHECK(data_rows == 4);     // 2 sources x 2 seeds
  CHECK(summary_rows == 2);  // one per source
  CHECK(single_mean == doctest::Approx(single_sum / single_vals).epsilon(1e-6));
}

TEST_CASE("report emits probe rows and a self-CKA of ones") {
  auto dir = workspace();
  auto cfg = write_config(dir, "report_run");
  CHECK(run_cli("run " + cfg) == 0);
  std::string output;
  int code = run_cli("report " + (dir / "report_run" / "seed_1").string(), &output);
  CAPTURE(output);
  CHECK(code == 0);

  auto probe_csv = read_text(dir / "report_run" / "seed_1" / "probe_accuracies.csv");
  int probe_rows = 0;
  {
    std::istringstream lines(probe_csv);
    std::string line;
    std::getline(lines, line);
    CHECK(line == "task_id,probe_accuracy");
    while (std::getline(lines, line))
      if (!line.empty()) ++probe_rows;
  }
  CHECK(probe_rows == 2);  // one per task

  auto cka_csv = read_text(dir / "report_run" / "seed_1" / "cka_report.csv");
  std::istringstream lines(cka_csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "layer,model_index,cka");
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    // reference model's own row must be 1.0
    if (line.find(",0,") != std::string::npos) {
      double v = std::stod(line.substr(line.rfind(',') + 1));
      CHECK(v == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("gen-assets writes a loadable poster and a valid config") {
  auto dir = workspace() / "assets";
  CHECK(run_cli("gen-assets " + dir.string()) == 0);
  CHECK(fs::exists(dir / "poster.ppm"));
  CHECK(fs::exists(dir / "poster.png"));
  auto ppm = read_image((dir / "poster.ppm").string());
  auto png = read_image((dir / "poster.png").string());
  CHECK(ppm.w == png.w);
  CHECK_NOTHROW(load_experiment_config((dir / "example_config.json").string()));
}
