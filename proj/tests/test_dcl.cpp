#include <doctest.h>

#include <filesystem>

#include "daclab/config.hpp"
#include "daclab/dcl.hpp"
#include "daclab/eval.hpp"
#include "daclab/serialize.hpp"

using namespace daclab;

namespace {

ArchSpec toy_arch() {
  ArchSpec arch;
  arch.kind = ArchSpec::Kind::mlp;
  arch.in_c = 3;
  arch.in_h = 12;
  arch.in_w = 12;
  arch.hidden = {32, 16};
  arch.head_width = 2;
  return arch;
}

std::string poster_path() {
  static std::string path = [] {
    auto p = std::filesystem::temp_directory_path() / "daclab_dcl_poster.ppm";
    write_ppm(make_poster_image(12, 48), p.string());
    return p.string();
  }();
  return path;
}

SchemeConfig toy_scheme() {
  SchemeConfig cfg;
  cfg.arch = toy_arch();
  cfg.adapt.iterations = 600;
  cfg.adapt.batch_size = 16;
  cfg.adapt.optimizer = {OptimizerKind::sgd, 0.1, 0.9, 0.999, 1e-8};
  cfg.consolidation.iterations = 1200;
  cfg.consolidation.batch_size = 32;
  cfg.consolidation.optimizer.learning_rate = 1e-3;
  cfg.source = OODSource::SingleImage(poster_path());
  cfg.aug.out_h = 12;
  cfg.aug.out_w = 12;
  return cfg;
}

std::vector<Experience> toy_stream(int n_tasks) {
  auto ds = shapes_dataset(3, 10, 40, 12);
  auto full = make_split_stream(ds, 5, 2, 3);
  return std::vector<Experience>(full.begin(), full.begin() + n_tasks);
}

bool models_equal_bytes(const Model<float>& a, const Model<float>& b) {
  return serialize_model(a) == serialize_model(b);
}

}  // namespace

TEST_CASE("adapt reaches 0.99 train accuracy on a separable task") {
  auto stream = toy_stream(1);
  auto cfg = toy_scheme();
  auto f0 = build_model<float>(cfg.arch, 1, false);
  AdaptReport report;
  auto sc = adapt(make_init_message(f0, 1), stream[0], cfg.adapt, 5, &report);
  CHECK(report.train_accuracy >= 0.99);
  CHECK(sc.task_id() == 1);
}

TEST_CASE("adapt rejects zero iterations") {
  auto stream = toy_stream(1);
  auto cfg = toy_scheme();
  cfg.adapt.iterations = 0;
  auto f0 = build_model<float>(cfg.arch, 1, false);
  CHECK_THROWS_AS(adapt(make_init_message(f0, 1), stream[0], cfg.adapt, 5, nullptr),
                  std::invalid_argument);
}

TEST_CASE("adapt is bit-deterministic per (init, experience, seed)") {
  auto stream = toy_stream(1);
  auto cfg = toy_scheme();
  cfg.adapt.iterations = 60;
  auto f0 = build_model<float>(cfg.arch, 2, false);
  auto a = adapt(make_init_message(f0, 1), stream[0], cfg.adapt, 9, nullptr);
  auto b = adapt(make_init_message(f0, 1), stream[0], cfg.adapt, 9, nullptr);
  CHECK(models_equal_bytes(a.model, b.model));
  auto c = adapt(make_init_message(f0, 1), stream[0], cfg.adapt, 10, nullptr);
  CHECK_FALSE(models_equal_bytes(a.model, c.model));
}

TEST_CASE("consolidate at i=1 reduces to single-teacher distillation") {
  auto stream = toy_stream(1);
  auto cfg = toy_scheme();
  auto f0 = build_model<float>(cfg.arch, 3, false);
  auto sc = adapt(make_init_message(f0, 1), stream[0], cfg.adapt, 11, nullptr);
  ConsolidationReport report;
  auto student = consolidate(f0, make_sc_message(sc), cfg.source, cfg.aug, cfg.consolidation, 13,
                             &report);
  CHECK(student.heads.size() == 1);
  CHECK(student.heads[0].task_id == 1);
  CHECK(report.final_loss < report.initial_loss);
}

TEST_CASE("matched initialization starts at near-zero loss (i=1, student_init=sc)") {
  auto stream = toy_stream(1);
  auto cfg = toy_scheme();
  cfg.consolidation.student_init = ConsolidationConfig::StudentInit::sc;
  cfg.consolidation.iterations = 1;
  auto f0 = build_model<float>(cfg.arch, 4, false);
  auto sc = adapt(make_init_message(f0, 1), stream[0], cfg.adapt, 15, nullptr);
  ConsolidationReport report;
  consolidate(f0, make_sc_message(sc), cfg.source, cfg.aug, cfg.consolidation, 17, &report);
  // student == teacher at step 0: outputs match and projections are identity
  CHECK(report.initial_loss <= 1e-5);
}

TEST_CASE("consolidate rejects duplicate task ids and mismatched architectures") {
  auto stream = toy_stream(2);
  auto cfg = toy_scheme();
  auto f0 = build_model<float>(cfg.arch, 5, false);
  auto sc = adapt(make_init_message(f0, 1), stream[0], cfg.adapt, 19, nullptr);
  cfg.consolidation.iterations = 5;
  auto one = consolidate(f0, make_sc_message(sc), cfg.source, cfg.aug, cfg.consolidation, 21,
                         nullptr);
  SUBCASE("duplicate task id") {
    CHECK_THROWS_WITH_AS(consolidate(one, make_sc_message(sc), cfg.source, cfg.aug,
                                      cfg.consolidation, 23, nullptr),
                         doctest::Contains("already present"), std::invalid_argument);
  }
  SUBCASE("architecture hash mismatch") {
    ArchSpec other = cfg.arch;
    other.hidden = {16, 12};
    auto f0_other = build_model<float>(other, 5, false);
    auto sc_other = adapt(make_init_message(f0_other, 1), stream[1], cfg.adapt, 25, nullptr);
    CHECK_THROWS_WITH_AS(consolidate(one, make_sc_message(sc_other), cfg.source, cfg.aug,
                                      cfg.consolidation, 27, nullptr),
                         doctest::Contains("hash mismatch"), std::runtime_error);
  }
}

TEST_CASE("toy 2-task sequential run: agreement, invariants, protocol log") {
  auto stream = toy_stream(2);
  auto cfg = toy_scheme();
  TeacherResidency::reset_peak();
  auto art = run_sequential(stream, cfg, 31);

  SUBCASE("consolidated heads agree with their teachers on held-out data") {
    for (std::size_t t = 0; t < 2; ++t) {
      double agree = head_agreement(art.final_model, int(t) + 1, art.sc_models[t], stream[t]);
      CAPTURE(t);
      CHECK(agree >= 0.9);
    }
  }
  SUBCASE("two-message protocol per device") {
    REQUIRE(art.log.size() == 4);
    for (int step = 1; step <= 2; ++step) {
      int inits = 0, scs = 0;
      for (const auto& rec : art.log)
        if (rec.step == step) {
          if (rec.direction == "init") ++inits;
          if (rec.direction == "sc") ++scs;
        }
      CHECK(inits == 1);
      CHECK(scs == 1);
    }
  }
  SUBCASE("teacher residency never exceeded two") {
    CHECK(TeacherResidency::peak() <= 2);
    CHECK(TeacherResidency::current() == 0);
  }
  SUBCASE("head count equals consolidated tasks") {
    CHECK(art.final_model.heads.size() == 2);
    CHECK(art.final_model.task_ids() == std::vector<int>{1, 2});
    CHECK(art.cl_snapshots[0].heads.size() == 1);
  }
  SUBCASE("accuracy matrix is lower-triangular and complete") {
    CHECK(art.matrix.tasks() == 2);
    CHECK(art.matrix.has(1, 1));
    CHECK(art.matrix.has(2, 1));
    CHECK(art.matrix.has(2, 2));
    CHECK_FALSE(art.matrix.has(1, 2));
  }
}

TEST_CASE("single-task stream gives a 1x1 matrix") {
  auto stream = toy_stream(1);
  auto cfg = toy_scheme();
  cfg.adapt.iterations = 100;
  cfg.consolidation.iterations = 50;
  auto art = run_sequential(stream, cfg, 33);
  CHECK(art.matrix.tasks() == 1);
  CHECK(art.log.size() == 2);
  CHECK(art.sc_models.size() == 1);
}

TEST_CASE("sequential runs are bit-deterministic per (config, seed)") {
  auto stream = toy_stream(2);
  auto cfg = toy_scheme();
  cfg.adapt.iterations = 80;
  cfg.consolidation.iterations = 60;
  auto a = run_sequential(stream, cfg, 41);
  auto b = run_sequential(stream, cfg, 41);
  CHECK(a.matrix.to_csv() == b.matrix.to_csv());
  CHECK(models_equal_bytes(a.final_model, b.final_model));
  CHECK(message_log_json(a.log) == message_log_json(b.log));
  auto c = run_sequential(stream, cfg, 42);
  CHECK_FALSE(models_equal_bytes(a.final_model, c.final_model));
}

TEST_CASE("independent scheme: identical inits, full matrix, parallel == serial") {
  auto stream = toy_stream(3);
  auto cfg = toy_scheme();
  cfg.adapt.iterations = 120;
  cfg.consolidation.iterations = 80;

  auto serial = run_independent(stream, cfg, 51, false);
  SUBCASE("init messages identical and logged per device") {
    int init_count = 0;
    std::string first_sha;
    for (const auto& rec : serial.log)
      if (rec.direction == "init") {
        ++init_count;
        if (first_sha.empty()) first_sha = rec.sha256;
        CHECK(rec.sha256 == first_sha);
      }
    CHECK(init_count == 3);
  }
  SUBCASE("full lower-triangular matrix") {
    CHECK(serial.matrix.tasks() == 3);
    for (int t = 1; t <= 3; ++t)
      for (int i = 1; i <= t; ++i) CHECK(serial.matrix.has(t, i));
  }
  SUBCASE("parallel adaptation reproduces serial results exactly") {
    auto parallel = run_independent(stream, cfg, 51, true);
    CHECK(parallel.matrix.to_csv() == serial.matrix.to_csv());
    CHECK(models_equal_bytes(parallel.final_model, serial.final_model));
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(models_equal_bytes(parallel.sc_models[i], serial.sc_models[i]));
  }
}

TEST_CASE("naive baseline: one task behaves like plain adaptation") {
  auto stream = toy_stream(1);
  auto cfg = toy_scheme();
  auto art = naive_finetune_baseline(stream, cfg, 61);
  CHECK(art.matrix.tasks() == 1);
  CHECK(art.matrix.at(1, 1) >= 0.9);
  CHECK(art.final_model.heads.size() == 1);
}

TEST_CASE("naive baseline is deterministic per seed") {
  auto stream = toy_stream(2);
  auto cfg = toy_scheme();
  cfg.adapt.iterations = 80;
  auto a = naive_finetune_baseline(stream, cfg, 71);
  auto b = naive_finetune_baseline(stream, cfg, 71);
  CHECK(a.matrix.to_csv() == b.matrix.to_csv());
  CHECK(models_equal_bytes(a.final_model, b.final_model));
}

TEST_CASE("real_data source consolidates in rehearsal-free mode") {
  auto stream = toy_stream(2);
  auto cfg = toy_scheme();
  cfg.source = make_ood_source("real_data", "");
  cfg.adapt.iterations = 120;
  cfg.consolidation.iterations = 100;
  auto art = run_sequential(stream, cfg, 81);
  CHECK(art.final_model.heads.size() == 2);
  CHECK(average_accuracy(art.matrix, 2) > 0.5);
}

TEST_CASE("message log json is well formed") {
  MessageLog log{{1, "init", 100, "abc"}, {1, "sc", 200, "def"}};
  auto text = message_log_json(log);
  CHECK(text.find("\"direction\": \"init\"") != std::string::npos);
  CHECK(text.find("\"bytes\": 200") != std::string::npos);
}
