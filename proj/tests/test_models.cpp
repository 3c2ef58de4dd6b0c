#include <doctest.h>

#include <cmath>

#include "daclab/model.hpp"
#include "helpers.hpp"

using namespace daclab;

namespace {

ArchSpec tiny_mlp() {
  ArchSpec spec;
  spec.kind = ArchSpec::Kind::mlp;
  spec.in_c = 1;
  spec.in_h = 2;
  spec.in_w = 2;
  spec.hidden = {8};
  spec.head_width = 2;
  return spec;
}

bool params_equal(const ParameterSet<float>& a, const ParameterSet<float>& b) {
  if (a.size() != b.size()) return false;
  auto it = b.begin();
  for (const auto& [name, t] : a) {
    if (it->first != name || it->second.values() != t.values()) return false;
    ++it;
  }
  return true;
}

}  // namespace

TEST_CASE("build is deterministic per (spec, seed)") {
  auto spec = tiny_mlp();
  auto a = build_backbone<float>(spec, 99);
  auto b = build_backbone<float>(spec, 99);
  CHECK(params_equal(a, b));
  auto c = build_backbone<float>(spec, 100);
  CHECK_FALSE(params_equal(a, c));
}

TEST_CASE("mlp D=4 hidden [8] head 2 has 58 parameters") {
  auto spec = tiny_mlp();
  auto backbone = build_backbone<float>(spec, 1);
  auto head = build_head<float>(spec, 1, 1, {0, 1});
  CHECK(backbone.total_elements() + head.params.total_elements() == 58);
}

TEST_CASE("smallcnn forward on a zero image is finite") {
  ArchSpec spec;
  spec.kind = ArchSpec::Kind::smallcnn;
  spec.in_c = 3;
  spec.in_h = 8;
  spec.in_w = 8;
  spec.hidden = {4, 8, 16};
  spec.head_width = 3;
  auto model = build_model<float>(spec, 7);
  attach_head(model, build_head<float>(spec, 7, 1, {0, 1, 2}));
  auto x = Tensor<float>::zeros({2, 3, 8, 8});
  auto out = forward(model, x, HeadSelect::All());
  REQUIRE(out.logits.size() == 1);
  for (float v : out.logits[0].second.values()) CHECK(std::isfinite(v));
  CHECK(out.taps.count("fc1") == 1);
}

TEST_CASE("forward selectors") {
  auto spec = tiny_mlp();
  auto model = build_model<float>(spec, 3);
  attach_head(model, build_head<float>(spec, 3, 1, {0, 1}));
  attach_head(model, build_head<float>(spec, 3, 2, {2, 3}));
  attach_head(model, build_head<float>(spec, 3, 3, {4, 5}));
  auto x = Tensor<float>::from_values({2, 4}, {0.1f, 0.2f, 0.3f, 0.4f, -0.1f, 0.0f, 0.5f, 1.0f});

  SUBCASE("all heads share taps") {
    auto out = forward(model, x, HeadSelect::All());
    CHECK(out.logits.size() == 3);
    CHECK(out.taps.count("fc1") == 1);
    CHECK(out.taps.at("fc1").shape() == std::vector<std::size_t>{2, 8});
  }
  SUBCASE("single head selection") {
    auto out = forward(model, x, HeadSelect::Task(2));
    REQUIRE(out.logits.size() == 1);
    CHECK(out.logits[0].first == 2);
    CHECK(out.logits[0].second.shape() == std::vector<std::size_t>{2, 2});
  }
  SUBCASE("unknown task id errors") {
    CHECK_THROWS_AS(forward(model, x, HeadSelect::Task(9)), std::invalid_argument);
  }
  SUBCASE("identical parameters give identical logits") {
    auto clone = model.clone(false);
    auto a = forward(model, x, HeadSelect::All());
    auto b = forward(clone, x, HeadSelect::All());
    for (std::size_t i = 0; i < a.logits.size(); ++i)
      CHECK(a.logits[i].second.values() == b.logits[i].second.values());
  }
}

TEST_CASE("attach_head rules") {
  auto spec = tiny_mlp();
  auto model = build_model<float>(spec, 5);
  CHECK(model.heads.empty());
  attach_head(model, build_head<float>(spec, 5, 1, {0, 1}));
  CHECK(model.heads.size() == 1);
  attach_head(model, build_head<float>(spec, 5, 3, {2, 3}));
  CHECK(model.task_ids() == std::vector<int>{1, 3});
  CHECK_THROWS_WITH_AS(attach_head(model, build_head<float>(spec, 5, 3, {4, 5})),
                       doctest::Contains("duplicate"), std::invalid_argument);
  CHECK_THROWS_AS(attach_head(model, build_head<float>(spec, 5, 2, {4, 5})),
                  std::invalid_argument);
}

TEST_CASE("head gradients are isolated across heads") {
  auto spec = tiny_mlp();
  auto model = build_model<float>(spec, 11);
  attach_head(model, build_head<float>(spec, 11, 1, {0, 1}));
  attach_head(model, build_head<float>(spec, 11, 2, {2, 3}));
  auto x = Tensor<float>::from_values({1, 4}, {0.3f, -0.2f, 0.7f, 0.1f});
  auto out = forward(model, x, HeadSelect::All());
  auto loss = mean(square(out.logits_for(1)));
  loss.backward();

  auto g_w2 = model.heads[1].params.at("w").grad();
  for (float g : g_w2) CHECK(g == 0.0f);
  auto g_w1 = model.heads[0].params.at("w").grad();
  float acc = 0;
  for (float g : g_w1) acc += std::fabs(g);
  CHECK(acc > 0.0f);
}

TEST_CASE("forward is pure: repeated calls agree") {
  auto spec = tiny_mlp();
  auto model = build_model<float>(spec, 21);
  attach_head(model, build_head<float>(spec, 21, 1, {0, 1}));
  auto x = Tensor<float>::from_values({1, 4}, {0.5f, 0.25f, -0.5f, 1.0f});
  auto a = forward(model, x, HeadSelect::All());
  auto b = forward(model, x, HeadSelect::All());
  CHECK(a.logits[0].second.values() == b.logits[0].second.values());
}

TEST_CASE("forward rejects mismatched input shapes") {
  auto spec = tiny_mlp();
  auto model = build_model<float>(spec, 8);
  attach_head(model, build_head<float>(spec, 8, 1, {0, 1}));
  auto bad_flat = Tensor<float>::zeros({2, 5});
  CHECK_THROWS_WITH_AS(forward(model, bad_flat, HeadSelect::All()), doctest::Contains("input"),
                       std::invalid_argument);
  auto bad_image = Tensor<float>::zeros({2, 3, 2, 2});
  CHECK_THROWS_AS(forward(model, bad_image, HeadSelect::All()), std::invalid_argument);
  auto bad_rank = Tensor<float>::zeros({2, 2, 2});
  CHECK_THROWS_AS(forward(model, bad_rank, HeadSelect::All()), std::invalid_argument);
}

TEST_CASE("unknown tap request is rejected at forward time") {
  auto spec = tiny_mlp();
  auto model = build_model<float>(spec, 8);
  attach_head(model, build_head<float>(spec, 8, 1, {0, 1}));
  auto x = Tensor<float>::zeros({1, 4});
  CHECK_THROWS_WITH_AS(forward(model, x, HeadSelect::All(), {"conv9"}),
                       doctest::Contains("conv9"), std::invalid_argument);
  auto ok = forward(model, x, HeadSelect::All(), {});
  CHECK(ok.taps.empty());
}

TEST_CASE("arch validation") {
  auto spec = tiny_mlp();
  spec.taps = {"nope"};
  CHECK_THROWS_AS(validate_arch(spec), std::invalid_argument);
  spec.taps = {"fc1", "logits"};
  CHECK_NOTHROW(validate_arch(spec));
  CHECK(penultimate_tap(spec) == "fc1");
  CHECK(default_taps(spec) == std::vector<std::string>{"fc1", "logits"});
  CHECK(tap_feature_width(spec, "fc1") == 8);
  CHECK(tap_feature_width(spec, "logits") == 2);
}

TEST_CASE("arch hash is stable and spec-sensitive") {
  auto spec = tiny_mlp();
  auto h1 = arch_hash_hex(spec);
  CHECK(h1 == arch_hash_hex(spec));
  auto spec2 = spec;
  spec2.hidden = {9};
  CHECK(h1 != arch_hash_hex(spec2));
}

TEST_CASE("sc model requires exactly one head") {
  auto spec = tiny_mlp();
  auto model = build_model<float>(spec, 2);
  auto make_sc = [&] { return SCModel<float>(model); };
  CHECK_THROWS_AS(make_sc(), std::invalid_argument);
  attach_head(model, build_head<float>(spec, 2, 1, {0, 1}));
  SCModel<float> sc(model);
  CHECK(sc.task_id() == 1);
  attach_head(model, build_head<float>(spec, 2, 2, {2, 3}));
  CHECK_THROWS_AS(make_sc(), std::invalid_argument);
}
