#include <doctest.h>

#include <cmath>

#include "daclab/eval.hpp"
#include "daclab/rng.hpp"

using namespace daclab;

namespace {

FeatureMatrix random_features(std::size_t n, std::size_t d, RandomStream& rng,
                              double scale = 1.0) {
  FeatureMatrix f;
  f.n = n;
  f.d = d;
  f.data.resize(n * d);
  for (auto& v : f.data) v = rng.uniform(-scale, scale);
  return f;
}

// Gram-Schmidt orthonormal basis of a random square matrix.
FeatureMatrix random_orthogonal(std::size_t d, RandomStream& rng) {
  FeatureMatrix q = random_features(d, d, rng);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += q.at(i, k) * q.at(j, k);
      for (std::size_t k = 0; k < d; ++k) q.at(i, k) -= dot * q.at(j, k);
    }
    double norm = 0;
    for (std::size_t k = 0; k < d; ++k) norm += q.at(i, k) * q.at(i, k);
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < d; ++k) q.at(i, k) /= norm;
  }
  return q;
}

FeatureMatrix matmul_features(const FeatureMatrix& x, const FeatureMatrix& m) {
  FeatureMatrix out;
  out.n = x.n;
  out.d = m.n;  // m is d x d
  out.data.assign(out.n * out.d, 0.0);
  for (std::size_t r = 0; r < x.n; ++r)
    for (std::size_t c = 0; c < out.d; ++c) {
      double acc = 0;
      for (std::size_t k = 0; k < x.d; ++k) acc += x.at(r, k) * m.at(c, k);
      out.at(r, c) = acc;
    }
  return out;
}

// Direct dense evaluation of the linear CKA formula, written independently
// of the production routine.
double cka_oracle(const FeatureMatrix& x, const FeatureMatrix& y) {
  auto centered = [](const FeatureMatrix& f) {
    FeatureMatrix out = f;
    for (std::size_t c = 0; c < f.d; ++c) {
      double mu = 0;
      for (std::size_t r = 0; r < f.n; ++r) mu += f.at(r, c);
      mu /= double(f.n);
      for (std::size_t r = 0; r < f.n; ++r) out.at(r, c) -= mu;
    }
    return out;
  };
  FeatureMatrix xc = centered(x), yc = centered(y);
  auto gram = [](const FeatureMatrix& a, const FeatureMatrix& b) {
    // a^T b, dims a.d x b.d
    std::vector<double> g(a.d * b.d, 0.0);
    for (std::size_t i = 0; i < a.d; ++i)
      for (std::size_t j = 0; j < b.d; ++j) {
        double acc = 0;
        for (std::size_t r = 0; r < a.n; ++r) acc += a.at(r, i) * b.at(r, j);
        g[i * b.d + j] = acc;
      }
    return g;
  };
  auto fro2 = [](const std::vector<double>& m) {
    double acc = 0;
    for (double v : m) acc += v * v;
    return acc;
  };
  double num = fro2(gram(yc, xc));
  double den = std::sqrt(fro2(gram(xc, xc))) * std::sqrt(fro2(gram(yc, yc)));
  return num / den;
}

}  // namespace

TEST_CASE("accuracy matrix set/get/csv") {
  AccuracyMatrix m;
  m.set(1, 1, 1.0);
  m.set(2, 1, 0.5);
  m.set(2, 2, 0.75);
  CHECK(m.at(2, 1) == 0.5);
  CHECK(m.has(2, 2));
  CHECK_FALSE(m.has(1, 2));
  CHECK_THROWS_AS(m.at(3, 1), std::invalid_argument);
  CHECK_THROWS_AS(m.set(1, 2, 0.5), std::invalid_argument);

  auto csv = m.to_csv();
  CHECK(csv == "t,i,accuracy\n1,1,1.000000\n2,1,0.500000\n2,2,0.750000\n");
  auto back = AccuracyMatrix::from_csv(csv);
  CHECK(back.to_csv() == csv);
}

TEST_CASE("average accuracy is the row mean") {
  AccuracyMatrix m;
  m.set(1, 1, 1.0);
  m.set(2, 1, 1.0);
  m.set(2, 2, 0.5);
  CHECK(average_accuracy(m, 2) == doctest::Approx(0.75));
  CHECK(average_accuracy(m, 1) == doctest::Approx(1.0));

  SUBCASE("all-equal rows average to the constant") {
    AccuracyMatrix c;
    for (int t = 1; t <= 4; ++t)
      for (int i = 1; i <= t; ++i) c.set(t, i, 0.6);
    for (int t = 1; t <= 4; ++t) CHECK(average_accuracy(c, t) == doctest::Approx(0.6));
  }
  SUBCASE("all-ones matrix averages to one for every t") {
    AccuracyMatrix ones;
    for (int t = 1; t <= 5; ++t)
      for (int i = 1; i <= t; ++i) ones.set(t, i, 1.0);
    for (int t = 1; t <= 5; ++t) CHECK(average_accuracy(ones, t) == 1.0);
  }
  SUBCASE("incomplete row raises") {
    AccuracyMatrix bad;
    bad.set(2, 2, 0.5);
    CHECK_THROWS_AS(average_accuracy(bad, 2), std::invalid_argument);
  }
}

TEST_CASE("forgetting is the diagonal-to-final drop") {
  AccuracyMatrix m;
  m.set(1, 1, 0.9);
  m.set(2, 1, 0.6);
  m.set(2, 2, 0.95);
  CHECK(forgetting(m, 1, 2) == doctest::Approx(0.3));
  CHECK(forgetting(m, 2, 2) == 0.0);
  SUBCASE("backward transfer is negative") {
    AccuracyMatrix b;
    b.set(1, 1, 0.5);
    b.set(2, 1, 0.8);
    b.set(2, 2, 0.9);
    CHECK(forgetting(b, 1, 2) == doctest::Approx(-0.3));
  }
  SUBCASE("missing entries raise") {
    CHECK_THROWS_AS(forgetting(m, 1, 3), std::invalid_argument);
  }
}

TEST_CASE("task accuracy modes") {
  ArchSpec spec;
  spec.kind = ArchSpec::Kind::mlp;
  spec.in_c = 3;
  spec.in_h = 8;
  spec.in_w = 8;
  spec.hidden = {16, 8};
  spec.head_width = 2;
  auto ds = shapes_dataset(3, 4, 16, 8);
  auto stream = make_split_stream(ds, 2, 2, 5);

  auto model = build_model<float>(spec, 9, false);
  attach_head(model, build_head<float>(spec, 9, 1, stream[0].classes, false));
  attach_head(model, build_head<float>(spec, 9, 2, stream[1].classes, false));

  SUBCASE("task_aware reads the matching head") {
    double acc = task_accuracy(model, stream[0], AccuracyMode::task_aware);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
  SUBCASE("agnostic_concat spans all global labels") {
    double acc = task_accuracy(model, stream[0], AccuracyMode::agnostic_concat);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
  SUBCASE("agnostic_avg rejects disjoint class sets, pointing to concat") {
    CHECK_THROWS_WITH_AS(task_accuracy(model, stream[0], AccuracyMode::agnostic_avg),
                         doctest::Contains("concat"), std::invalid_argument);
  }
  SUBCASE("agnostic_avg equals single head when all heads are identical") {
    Model<float> shared = build_model<float>(spec, 9, false);
    auto head = build_head<float>(spec, 31, 1, stream[0].classes, false);
    attach_head(shared, head);
    Head<float> same{2, head.params.clone(false), head.classes};
    attach_head(shared, same);
    Model<float> single = build_model<float>(spec, 9, false);
    attach_head(single, Head<float>{1, head.params.clone(false), head.classes});
    CHECK(task_accuracy(shared, stream[0], AccuracyMode::agnostic_avg) ==
          doctest::Approx(task_accuracy(single, stream[0], AccuracyMode::task_aware)));
  }
  SUBCASE("overlapping classes break concat") {
    Model<float> overlap = build_model<float>(spec, 9, false);
    attach_head(overlap, build_head<float>(spec, 9, 1, stream[0].classes, false));
    attach_head(overlap, build_head<float>(spec, 9, 2, stream[0].classes, false));
    CHECK_THROWS_AS(task_accuracy(overlap, stream[0], AccuracyMode::agnostic_concat),
                    std::invalid_argument);
  }
  SUBCASE("no heads raises") {
    Model<float> bare = build_model<float>(spec, 9, false);
    CHECK_THROWS_AS(task_accuracy(bare, stream[0], AccuracyMode::task_aware),
                    std::invalid_argument);
  }
}

TEST_CASE("cka properties") {
  RandomStream rng(77, "cka");
  auto x = random_features(10, 3, rng);
  auto y = random_features(10, 4, rng);

  SUBCASE("self similarity is 1") {
    CHECK(cka(x, x) == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("symmetry within 1e-8") {
    CHECK(std::fabs(cka(x, y) - cka(y, x)) < 1e-8);
  }
  SUBCASE("orthogonal invariance") {
    auto q = random_orthogonal(3, rng);
    auto xq = matmul_features(x, q);
    CHECK(cka(x, xq) == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("isotropic scaling invariance") {
    auto scaled = x;
    for (auto& v : scaled.data) v *= 17.5;
    CHECK(std::fabs(cka(x, y) - cka(scaled, y)) < 1e-6);
    CHECK(cka(x, scaled) == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("range [0,1]") {
    for (int trial = 0; trial < 20; ++trial) {
      auto a = random_features(8, 3, rng);
      auto b = random_features(8, 5, rng);
      double v = cka(a, b);
      CHECK(v >= -1e-9);
      CHECK(v <= 1.0 + 1e-6);
    }
  }
  SUBCASE("matches the direct-formula oracle on 50 random pairs") {
    for (int trial = 0; trial < 50; ++trial) {
      auto a = random_features(10, 3, rng, 2.0);
      auto b = random_features(10, 4, rng, 2.0);
      CHECK(std::fabs(cka(a, b) - cka_oracle(a, b)) < 1e-8);
    }
  }
  SUBCASE("zero variance raises") {
    FeatureMatrix z;
    z.n = 5;
    z.d = 2;
    z.data.assign(10, 3.0);  // constant columns center to zero
    CHECK_THROWS_AS(cka(z, y), std::invalid_argument);
  }
  SUBCASE("mismatched sample counts raise") {
    auto b = random_features(9, 3, rng);
    CHECK_THROWS_AS(cka(x, b), std::invalid_argument);
  }
}

TEST_CASE("task_aware equals the accuracy of head k extracted standalone") {
  ArchSpec spec;
  spec.kind = ArchSpec::Kind::mlp;
  spec.in_c = 3;
  spec.in_h = 8;
  spec.in_w = 8;
  spec.hidden = {16, 8};
  spec.head_width = 2;
  auto ds = shapes_dataset(3, 4, 16, 8);
  auto stream = make_split_stream(ds, 2, 2, 5);

  auto consolidated = build_model<float>(spec, 13, false);
  attach_head(consolidated, build_head<float>(spec, 13, 1, stream[0].classes, false));
  attach_head(consolidated, build_head<float>(spec, 14, 2, stream[1].classes, false));

  Model<float> standalone;
  standalone.arch = spec;
  standalone.backbone = consolidated.backbone.clone(false);
  attach_head(standalone, Head<float>{2, consolidated.heads[1].params.clone(false),
                                      consolidated.heads[1].classes});

  CHECK(task_accuracy(consolidated, stream[1], AccuracyMode::task_aware) ==
        doctest::Approx(task_accuracy(standalone, stream[1], AccuracyMode::task_aware)));
}

TEST_CASE("accuracy matrix csv rejects malformed input") {
  CHECK_THROWS_AS(AccuracyMatrix::from_csv("nope\n1,1,0.5\n"), std::runtime_error);
  CHECK_THROWS_AS(AccuracyMatrix::from_csv("t,i,accuracy\nx,y,z\n"), std::runtime_error);
}

TEST_CASE("cka report csv shape") {
  std::vector<CKARecord> records{{"fc1", 0, 1.0}, {"fc1", 1, 0.75}};
  CHECK(cka_report_csv(records) == "layer,model_index,cka\nfc1,0,1.000000\nfc1,1,0.750000\n");
}
