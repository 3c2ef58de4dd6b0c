#include "daclab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "daclab/util.hpp"

namespace daclab {

void AccuracyMatrix::set(int t, int i, double accuracy) {
  if (t < 1 || i < 1 || i > t) throw std::invalid_argument("accuracy matrix: need 1 <= i <= t");
  if (accuracy < 0.0 || accuracy > 1.0)
    throw std::invalid_argument("accuracy matrix: accuracy outside [0,1]");
  if (int(rows_.size()) < t) rows_.resize(t);
  auto& row = rows_[t - 1];
  if (int(row.size()) < t) row.resize(t, -1.0);
  row[i - 1] = accuracy;
}

double AccuracyMatrix::at(int t, int i) const {
  if (!has(t, i))
    throw std::invalid_argument("accuracy matrix: entry (" + std::to_string(t) + "," +
                                std::to_string(i) + ") is undefined");
  return rows_[t - 1][i - 1];
}

bool AccuracyMatrix::has(int t, int i) const {
  return t >= 1 && i >= 1 && i <= t && t <= int(rows_.size()) &&
         i <= int(rows_[t - 1].size()) && rows_[t - 1][i - 1] >= 0.0;
}

std::string AccuracyMatrix::to_csv() const {
  std::string out = "t,i,accuracy\n";
  for (int t = 1; t <= tasks(); ++t)
    for (int i = 1; i <= t; ++i)
      if (has(t, i))
        out += std::to_string(t) + "," + std::to_string(i) + "," + format_fixed(at(t, i)) + "\n";
  return out;
}

AccuracyMatrix AccuracyMatrix::from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "t,i,accuracy")
    throw std::runtime_error("accuracy matrix csv: bad header");
  AccuracyMatrix m;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int t = 0, i = 0;
    double v = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%lf", &t, &i, &v) != 3)
      throw std::runtime_error("accuracy matrix csv: bad row '" + line + "'");
    m.set(t, i, v);
  }
  return m;
}

double average_accuracy(const AccuracyMatrix& a, int t) {
  if (t < 1) throw std::invalid_argument("average_accuracy: t must be >= 1");
  double acc = 0;
  for (int i = 1; i <= t; ++i) {
    if (!a.has(t, i))
      throw std::invalid_argument("average_accuracy: row " + std::to_string(t) +
                                  " is incomplete at task " + std::to_string(i));
    acc += a.at(t, i);
  }
  return acc / double(t);
}

double forgetting(const AccuracyMatrix& a, int i, int T) {
  if (i > T) throw std::invalid_argument("forgetting: need i <= T");
  return a.at(i, i) - a.at(T, i);
}

namespace {

constexpr std::size_t kEvalChunk = 256;

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace

double task_accuracy(const Model<float>& model, const Experience& exp, AccuracyMode mode) {
  if (model.heads.empty()) throw std::invalid_argument("task_accuracy: model has no heads");
  if (exp.test.size() == 0) throw std::invalid_argument("task_accuracy: empty test set");

  if (mode == AccuracyMode::agnostic_avg) {
    for (const auto& head : model.heads)
      if (head.classes != model.heads[0].classes)
        throw std::invalid_argument(
            "task_accuracy: agnostic_avg needs a shared class set across heads; "
            "use agnostic_concat for disjoint heads");
  }
  if (mode == AccuracyMode::agnostic_concat) {
    std::set<int> seen;
    for (const auto& head : model.heads)
      for (int c : head.classes) {
        if (seen.count(c))
          throw std::invalid_argument(
              "task_accuracy: agnostic_concat needs disjoint class sets across heads");
        seen.insert(c);
      }
  }

  std::size_t correct = 0;
  auto all = iota_indices(exp.test.size());
  for (std::size_t start = 0; start < all.size(); start += kEvalChunk) {
    std::vector<std::size_t> chunk(
        all.begin() + start, all.begin() + std::min(all.size(), start + kEvalChunk));
    auto x = batch_tensor(exp.test, chunk, model.arch.in_c, model.arch.in_h, model.arch.in_w);

    if (mode == AccuracyMode::task_aware) {
      auto out = forward(model, x, HeadSelect::Task(exp.task_id), {});
      const auto& head = *model.find_head(exp.task_id);
      const auto& logits = out.logits[0].second;
      std::size_t classes = logits.shape()[1];
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        const float* row = logits.values().data() + b * classes;
        std::size_t arg = std::max_element(row, row + classes) - row;
        if (head.classes[arg] == exp.test.y[chunk[b]]) ++correct;
      }
    } else if (mode == AccuracyMode::agnostic_avg) {
      auto out = forward(model, x, HeadSelect::All(), {});
      std::size_t classes = model.heads[0].classes.size();
      std::vector<double> probs(chunk.size() * classes, 0.0);
      for (const auto& [id, logits] : out.logits) {
        for (std::size_t b = 0; b < chunk.size(); ++b) {
          const float* row = logits.values().data() + b * classes;
          float mx = *std::max_element(row, row + classes);
          double z = 0;
          for (std::size_t c = 0; c < classes; ++c) z += std::exp(double(row[c] - mx));
          for (std::size_t c = 0; c < classes; ++c)
            probs[b * classes + c] += std::exp(double(row[c] - mx)) / z;
        }
      }
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        const double* row = probs.data() + b * classes;
        std::size_t arg = std::max_element(row, row + classes) - row;
        if (model.heads[0].classes[arg] == exp.test.y[chunk[b]]) ++correct;
      }
    } else {
      auto out = forward(model, x, HeadSelect::All(), {});
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        float best = -std::numeric_limits<float>::infinity();
        int best_class = -1;
        for (std::size_t h = 0; h < model.heads.size(); ++h) {
          const auto& logits = out.logits[h].second;
          std::size_t classes = logits.shape()[1];
          const float* row = logits.values().data() + b * classes;
          for (std::size_t c = 0; c < classes; ++c)
            if (row[c] > best) {
              best = row[c];
              best_class = model.heads[h].classes[c];
            }
        }
        if (best_class == exp.test.y[chunk[b]]) ++correct;
      }
    }
  }
  return double(correct) / double(exp.test.size());
}

double head_agreement(const Model<float>& model, int task_id, const Model<float>& teacher,
                      const Experience& exp) {
  if (exp.test.size() == 0) throw std::invalid_argument("head_agreement: empty test set");
  std::size_t agree = 0;
  auto all = iota_indices(exp.test.size());
  for (std::size_t start = 0; start < all.size(); start += kEvalChunk) {
    std::vector<std::size_t> chunk(
        all.begin() + start, all.begin() + std::min(all.size(), start + kEvalChunk));
    auto x = batch_tensor(exp.test, chunk, model.arch.in_c, model.arch.in_h, model.arch.in_w);
    auto a = forward(model, x, HeadSelect::Task(task_id), {});
    auto b = forward(teacher, x, HeadSelect::Task(task_id), {});
    const auto& la = a.logits[0].second;
    const auto& lb = b.logits[0].second;
    std::size_t classes = la.shape()[1];
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const float* ra = la.values().data() + r * classes;
      const float* rb = lb.values().data() + r * classes;
      std::size_t arga = std::max_element(ra, ra + classes) - ra;
      std::size_t argb = std::max_element(rb, rb + classes) - rb;
      if (arga == argb) ++agree;
    }
  }
  return double(agree) / double(exp.test.size());
}

FeatureMatrix extract_features(const Model<float>& model, const std::string& tap,
                               const LabeledSet& set) {
  if (set.size() == 0) throw std::invalid_argument("extract_features: empty set");
  FeatureMatrix out;
  out.n = set.size();
  auto all = iota_indices(set.size());
  for (std::size_t start = 0; start < all.size(); start += kEvalChunk) {
    std::vector<std::size_t> chunk(
        all.begin() + start, all.begin() + std::min(all.size(), start + kEvalChunk));
    auto x = batch_tensor(set, chunk, model.arch.in_c, model.arch.in_h, model.arch.in_w);
    auto fwd = forward(model, x, HeadSelect::All(), {tap});
    const auto& feats = fwd.taps.at(tap);
    if (out.d == 0) {
      out.d = feats.shape()[1];
      out.data.reserve(out.n * out.d);
    }
    for (float v : feats.values()) out.data.push_back(double(v));
  }
  return out;
}

double linear_probe(const Model<float>& model, const std::string& tap,
                    const std::vector<Experience>& experiences, const ProbeConfig& cfg,
                    std::uint64_t seed) {
  (void)seed;  // zero-init full-batch descent is deterministic on its own
  if (experiences.empty()) throw std::invalid_argument("linear_probe: no experiences");

  LabeledSet train_union, test_union;
  for (const auto& exp : experiences) {
    for (std::size_t i = 0; i < exp.train.size(); ++i) {
      train_union.x.push_back(exp.train.x[i]);
      train_union.y.push_back(exp.train.y[i]);
    }
    for (std::size_t i = 0; i < exp.test.size(); ++i) {
      test_union.x.push_back(exp.test.x[i]);
      test_union.y.push_back(exp.test.y[i]);
    }
  }
  if (train_union.size() == 0) throw std::invalid_argument("linear_probe: empty feature set");

  auto train_feats = extract_features(model, tap, train_union);
  auto test_feats = extract_features(model, tap, test_union);
  const std::size_t n = train_feats.n, d = train_feats.d;

  // global label space
  std::vector<int> classes;
  for (int y : train_union.y)
    if (std::find(classes.begin(), classes.end(), y) == classes.end()) classes.push_back(y);
  std::sort(classes.begin(), classes.end());
  const std::size_t C = classes.size();
  auto class_index = [&](int y) {
    return std::size_t(std::lower_bound(classes.begin(), classes.end(), y) - classes.begin());
  };

  // standardize features for a well-conditioned descent
  std::vector<double> mu(d, 0.0), sigma(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) mu[c] += train_feats.at(r, c);
  for (auto& v : mu) v /= double(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      double x = train_feats.at(r, c) - mu[c];
      sigma[c] += x * x;
    }
  for (auto& v : sigma) v = std::sqrt(v / double(n)) + 1e-8;
  auto standardize = [&](FeatureMatrix& f) {
    for (std::size_t r = 0; r < f.n; ++r)
      for (std::size_t c = 0; c < d; ++c) f.at(r, c) = (f.at(r, c) - mu[c]) / sigma[c];
  };
  standardize(train_feats);
  standardize(test_feats);

  std::vector<double> w(C * d, 0.0), b(C, 0.0);
  std::vector<double> logits(n * C);
  std::vector<double> gw(C * d), gb(C);
  double prev_loss = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    double loss = 0;
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < C; ++c) {
        double z = b[c];
        for (std::size_t k = 0; k < d; ++k) z += w[c * d + k] * train_feats.at(r, k);
        logits[r * C + c] = z;
        mx = std::max(mx, z);
      }
      double zsum = 0;
      for (std::size_t c = 0; c < C; ++c) zsum += std::exp(logits[r * C + c] - mx);
      std::size_t target = class_index(train_union.y[r]);
      loss -= logits[r * C + target] - mx - std::log(zsum);
      for (std::size_t c = 0; c < C; ++c) {
        double p = std::exp(logits[r * C + c] - mx) / zsum;
        double g = (p - (c == target ? 1.0 : 0.0)) / double(n);
        gb[c] += g;
        for (std::size_t k = 0; k < d; ++k) gw[c * d + k] += g * train_feats.at(r, k);
      }
    }
    loss /= double(n);
    for (std::size_t i2 = 0; i2 < w.size(); ++i2) w[i2] -= cfg.learning_rate * gw[i2];
    for (std::size_t c = 0; c < C; ++c) b[c] -= cfg.learning_rate * gb[c];
    if (std::fabs(prev_loss - loss) < cfg.loss_tolerance) break;
    prev_loss = loss;
  }

  std::size_t correct = 0;
  for (std::size_t r = 0; r < test_feats.n; ++r) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < C; ++c) {
      double z = b[c];
      for (std::size_t k = 0; k < d; ++k) z += w[c * d + k] * test_feats.at(r, k);
      if (z > best) {
        best = z;
        arg = c;
      }
    }
    if (classes[arg] == test_union.y[r]) ++correct;
  }
  return double(correct) / double(test_feats.n);
}

double cka(const FeatureMatrix& x, const FeatureMatrix& y) {
  if (x.n != y.n) throw std::invalid_argument("cka: sample counts differ");
  if (x.n < 2) throw std::invalid_argument("cka: need at least 2 samples");

  auto center = [](const FeatureMatrix& f) {
    FeatureMatrix out = f;
    for (std::size_t c = 0; c < f.d; ++c) {
      double mu = 0;
      for (std::size_t r = 0; r < f.n; ++r) mu += f.at(r, c);
      mu /= double(f.n);
      for (std::size_t r = 0; r < f.n; ++r) out.at(r, c) -= mu;
    }
    return out;
  };
  FeatureMatrix xc = center(x), yc = center(y);

  // ||Yc^T Xc||_F^2
  double cross = 0;
  for (std::size_t a = 0; a < yc.d; ++a)
    for (std::size_t b = 0; b < xc.d; ++b) {
      double acc = 0;
      for (std::size_t r = 0; r < x.n; ++r) acc += yc.at(r, a) * xc.at(r, b);
      cross += acc * acc;
    }
  auto self_norm = [](const FeatureMatrix& f) {
    double norm2 = 0;
    for (std::size_t a = 0; a < f.d; ++a)
      for (std::size_t b = 0; b < f.d; ++b) {
        double acc = 0;
        for (std::size_t r = 0; r < f.n; ++r) acc += f.at(r, a) * f.at(r, b);
        norm2 += acc * acc;
      }
    return std::sqrt(norm2);
  };
  double nx = self_norm(xc), ny = self_norm(yc);
  if (nx == 0.0 || ny == 0.0)
    throw std::invalid_argument("cka: zero-variance input has no alignment");
  return cross / (nx * ny);
}

std::vector<CKARecord> cka_stream_report(const std::vector<Model<float>>& sc_models,
                                         std::size_t reference_index, const Experience& exp,
                                         const std::vector<std::string>& taps) {
  if (sc_models.size() < 2) throw std::invalid_argument("cka report: need at least 2 models");
  if (reference_index >= sc_models.size())
    throw std::invalid_argument("cka report: reference index out of range");
  auto ref_hash = arch_hash_hex(sc_models[reference_index].arch);
  for (const auto& m : sc_models)
    if (arch_hash_hex(m.arch) != ref_hash)
      throw std::invalid_argument("cka report: architecture mismatch across models");

  std::vector<CKARecord> records;
  for (const auto& tap : taps) {
    auto ref_feats = extract_features(sc_models[reference_index], tap, exp.test);
    for (std::size_t m = 0; m < sc_models.size(); ++m) {
      auto feats = extract_features(sc_models[m], tap, exp.test);
      records.push_back({tap, int(m), cka(ref_feats, feats)});
    }
  }
  return records;
}

std::string cka_report_csv(const std::vector<CKARecord>& records) {
  std::string out = "layer,model_index,cka\n";
  for (const auto& r : records)
    out += r.layer + "," + std::to_string(r.model_index) + "," + format_fixed(r.value) + "\n";
  return out;
}

}  // namespace daclab
