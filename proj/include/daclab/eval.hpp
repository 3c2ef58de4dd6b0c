#pragma once

#include <string>
#include <vector>

#include "daclab/data.hpp"
#include "daclab/model.hpp"

namespace daclab {

// Lower-triangular A[t][i]: accuracy on task i after consolidating task t.
// 1-based indices.
class AccuracyMatrix {
 public:
  void set(int t, int i, double accuracy);
  double at(int t, int i) const;
  bool has(int t, int i) const;
  int tasks() const { return int(rows_.size()); }

  // CSV with header "t,i,accuracy", one row per defined entry, 6 decimals.
  std::string to_csv() const;
  static AccuracyMatrix from_csv(const std::string& csv);

 private:
  std::vector<std::vector<double>> rows_;  // rows_[t-1] has t entries
};

// Mean of row t over tasks 1..t. The row must be complete.
double average_accuracy(const AccuracyMatrix& a, int t);

// A[i][i] - A[T][i]; negative values mean backward transfer.
double forgetting(const AccuracyMatrix& a, int i, int T);

enum class AccuracyMode { task_aware, agnostic_avg, agnostic_concat };

// Fraction of test samples whose prediction matches the label. task_aware
// reads the matching head; agnostic_avg averages per-head softmax over a
// shared class set; agnostic_concat concatenates disjoint heads.
double task_accuracy(const Model<float>& model, const Experience& exp, AccuracyMode mode);

// Argmax agreement between a consolidated head and its teacher on a test set.
double head_agreement(const Model<float>& model, int task_id, const Model<float>& teacher,
                      const Experience& exp);

struct ProbeConfig {
  std::size_t max_iterations = 4000;
  double learning_rate = 0.5;
  double loss_tolerance = 1e-6;
};

// Freeze the model, fit a multinomial linear classifier on tap features over
// the union of all experiences' train sets, report accuracy on the test
// union. Full-batch gradient descent to near-convergence; deterministic.
double linear_probe(const Model<float>& model, const std::string& tap,
                    const std::vector<Experience>& experiences, const ProbeConfig& cfg,
                    std::uint64_t seed);

struct FeatureMatrix {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> data;  // row-major n x d

  double& at(std::size_t r, std::size_t c) { return data[r * d + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * d + c]; }
};

// Tap activations of a model on a set of inputs, as doubles.
FeatureMatrix extract_features(const Model<float>& model, const std::string& tap,
                               const LabeledSet& set);

// Linear centered kernel alignment:
//   ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F * ||Yc^T Yc||_F)
// with column-centered Xc, Yc. Symmetric, in [0,1], invariant to orthogonal
// transforms and isotropic scaling. Zero-variance input is an error.
double cka(const FeatureMatrix& x, const FeatureMatrix& y);

struct CKARecord {
  std::string layer;
  int model_index = 0;
  double value = 0;
};

// Per-layer CKA between the reference SC model and every model in the list,
// computed on the experience's test inputs.
std::vector<CKARecord> cka_stream_report(const std::vector<Model<float>>& sc_models,
                                         std::size_t reference_index, const Experience& exp,
                                         const std::vector<std::string>& taps);

// CSV with header "layer,model_index,cka".
std::string cka_report_csv(const std::vector<CKARecord>& records);

}  // namespace daclab
