#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "daclab/augment.hpp"
#include "daclab/consolidation.hpp"
#include "daclab/data.hpp"
#include "daclab/eval.hpp"
#include "daclab/model.hpp"

namespace daclab {

// Initialization message, consolidated model -> SCD, sent once before the
// device trains.
struct InitMessage {
  std::vector<std::uint8_t> payload;  // serialized model snapshot
  std::string arch_hash;
  int step = 0;
};

// Trained-model message, SCD -> consolidated model, sent once after training.
struct SCMessage {
  std::vector<std::uint8_t> payload;  // serialized single-head model
  int task_id = 0;
  std::vector<int> classes;
};

struct AdaptConfig {
  std::size_t iterations = 2000;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer{OptimizerKind::adam, 1e-3, 0.9, 0.999, 1e-8};
  // global L2 gradient clip; high-rate finetuning from a warm start needs the
  // first few steps bounded or live units die. 0 disables.
  double grad_clip_norm = 1.0;

  void validate() const {
    if (iterations < 1) throw std::invalid_argument("adapt: iterations must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("adapt: batch size must be >= 1");
    if (grad_clip_norm < 0) throw std::invalid_argument("adapt: grad clip must be >= 0");
  }
};

struct AdaptReport {
  double train_accuracy = 0;
  double test_accuracy = 0;
};

struct MessageRecord {
  int step = 0;
  std::string direction;  // "init" | "sc"
  std::size_t bytes = 0;
  std::string sha256;
};
using MessageLog = std::vector<MessageRecord>;

std::string message_log_json(const MessageLog& log);

// Counts teacher parameter sets resident during consolidation. The DCL memory
// discipline allows at most two (previous consolidated + current SC).
class TeacherResidency {
 public:
  class Lease {
   public:
    Lease();
    ~Lease();
    Lease(const Lease&) = delete;
    Lease& operator=(const Lease&) = delete;
  };
  static int current();
  static int peak();
  static void reset_peak();

 private:
  friend class Lease;
  static std::atomic<int> count_;
  static std::atomic<int> peak_;
};

InitMessage make_init_message(const Model<float>& model, int step);
SCMessage make_sc_message(const SCModel<float>& sc);

// Knowledge adaptation: finetune the received initialization on one task's
// data under plain cross-entropy. Deterministic per (init, experience, seed).
SCModel<float> adapt(const InitMessage& init, const Experience& exp, const AdaptConfig& cfg,
                     std::uint64_t seed, AdaptReport* report = nullptr);

struct ConsolidationReport {
  std::vector<double> loss_curve;  // total loss per logged interval
  double initial_loss = 0;
  double final_loss = 0;
};

// Knowledge consolidation (DAC): distill the previous consolidated model and
// the incoming SC model into a fresh student over augmented OOD batches.
// Holds exactly two teacher parameter sets; projections are created fresh at
// identity and discarded afterwards.
Model<float> consolidate(Model<float> prev_cl, const SCMessage& sc_msg, const OODSource& source,
                         const AugConfig& aug, const ConsolidationConfig& cfg, std::uint64_t seed,
                         ConsolidationReport* report = nullptr);

struct SchemeConfig {
  ArchSpec arch;
  AdaptConfig adapt;
  ConsolidationConfig consolidation;
  OODSource source;
  AugConfig aug;
};

struct RunArtifacts {
  Model<float> final_model;
  AccuracyMatrix matrix;
  std::vector<Model<float>> cl_snapshots;  // consolidated model after each step
  std::vector<Model<float>> sc_models;     // SC model per task
  MessageLog log;
  std::vector<AdaptReport> adapt_reports;
  std::vector<ConsolidationReport> consolidation_reports;
};

// Sequential scheme: each device starts from the latest consolidated
// parameters. The init payload is asserted byte-identical to the previous
// step's consolidated snapshot.
RunArtifacts run_sequential(const std::vector<Experience>& stream, const SchemeConfig& cfg,
                            std::uint64_t seed);

// Independent scheme: every device adapts from the same random
// initialization f0; consolidations are applied in ascending task order.
RunArtifacts run_independent(const std::vector<Experience>& stream, const SchemeConfig& cfg,
                             std::uint64_t seed, bool parallel_adapt = false);

// Lower anchor: one multi-head model finetuned task by task on raw data with
// no consolidation, exhibiting catastrophic forgetting.
RunArtifacts naive_finetune_baseline(const std::vector<Experience>& stream,
                                     const SchemeConfig& cfg, std::uint64_t seed);

}  // namespace daclab
