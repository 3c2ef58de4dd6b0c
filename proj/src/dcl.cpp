#include "daclab/dcl.hpp"

#include <cmath>
#include <json.hpp>
#include <stdexcept>
#include <thread>

#include "daclab/serialize.hpp"
#include "daclab/util.hpp"

namespace daclab {

namespace {

std::uint64_t derive_seed(std::uint64_t root, const std::string& label) {
  return fnv1a64(label, root ^ 0x9e3779b97f4a7c15ull);
}

std::vector<std::uint8_t> backbone_bytes(const Model<float>& model) {
  Model<float> bare;
  bare.arch = model.arch;
  bare.backbone = model.backbone;
  return serialize_model(bare);
}

void clip_gradients(ParameterSet<float>& params, double max_norm) {
  double norm2 = 0;
  for (auto& [name, t] : params) {
    const auto& g = t.node()->grad;
    for (float v : g) norm2 += double(v) * v;
  }
  double norm = std::sqrt(norm2);
  if (norm <= max_norm || norm == 0) return;
  float scale = float(max_norm / norm);
  for (auto& [name, t] : params)
    for (auto& v : t.node()->grad) v *= scale;
}

double set_accuracy(const Model<float>& model, int task_id, const LabeledSet& set,
                    const std::vector<int>& classes) {
  if (set.size() == 0) return 0.0;
  std::size_t correct = 0;
  const std::size_t chunk_size = 256;
  for (std::size_t start = 0; start < set.size(); start += chunk_size) {
    std::vector<std::size_t> chunk;
    for (std::size_t i = start; i < std::min(set.size(), start + chunk_size); ++i)
      chunk.push_back(i);
    auto x = batch_tensor(set, chunk, model.arch.in_c, model.arch.in_h, model.arch.in_w);
    auto out = forward(model, x, HeadSelect::Task(task_id), {});
    const auto& logits = out.logits[0].second;
    std::size_t width = logits.shape()[1];
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const float* row = logits.values().data() + b * width;
      std::size_t arg = std::max_element(row, row + width) - row;
      if (classes[arg] == set.y[chunk[b]]) ++correct;
    }
  }
  return double(correct) / double(set.size());
}

// Cross-entropy finetuning of one model head on one experience.
void train_on_experience(Model<float>& model, const Experience& exp, const AdaptConfig& cfg,
                         std::uint64_t seed) {
  ParameterSet<float> trainable;
  for (auto& [name, t] : model.backbone) trainable.insert("backbone/" + name, t);
  Head<float>* head = model.find_head(exp.task_id);
  if (!head) throw std::invalid_argument("train: no head for task " + std::to_string(exp.task_id));
  for (auto& [name, t] : head->params) trainable.insert("head/" + name, t);

  Optimizer<float> opt(cfg.optimizer);
  RandomStream batch_rng(seed, "adapt/batches");
  const std::size_t n = exp.train.size();
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<std::size_t> idx(std::min(cfg.batch_size, n));
    for (auto& v : idx) v = batch_rng.uniform_int(n);
    auto x = batch_tensor(exp.train, idx, model.arch.in_c, model.arch.in_h, model.arch.in_w);
    auto labels = local_labels(exp.train, idx, exp.classes);
    auto out = forward(model, x, HeadSelect::Task(exp.task_id), {});
    auto loss = cross_entropy(out.logits[0].second, labels);
    loss.backward();
    if (cfg.grad_clip_norm > 0) clip_gradients(trainable, cfg.grad_clip_norm);
    opt.step(trainable);
    trainable.zero_grad();
  }
}

}  // namespace

std::string message_log_json(const MessageLog& log) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& rec : log) {
    arr.push_back({{"step", rec.step},
                   {"direction", rec.direction},
                   {"bytes", rec.bytes},
                   {"sha256", rec.sha256}});
  }
  return arr.dump(2) + "\n";
}

std::atomic<int> TeacherResidency::count_{0};
std::atomic<int> TeacherResidency::peak_{0};

TeacherResidency::Lease::Lease() {
  int now = ++count_;
  int prev = peak_.load();
  while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
  }
  if (now > 2)
    throw std::logic_error("teacher residency exceeded two models during consolidation");
}

TeacherResidency::Lease::~Lease() { --count_; }

int TeacherResidency::current() { return count_.load(); }
int TeacherResidency::peak() { return peak_.load(); }
void TeacherResidency::reset_peak() { peak_.store(count_.load()); }

InitMessage make_init_message(const Model<float>& model, int step) {
  InitMessage msg;
  msg.payload = serialize_model(model);
  msg.arch_hash = arch_hash_hex(model.arch);
  msg.step = step;
  return msg;
}

SCMessage make_sc_message(const SCModel<float>& sc) {
  SCMessage msg;
  msg.payload = serialize_model(sc.model);
  msg.task_id = sc.task_id();
  msg.classes = sc.classes();
  return msg;
}

namespace {

// Fresh task heads start at zero so the first finetuning steps cannot blow
// up a warm backbone (logits start at zero regardless of the received
// initialization, keeping early gradients bounded).
Head<float> zero_head(const ArchSpec& arch, int task_id, std::vector<int> classes) {
  std::size_t feat = tap_feature_width(arch, penultimate_tap(arch));
  Head<float> head;
  head.task_id = task_id;
  head.classes = std::move(classes);
  head.params.insert("w", Tensor<float>::zeros({std::size_t(arch.head_width), feat}, true));
  head.params.insert("b", Tensor<float>::zeros({std::size_t(arch.head_width)}, true));
  return head;
}

}  // namespace

SCModel<float> adapt(const InitMessage& init, const Experience& exp, const AdaptConfig& cfg,
                     std::uint64_t seed, AdaptReport* report) {
  cfg.validate();
  Model<float> received = deserialize_model(init.payload);
  if (arch_hash_hex(received.arch) != init.arch_hash)
    throw std::runtime_error("adapt: init message hash does not match payload");

  Model<float> local;
  local.arch = received.arch;
  local.backbone = received.backbone.clone(true);
  attach_head(local, zero_head(local.arch, exp.task_id, exp.classes));

  train_on_experience(local, exp, cfg, seed);

  if (report) {
    report->train_accuracy = set_accuracy(local, exp.task_id, exp.train, exp.classes);
    report->test_accuracy = set_accuracy(local, exp.task_id, exp.test, exp.classes);
  }
  local.set_requires_grad(false);
  return SCModel<float>(local);
}

Model<float> consolidate(Model<float> prev_cl, const SCMessage& sc_msg, const OODSource& source,
                         const AugConfig& aug, const ConsolidationConfig& cfg, std::uint64_t seed,
                         ConsolidationReport* report) {
  cfg.validate();
  if (prev_cl.find_head(sc_msg.task_id))
    throw std::invalid_argument("consolidate: task " + std::to_string(sc_msg.task_id) +
                                " already present in the consolidated model");

  // Exactly two teachers resident from here on.
  TeacherResidency::Lease prev_lease;
  Model<float> sc_model = deserialize_model(sc_msg.payload);
  TeacherResidency::Lease sc_lease;
  if (arch_hash_hex(sc_model.arch) != arch_hash_hex(prev_cl.arch))
    throw std::runtime_error("consolidate: architecture hash mismatch between teachers: " +
                             arch_hash_hex(prev_cl.arch) + " vs " + arch_hash_hex(sc_model.arch));
  if (sc_model.heads.size() != 1)
    throw std::invalid_argument("consolidate: sc message must carry exactly one head");

  const int i = int(prev_cl.heads.size()) + 1;

  // student: backbone per cfg.student_init, previous heads copied from the
  // previous model, new head copied from the incoming SC head
  Model<float> student;
  student.arch = prev_cl.arch;
  switch (cfg.student_init) {
    case ConsolidationConfig::StudentInit::prev_cl:
      student.backbone = prev_cl.backbone.clone(true);
      break;
    case ConsolidationConfig::StudentInit::sc:
      student.backbone = sc_model.backbone.clone(true);
      break;
    case ConsolidationConfig::StudentInit::random:
      student.backbone = build_backbone<float>(student.arch, derive_seed(seed, "student_init"));
      break;
  }
  for (const auto& head : prev_cl.heads)
    student.heads.push_back({head.task_id, head.params.clone(true), head.classes});
  attach_head(student, Head<float>{sc_msg.task_id, sc_model.heads[0].params.clone(true),
                                   sc_model.heads[0].classes});

  std::vector<std::string> taps =
      cfg.tap_layers.empty() ? effective_taps(student.arch) : cfg.tap_layers;
  const bool train_projections = cfg.lambda > 0;
  auto projections = consolidation_projections<float>(student.arch, taps, train_projections);

  ParameterSet<float> trainable;
  for (auto& [name, t] : student.backbone) trainable.insert("backbone/" + name, t);
  for (auto& head : student.heads)
    for (auto& [name, t] : head.params)
      trainable.insert("head" + std::to_string(head.task_id) + "/" + name, t);
  if (train_projections) {
    for (auto& [tap, pair] : projections) {
      trainable.insert("proj/" + tap + "/w_sc", pair.w_sc);
      // the previous-model projection only sees gradients from step 2 on
      if (i > 1) trainable.insert("proj/" + tap + "/w_cl", pair.w_cl);
    }
  }

  OODSampler sampler(source, aug, RandomStream(seed, "consolidation/batches"));
  Optimizer<float> opt(cfg.optimizer);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    auto batch = sampler.next_batch(cfg.batch_size);
    auto parts = consolidation_batch_loss(student, sc_model, prev_cl, batch, cfg, projections);
    if (report) {
      double v = double(parts.total.item());
      if (it == 0) report->initial_loss = v;
      if (it % 50 == 0 || it + 1 == cfg.iterations) report->loss_curve.push_back(v);
      if (it + 1 == cfg.iterations) report->final_loss = v;
    }
    parts.total.backward();
    opt.step(trainable);
    trainable.zero_grad();
  }

  student.set_requires_grad(false);
  if (int(student.heads.size()) != i)
    throw std::logic_error("consolidate: head count invariant violated");
  return student;  // projections go out of scope here, discarded
}

namespace {

void evaluate_row(AccuracyMatrix& matrix, const Model<float>& model,
                  const std::vector<Experience>& stream, int t) {
  for (int k = 1; k <= t; ++k)
    matrix.set(t, k, task_accuracy(model, stream[std::size_t(k) - 1], AccuracyMode::task_aware));
}

void check_stream(const std::vector<Experience>& stream) {
  if (stream.empty()) throw std::invalid_argument("run: empty stream");
}

// The rehearsal-free real-data source draws from the task being consolidated.
OODSource bind_source(const OODSource& source, const Experience& exp) {
  if (source.kind == OODSource::Kind::real_data && !source.experience) {
    OODSource bound = source;
    bound.experience = std::make_shared<Experience>(exp);
    return bound;
  }
  return source;
}

}  // namespace

RunArtifacts run_sequential(const std::vector<Experience>& stream, const SchemeConfig& cfg,
                            std::uint64_t seed) {
  check_stream(stream);
  validate_arch(cfg.arch);

  RunArtifacts art;
  Model<float> current = build_model<float>(cfg.arch, derive_seed(seed, "f0"), false);
  std::vector<std::uint8_t> prev_backbone = backbone_bytes(current);

  for (std::size_t idx = 0; idx < stream.size(); ++idx) {
    const Experience& exp = stream[idx];
    const int step = int(idx) + 1;

    InitMessage init = make_init_message(current, step);
    art.log.push_back({step, "init", init.payload.size(), sha256_hex(init.payload)});

    // sequential hand-off: the init backbone must be byte-identical to the
    // consolidated backbone of the previous step
    auto received_backbone = backbone_bytes(deserialize_model(init.payload));
    if (received_backbone != prev_backbone)
      throw std::logic_error("sequential hand-off: init backbone diverged from step " +
                             std::to_string(step - 1));

    AdaptReport areport;
    SCModel<float> sc =
        adapt(init, exp, cfg.adapt, derive_seed(seed, "adapt/" + std::to_string(step)), &areport);
    art.adapt_reports.push_back(areport);
    art.sc_models.push_back(sc.model);

    SCMessage sc_msg = make_sc_message(sc);
    art.log.push_back({step, "sc", sc_msg.payload.size(), sha256_hex(sc_msg.payload)});

    ConsolidationReport creport;
    current = consolidate(std::move(current), sc_msg, bind_source(cfg.source, exp), cfg.aug,
                          cfg.consolidation,
                          derive_seed(seed, "consolidate/" + std::to_string(step)), &creport);
    art.consolidation_reports.push_back(creport);

    if (int(current.heads.size()) != step)
      throw std::logic_error("sequential run: head count != consolidated tasks");
    prev_backbone = backbone_bytes(current);
    art.cl_snapshots.push_back(current);
    evaluate_row(art.matrix, current, stream, step);
  }
  art.final_model = current;
  return art;
}

RunArtifacts run_independent(const std::vector<Experience>& stream, const SchemeConfig& cfg,
                             std::uint64_t seed, bool parallel_adapt) {
  check_stream(stream);
  validate_arch(cfg.arch);

  RunArtifacts art;
  Model<float> f0 = build_model<float>(cfg.arch, derive_seed(seed, "f0"), false);

  // every device receives the identical initialization
  std::vector<InitMessage> inits;
  for (std::size_t idx = 0; idx < stream.size(); ++idx)
    inits.push_back(make_init_message(f0, int(idx) + 1));
  for (const auto& msg : inits)
    if (msg.payload != inits[0].payload)
      throw std::logic_error("independent run: init messages are not identical");

  std::vector<SCModel<float>> sc_models(stream.size());
  std::vector<AdaptReport> reports(stream.size());
  auto adapt_one = [&](std::size_t idx) {
    sc_models[idx] = adapt(inits[idx], stream[idx], cfg.adapt,
                           derive_seed(seed, "adapt/" + std::to_string(idx + 1)), &reports[idx]);
  };
  if (parallel_adapt) {
    const std::size_t workers = std::min<std::size_t>(2, stream.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t idx = next.fetch_add(1);
          if (idx >= stream.size()) return;
          adapt_one(idx);
        }
      });
    for (auto& t : pool) t.join();
  } else {
    for (std::size_t idx = 0; idx < stream.size(); ++idx) adapt_one(idx);
  }

  for (std::size_t idx = 0; idx < stream.size(); ++idx) {
    const int step = int(idx) + 1;
    art.log.push_back({step, "init", inits[idx].payload.size(), sha256_hex(inits[idx].payload)});
    art.adapt_reports.push_back(reports[idx]);
    art.sc_models.push_back(sc_models[idx].model);
  }

  // consolidations applied in ascending task order
  Model<float> current = f0;
  for (std::size_t idx = 0; idx < stream.size(); ++idx) {
    const int step = int(idx) + 1;
    SCMessage sc_msg = make_sc_message(sc_models[idx]);
    art.log.push_back({step, "sc", sc_msg.payload.size(), sha256_hex(sc_msg.payload)});
    ConsolidationReport creport;
    current = consolidate(std::move(current), sc_msg, bind_source(cfg.source, stream[idx]),
                          cfg.aug, cfg.consolidation,
                          derive_seed(seed, "consolidate/" + std::to_string(step)), &creport);
    art.consolidation_reports.push_back(creport);
    art.cl_snapshots.push_back(current);
    evaluate_row(art.matrix, current, stream, step);
  }
  art.final_model = current;
  return art;
}

RunArtifacts naive_finetune_baseline(const std::vector<Experience>& stream,
                                     const SchemeConfig& cfg, std::uint64_t seed) {
  check_stream(stream);
  validate_arch(cfg.arch);

  RunArtifacts art;
  Model<float> model = build_model<float>(cfg.arch, derive_seed(seed, "f0"), true);
  for (std::size_t idx = 0; idx < stream.size(); ++idx) {
    const Experience& exp = stream[idx];
    const int step = int(idx) + 1;
    attach_head(model, zero_head(cfg.arch, exp.task_id, exp.classes));
    train_on_experience(model, exp, cfg.adapt,
                        derive_seed(seed, "finetune/" + std::to_string(step)));
    art.cl_snapshots.push_back(model.clone(false));
    evaluate_row(art.matrix, art.cl_snapshots.back(), stream, step);
  }
  art.final_model = model.clone(false);
  return art;
}

}  // namespace daclab
