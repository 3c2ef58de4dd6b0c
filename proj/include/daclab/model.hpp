#pragma once

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "daclab/arch.hpp"
#include "daclab/rng.hpp"
#include "daclab/tensor.hpp"

namespace daclab {

template <class T>
struct Head {
  int task_id = 0;
  ParameterSet<T> params;      // "w" (classes x feat), "b" (classes)
  std::vector<int> classes;    // global label ids, |classes| == arch.head_width
};

// Shared backbone plus per-task linear heads. Values semantics; one worker
// touches a given instance at a time.
template <class T>
struct Model {
  ArchSpec arch;
  ParameterSet<T> backbone;
  std::vector<Head<T>> heads;  // strictly increasing task ids

  const Head<T>* find_head(int task_id) const {
    for (const auto& h : heads)
      if (h.task_id == task_id) return &h;
    return nullptr;
  }
  Head<T>* find_head(int task_id) {
    for (auto& h : heads)
      if (h.task_id == task_id) return &h;
    return nullptr;
  }

  std::vector<int> task_ids() const {
    std::vector<int> ids;
    for (const auto& h : heads) ids.push_back(h.task_id);
    return ids;
  }

  void set_requires_grad(bool rg) {
    ParameterSet<T> bb = backbone.clone(rg);
    backbone = std::move(bb);
    for (auto& h : heads) h.params = h.params.clone(rg);
  }

  Model clone(bool requires_grad) const {
    Model out;
    out.arch = arch;
    out.backbone = backbone.clone(requires_grad);
    for (const auto& h : heads) out.heads.push_back({h.task_id, h.params.clone(requires_grad), h.classes});
    return out;
  }
};

// A trained single-task model as exchanged over the DCL protocol.
template <class T>
struct SCModel {
  Model<T> model;

  SCModel() = default;
  explicit SCModel(Model<T> m) : model(std::move(m)) {
    if (model.heads.size() != 1)
      throw std::invalid_argument("sc model: expected exactly one head, got " +
                                  std::to_string(model.heads.size()));
  }
  int task_id() const { return model.heads.at(0).task_id; }
  const std::vector<int>& classes() const { return model.heads.at(0).classes; }
};

namespace detail {

template <class T>
Tensor<T> init_tensor(std::vector<std::size_t> shape, std::size_t fan_in, RandomStream rng,
                      bool requires_grad) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  T bound = T(1) / T(std::sqrt(double(fan_in)));
  std::vector<T> v(n);
  for (auto& x : v) x = T(rng.uniform(-double(bound), double(bound)));
  return Tensor<T>::from_values(std::move(shape), std::move(v), requires_grad);
}

}  // namespace detail

// Backbone parameters, uniform fan-in scaled init, bit-reproducible per
// (spec, seed): each parameter draws from its own named stream.
template <class T>
ParameterSet<T> build_backbone(const ArchSpec& spec, std::uint64_t seed,
                               bool requires_grad = true) {
  validate_arch(spec);
  RandomStream root(seed, "model_init");
  ParameterSet<T> params;
  auto add = [&](const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in) {
    params.insert(name, detail::init_tensor<T>(std::move(shape), fan_in, root.derive(name),
                                               requires_grad));
  };
  if (spec.kind == ArchSpec::Kind::mlp) {
    std::size_t in = std::size_t(spec.input_dim());
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      std::size_t out = std::size_t(spec.hidden[i]);
      std::string base = "fc" + std::to_string(i + 1);
      add(base + ".w", {out, in}, in);
      add(base + ".b", {out}, in);
      in = out;
    }
  } else {
    std::size_t c1 = std::size_t(spec.hidden[0]), c2 = std::size_t(spec.hidden[1]);
    std::size_t dense = std::size_t(spec.hidden[2]);
    std::size_t cin = std::size_t(spec.in_c);
    add("conv1.w", {c1, cin, 3, 3}, cin * 9);
    add("conv1.b", {c1}, cin * 9);
    add("conv2.w", {c2, c1, 3, 3}, c1 * 9);
    add("conv2.b", {c2}, c1 * 9);
    std::size_t flat = c2 * std::size_t(spec.in_h / 4) * std::size_t(spec.in_w / 4);
    add("fc1.w", {dense, flat}, flat);
    add("fc1.b", {dense}, flat);
  }
  return params;
}

template <class T>
Head<T> build_head(const ArchSpec& spec, std::uint64_t seed, int task_id,
                   std::vector<int> classes, bool requires_grad = true) {
  if (int(classes.size()) != spec.head_width)
    throw std::invalid_argument("head: class list size " + std::to_string(classes.size()) +
                                " != head width " + std::to_string(spec.head_width));
  std::size_t feat = tap_feature_width(spec, penultimate_tap(spec));
  RandomStream root(seed, "head_init/" + std::to_string(task_id));
  Head<T> head;
  head.task_id = task_id;
  head.classes = std::move(classes);
  head.params.insert("w", detail::init_tensor<T>({std::size_t(spec.head_width), feat}, feat,
                                                 root.derive("w"), requires_grad));
  head.params.insert("b", detail::init_tensor<T>({std::size_t(spec.head_width)}, feat,
                                                 root.derive("b"), requires_grad));
  return head;
}

template <class T>
Model<T> build_model(const ArchSpec& spec, std::uint64_t seed, bool requires_grad = true) {
  Model<T> m;
  m.arch = spec;
  m.backbone = build_backbone<T>(spec, seed, requires_grad);
  return m;
}

// Head ids must arrive strictly increasing; existing heads are untouched.
template <class T>
void attach_head(Model<T>& model, Head<T> head) {
  if (int(head.classes.size()) != model.arch.head_width)
    throw std::invalid_argument("attach_head: class list size " +
                                std::to_string(head.classes.size()) + " != head width " +
                                std::to_string(model.arch.head_width));
  if (!model.heads.empty()) {
    if (model.find_head(head.task_id))
      throw std::invalid_argument("attach_head: duplicate task id " +
                                  std::to_string(head.task_id));
    if (head.task_id <= model.heads.back().task_id)
      throw std::invalid_argument("attach_head: task id " + std::to_string(head.task_id) +
                                  " not greater than existing " +
                                  std::to_string(model.heads.back().task_id));
  }
  model.heads.push_back(std::move(head));
}

struct HeadSelect {
  bool all = true;
  int task_id = -1;
  static HeadSelect All() { return {true, -1}; }
  static HeadSelect Task(int id) { return {false, id}; }
};

template <class T>
struct ForwardResult {
  std::vector<std::pair<int, Tensor<T>>> logits;  // (task_id, logits) in head order
  std::map<std::string, Tensor<T>> taps;          // backbone taps, flattened (B, feat)

  const Tensor<T>& logits_for(int task_id) const {
    for (const auto& [id, t] : logits)
      if (id == task_id) return t;
    throw std::invalid_argument("forward result: no logits for task " + std::to_string(task_id));
  }
};

// One backbone pass; logits per selected head; activations recorded at
// exactly the requested taps ("logits" entries are returned through `logits`,
// not `taps`). The two-argument form records the arch's default taps.
template <class T>
ForwardResult<T> forward(const Model<T>& model, const Tensor<T>& x, HeadSelect select,
                         const std::vector<std::string>& tap_request) {
  const ArchSpec& spec = model.arch;
  std::size_t B;
  Tensor<T> input = x;
  if (x.shape().size() == 4) {
    if (x.shape()[1] != std::size_t(spec.in_c) || x.shape()[2] != std::size_t(spec.in_h) ||
        x.shape()[3] != std::size_t(spec.in_w))
      throw std::invalid_argument("forward: input " + shape_str(x.shape()) +
                                  " does not match arch input " + std::to_string(spec.in_c) +
                                  "x" + std::to_string(spec.in_h) + "x" +
                                  std::to_string(spec.in_w));
    B = x.shape()[0];
  } else if (x.shape().size() == 2 && spec.kind == ArchSpec::Kind::mlp) {
    if (x.shape()[1] != std::size_t(spec.input_dim()))
      throw std::invalid_argument("forward: input " + shape_str(x.shape()) +
                                  " does not match flat dim " +
                                  std::to_string(spec.input_dim()));
    B = x.shape()[0];
  } else {
    throw std::invalid_argument("forward: unsupported input shape " + shape_str(x.shape()));
  }

  const std::vector<std::string>& taps = tap_request;
  auto known = backbone_tap_names(spec);
  for (const auto& t : taps)
    if (t != "logits" && std::find(known.begin(), known.end(), t) == known.end())
      throw std::invalid_argument("forward: tap '" + t + "' does not name a layer");
  auto wants = [&](const std::string& name) {
    return std::find(taps.begin(), taps.end(), name) != taps.end();
  };

  ForwardResult<T> out;
  Tensor<T> h;
  if (spec.kind == ArchSpec::Kind::mlp) {
    h = input.shape().size() == 2 ? input : reshape(input, {B, std::size_t(spec.input_dim())});
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      std::string base = "fc" + std::to_string(i + 1);
      h = relu(add(linear(h, model.backbone.at(base + ".w")), model.backbone.at(base + ".b")));
      if (wants(base)) out.taps.emplace(base, h);
    }
  } else {
    if (input.shape().size() != 4)
      throw std::invalid_argument("forward: smallcnn needs (B,C,H,W) input, got " +
                                  shape_str(input.shape()));
    auto a1 = maxpool2d(
        relu(add(conv2d(input, model.backbone.at("conv1.w"), 1, Padding::same),
                 model.backbone.at("conv1.b"))),
        2);
    if (wants("conv1")) out.taps.emplace("conv1", reshape(a1, {B, a1.numel() / B}));
    auto a2 = maxpool2d(
        relu(add(conv2d(a1, model.backbone.at("conv2.w"), 1, Padding::same),
                 model.backbone.at("conv2.b"))),
        2);
    if (wants("conv2")) out.taps.emplace("conv2", reshape(a2, {B, a2.numel() / B}));
    auto flat = reshape(a2, {B, a2.numel() / B});
    h = relu(add(linear(flat, model.backbone.at("fc1.w")), model.backbone.at("fc1.b")));
    if (wants("fc1")) out.taps.emplace("fc1", h);
  }

  auto head_logits = [&](const Head<T>& head) {
    return add(linear(h, head.params.at("w")), head.params.at("b"));
  };
  if (select.all) {
    for (const auto& head : model.heads) out.logits.emplace_back(head.task_id, head_logits(head));
  } else {
    const Head<T>* head = model.find_head(select.task_id);
    if (!head)
      throw std::invalid_argument("forward: unknown task id " + std::to_string(select.task_id));
    out.logits.emplace_back(head->task_id, head_logits(*head));
  }
  return out;
}

template <class T>
ForwardResult<T> forward(const Model<T>& model, const Tensor<T>& x, HeadSelect select) {
  return forward(model, x, select, effective_taps(model.arch));
}

}  // namespace daclab
